"""Command line front end.

Subcommands: gen-data, train, sample, eval, sweep, ablate, replay. Every
subcommand writes ``<output>.manifest.json`` next to its main output, holding
the resolved configuration, input/output checksums and the argv needed to
rerun it (``genplanner replay <manifest>``).

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .dataset import (
    TABLE1_PRESETS,
    DatasetConfig,
    DatasetFormatError,
    InfeasibleDatasetError,
    build_dataset,
    read_dataset,
    encode_condition,
)
from .evaluation import (
    CHANNEL_SUBSETS,
    DEFAULT_STEPS,
    TABLE4_STEPS,
    EvaluationError,
    conditioning_ablation,
    evaluate,
    format_table,
    steps_sweep,
)
from .maze import DEFAULT_WALL_PROB
from .metrics import sample_metrics
from .model import CheckpointError, ConfigError, VariantError, load_checkpoint, save_checkpoint
from .noise import make_schedule
from .render import render, save_png
from .samplers import NumericalError, binarize, ddim_sample, euler_sample
from .training import TrainConfig, train

log = logging.getLogger("genplanner")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
VARIANT_NAMES = {"diff": "diffusion-eps", "flow": "flow-velocity", "cnn": "baseline"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(target, subcommand: str, args: argparse.Namespace, inputs=(), outputs=(), extra=None) -> Path:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "argv")}
    manifest = {
        "tool": "genplanner",
        "version": __version__,
        "subcommand": subcommand,
        "argv": args.argv,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = Path(f"{target}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _steps_list(text: str) -> list[int]:
    try:
        steps = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid step list {text!r}")
    if not steps or min(steps) < 1:
        raise argparse.ArgumentTypeError("step counts must be positive integers")
    return steps


def _channel_list(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [n for n in names if n not in CHANNEL_SUBSETS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown channel subsets {bad}; choose from {sorted(CHANNEL_SUBSETS)}")
    return names


def _eval_split(path, split: str):
    dataset = read_dataset(path)
    instances = {"eval": dataset.eval, "train": dataset.train, "all": dataset.instances}[split]
    if not instances:
        raise UsageError(f"{path}: the {split} split is empty")
    return dataset, instances


def cmd_gen_data(args) -> None:
    preset = TABLE1_PRESETS.get(args.size)
    train_count = args.train if args.train is not None else (preset[0] if preset else None)
    eval_count = args.eval if args.eval is not None else (preset[1] if preset else None)
    min_len = args.min_path_len if args.min_path_len is not None else (preset[2] if preset else 1)
    if train_count is None or eval_count is None:
        raise UsageError(f"no preset for size {args.size}; pass --train and --eval")
    try:
        config = DatasetConfig(args.size, train_count, eval_count, min_len, args.wall_prob, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    dataset = build_dataset(config, args.out)
    lengths = [inst.path_cells - 1 for inst in dataset.instances]
    stats = {
        "samples": len(dataset),
        "train": config.train_count,
        "eval": config.eval_count,
        "path_edges_min": int(min(lengths)),
        "path_edges_mean": float(np.mean(lengths)),
        "path_edges_max": int(max(lengths)),
    }
    write_manifest(args.out, "gen-data", args, outputs=[args.out], extra={"dataset_config": vars(config), "stats": stats})
    print(json.dumps(stats, sort_keys=True))


def _train_config(args, keep_channels=None) -> TrainConfig:
    kwargs = dict(
        variant=VARIANT_NAMES[args.variant],
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        base_channels=args.base_channels,
        depth=args.depth,
        time_embed_dim=args.time_embed_dim,
    )
    if keep_channels is not None:
        kwargs["keep_channels"] = keep_channels
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_train(args) -> None:
    dataset = read_dataset(args.data)
    config = _train_config(args, CHANNEL_SUBSETS[args.channels])
    loss_log = Path(f"{args.out}.loss.jsonl")
    net, losses = train(config, dataset, log_path=loss_log, progress=True)
    save_checkpoint(args.out, net, extra={"train_config": vars(config), "data_sha256": _sha256(args.data)})
    write_manifest(args.out, "train", args, inputs=[args.data], outputs=[args.out, loss_log],
                   extra={"train_config": vars(config), "final_loss": losses[-1]})
    print(json.dumps({"epochs": len(losses), "final_loss": losses[-1], "steps": net.step}))


def cmd_sample(args) -> None:
    net = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.maze_file)
    if not 0 <= args.maze_index < len(dataset):
        raise UsageError(f"--maze-index {args.maze_index} out of range for {len(dataset)} samples")
    inst = dataset.instances[args.maze_index]
    if inst.shape != (net.config.grid_size,) * 2:
        raise EvaluationError("checkpoint grid size does not match the maze")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cond = torch.from_numpy(encode_condition(inst))[None]
    variant = net.config.variant
    frames = []
    if variant == "baseline":
        with torch.no_grad():
            raw = net(None, cond)
    elif variant == "flow-velocity":
        trace = euler_sample(net, cond, args.steps, args.seed, record=args.dump_intermediates)
        raw, frames = trace.final, trace.intermediates
    else:
        trace = ddim_sample(net, cond, args.steps, make_schedule(net.config.schedule_T), args.seed,
                            record=args.dump_intermediates)
        raw, frames = trace.final, trace.intermediates
    mask = binarize(raw[0, 0])
    outputs = [out / "sample.png", out / "mask.npy", out / "ground_truth.png"]
    save_png(render(inst, mask, args.scale), outputs[0])
    np.save(outputs[1], mask)
    save_png(render(inst, None, args.scale), outputs[2])
    if frames:
        frame_dir = out / "frames"
        frame_dir.mkdir(exist_ok=True)
        stack = np.stack([f[0, 0].numpy() for _, f in frames])
        np.save(out / "intermediates.npy", stack)
        np.save(out / "intermediate_times.npy", np.array([t for t, _ in frames], dtype=np.float64))
        outputs += [out / "intermediates.npy", out / "intermediate_times.npy"]
        for i, (t, est) in enumerate(frames):
            frame = frame_dir / f"frame_{i:04d}.png"
            save_png(render(inst, binarize(est[0, 0]), args.scale), frame)
            outputs.append(frame)
    metrics = sample_metrics(mask, inst)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    outputs.append(out / "metrics.json")
    write_manifest(out / "sample", "sample", args, inputs=[args.checkpoint, args.maze_file], outputs=outputs)
    print(json.dumps(metrics, sort_keys=True))


def _write_reports(out, reports) -> list[Path]:
    out = Path(out)
    payload = [r.to_dict() for r in reports]
    body = payload[0] if len(payload) == 1 else {"reports": payload}
    out.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    table = Path(f"{out}.txt")
    table.write_text(format_table(reports) + "\n")
    print(format_table(reports))
    return [out, table]


def cmd_eval(args) -> None:
    net = load_checkpoint(args.checkpoint)
    _, instances = _eval_split(args.data, args.split)
    report = evaluate(net, instances, args.steps, args.seed, tag=args.tag)
    outputs = _write_reports(args.out, [report])
    write_manifest(args.out, "eval", args, inputs=[args.checkpoint, args.data], outputs=outputs)


def cmd_sweep(args) -> None:
    net = load_checkpoint(args.checkpoint)
    if net.config.variant == "baseline":
        raise UsageError("the baseline has no sampling steps to sweep")
    _, instances = _eval_split(args.data, args.split)
    reports = steps_sweep(net, instances, args.steps, args.seed, tag=args.tag)
    outputs = _write_reports(args.out, reports)
    write_manifest(args.out, "sweep", args, inputs=[args.checkpoint, args.data], outputs=outputs)


def cmd_ablate(args) -> None:
    dataset = read_dataset(args.data)
    if not dataset.eval:
        raise UsageError(f"{args.data}: the eval split is empty")
    out = Path(args.out)
    ckpt_dir = Path(f"{out}.checkpoints")
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    saved = []

    def keep(name, net, losses):
        path = ckpt_dir / f"{name}.ckpt"
        save_checkpoint(path, net, extra={"channels": name, "final_loss": losses[-1]})
        saved.append(path)

    reports = conditioning_ablation(dataset, _train_config(args), args.channels, args.steps, args.seed, on_trained=keep)
    outputs = _write_reports(out, reports) + saved
    write_manifest(out, "ablate", args, inputs=[args.data], outputs=outputs)


def cmd_replay(args) -> None:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = manifest.get("argv")
    if not argv:
        raise UsageError(f"{args.manifest} has no argv to replay")
    code = main(argv)
    if code:
        raise SystemExit(code)


def _add_model_args(p) -> None:
    p.add_argument("--variant", choices=sorted(VARIANT_NAMES), default="flow")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-channels", type=int, default=64)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--time-embed-dim", type=int, default=128)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genplanner", description="Generative path planning on grid mazes.")
    parser.add_argument("--version", action="version", version=f"genplanner {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="build a GPLN maze dataset")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--train", type=int, default=None, help="default: preset for --size")
    p.add_argument("--eval", type=int, default=None, help="default: preset for --size")
    p.add_argument("--min-path-len", type=int, default=None, help="in edges; default: preset for --size")
    p.add_argument("--wall-prob", type=float, default=DEFAULT_WALL_PROB)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a planner")
    _add_model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--channels", choices=sorted(CHANNEL_SUBSETS), default="full")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate one path and render it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--maze-file", required=True, help="GPLN file holding the maze")
    p.add_argument("--maze-index", type=int, default=0)
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=12, help="pixels per cell")
    p.add_argument("--dump-intermediates", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sample)

    for name, func, help_text in (("eval", cmd_eval, "score a checkpoint"), ("sweep", cmd_sweep, "score across step counts")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split", choices=("eval", "train", "all"), default="eval")
        if name == "eval":
            p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
        else:
            p.add_argument("--steps", type=_steps_list, default=list(TABLE4_STEPS))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tag", default=None)
        p.add_argument("--out", required=True, help="JSON report path (a .txt table is written alongside)")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="train and score one model per condition-channel subset")
    _add_model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--channels", type=_channel_list, default=list(CHANNEL_SUBSETS))
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"genplanner: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, InfeasibleDatasetError, ConfigError, CheckpointError, VariantError,
            EvaluationError, FileNotFoundError, ValueError) as exc:
        print(f"genplanner: data/config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"genplanner: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
