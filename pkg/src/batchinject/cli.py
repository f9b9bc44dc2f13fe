"""Command-line entry point: train / eval / ablate / gradcheck / report.

Exit codes are a stable API:
    0  success
    1  verification failure (gradcheck threshold breach)
    2  I/O problem (missing files, malformed data or checkpoints)
    3  invalid configuration
    4  diverged run
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import parse_config_file, resolve_config, write_resolved
from .errors import ConfigurationError, DataFormatError, DivergedRunError
from .experiments import g_sweep, gap_study, passive_study, read_report, render_text, write_report
from .gradcheck import gradcheck
from .metrics import evaluate
from .model import HeadSpec, build_network, small_trunk
from .tensor import BnState, Tensor, batch_norm, conv2d, global_avg_pool, linear, relu, softmax_cross_entropy
from .training import prepare_run_data, rng_stream_states, train, write_history

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_DIVERGED = 4

GRADCHECK_TOLERANCE = 1e-4


def _load_config(args):
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "out", None):
        overrides["out"] = args.out
    return resolve_config(file_values, overrides)


def _out_dir(cfg) -> Path:
    if not cfg.out_dir:
        raise ConfigurationError("out: no output directory set (config key 'out' or flag --out)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    write_resolved(out / "config.resolved", cfg)
    try:
        model, history = train(cfg)
    except DivergedRunError as exc:
        if exc.history is not None:
            write_history(out / "history.jsonl", exc.history)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    write_history(out / "history.jsonl", history)
    save_checkpoint(out / "model.ckpt", model, rng_states=rng_stream_states(cfg.seed))
    with open(out / "timing.txt", "w", encoding="utf-8") as fh:
        for r in history.epochs:
            fh.write(f"epoch {r.epoch}: {r.wall_clock:.3f}s\n")
        fh.write(f"total: {sum(r.wall_clock for r in history.epochs):.3f}s\n")
    last = history.epochs[-1]
    print(
        f"trained {cfg.epochs} epochs: train_acc={last.train_acc:.4f} "
        f"test_acc={last.test_acc:.4f} gap={last.train_acc - last.test_acc:.4f} "
        f"passive_steps={history.total_passive_steps}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.checkpoint)
    train_ds, test_ds, _ = prepare_run_data(cfg)
    dataset = train_ds if args.split == "train" else test_ds
    result = evaluate(model, dataset, cfg.eval_batch_size)
    print(f"top1={result.accuracy:.6f} loss={result.mean_loss:.6f} n={result.total}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    write_resolved(out / "config.resolved", cfg)
    runner = {"g": g_sweep, "fraction": gap_study, "passive": passive_study}[args.axis]
    report = runner(cfg, jobs=args.jobs)
    write_report(report, out / "report.json", out / "report.txt")
    sys.stdout.write(render_text(report))
    failures = sum(cell.failures for cell in report.cells)
    if failures:
        print(f"note: {failures} failed cell runs are marked in the report", file=sys.stderr)
    return EXIT_OK


def _gradcheck_suite(spec: str):
    rng = np.random.default_rng(20240901)

    def tensors(**shapes):
        return {
            name: Tensor(rng.normal(size=shape, scale=0.5), requires_grad=True)
            for name, shape in shapes.items()
        }

    cases = []

    p_lin = tensors(w=(5, 4), b=(4,))
    x_lin = Tensor(rng.normal(size=(6, 5)))
    y_lin = rng.integers(0, 4, size=6)
    cases.append(
        ("linear", p_lin, lambda: softmax_cross_entropy(linear(x_lin, p_lin["w"], p_lin["b"]), y_lin))
    )

    p_conv = tensors(k=(4, 3, 3, 3), kb=(4,), w=(4, 3), b=(3,))
    x_conv = Tensor(rng.normal(size=(2, 3, 6, 6)))
    y_conv = rng.integers(0, 3, size=2)

    def conv_closure():
        h = conv2d(x_conv, p_conv["k"], p_conv["kb"], stride=1, padding=1)
        return softmax_cross_entropy(
            linear(global_avg_pool(h), p_conv["w"], p_conv["b"]), y_conv
        )

    cases.append(("conv2d", p_conv, conv_closure))

    x_relu_data = rng.normal(size=(4, 6))
    x_relu_data[np.abs(x_relu_data) < 1e-3] = 0.25
    p_relu = {"x": Tensor(x_relu_data, requires_grad=True)}
    cases.append(
        ("relu", p_relu, lambda: softmax_cross_entropy(relu(p_relu["x"]), np.zeros(4, np.int64)))
    )

    p_bn = tensors(gamma=(5,), beta=(5,))
    p_bn["gamma"].data += 1.0
    x_bn = Tensor(rng.normal(size=(6, 5, 3, 3)))
    bn_state = BnState.initial(5, np.float64)

    def bn_closure():
        out = batch_norm(x_bn, p_bn["gamma"], p_bn["beta"], bn_state, update_running=False)
        return softmax_cross_entropy(global_avg_pool(out), np.arange(6) % 5)

    cases.append(("batch_norm", p_bn, bn_closure))

    p_sm = {"logits": Tensor(rng.normal(size=(5, 7)), requires_grad=True)}
    y_sm = rng.integers(0, 7, size=5)
    cases.append(("softmax_xent", p_sm, lambda: softmax_cross_entropy(p_sm["logits"], y_sm)))

    if spec == "full":
        p_conv2 = tensors(k=(4, 2, 3, 3), kb=(4,), w=(4, 3), b=(3,))
        x_conv2 = Tensor(rng.normal(size=(2, 2, 7, 7)))
        y_conv2 = rng.integers(0, 3, size=2)

        def strided_closure():
            h = relu(conv2d(x_conv2, p_conv2["k"], p_conv2["kb"], stride=2, padding=1))
            return softmax_cross_entropy(
                linear(global_avg_pool(h), p_conv2["w"], p_conv2["b"]), y_conv2
            )

        cases.append(("conv2d_stride2", p_conv2, strided_closure))

        net = build_network(
            small_trunk((3, 16, 16)), HeadSpec(class_count=5), None, init_seed=7, dtype=np.float64
        )
        x_net = Tensor(rng.normal(size=(4, 3, 16, 16), scale=1.0))
        y_net = rng.integers(0, 5, size=4)

        def net_closure():
            return softmax_cross_entropy(
                net.forward_active(x_net, mode="train", update_bn=False), y_net
            )

        cases.append(("small_convnet", net.params, net_closure))
    return cases


def cmd_gradcheck(args) -> int:
    fault = 2.0 if args.inject_fault else 1.0
    coords = 6 if args.spec == "full" else 20
    worst = 0.0
    for name, params, closure in _gradcheck_suite(args.spec):
        err = gradcheck(closure, params, eps=1e-5, max_coords_per_param=coords, fault_scale=fault)
        status = "ok" if err <= GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name}: max_rel_err={err:.3e} {status}")
        worst = max(worst, err)
    return EXIT_OK if worst <= GRADCHECK_TOLERANCE else EXIT_VERIFY


def cmd_report(args) -> int:
    report = read_report(args.report)
    sys.stdout.write(render_text(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchinject",
        description="Train dual-head networks with sparse passive-batch injection.",
    )
    parser.add_argument("--version", action="version", version=f"batchinject {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training session")
    p_train.add_argument("--config", required=True, help="run config file")
    p_train.add_argument("--seed", type=int, help="override the config seed")
    p_train.add_argument("--out", help="override the output directory")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True, help="config describing the dataset")
    p_eval.add_argument("--split", choices=("train", "test"), default="test")
    p_eval.add_argument("--seed", type=int, help="override the config seed")
    p_eval.set_defaults(fn=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run a multi-seed ablation study")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--axis", choices=("g", "fraction", "passive"), required=True)
    p_ablate.add_argument("--jobs", type=int, default=1, help="parallel cell runs")
    p_ablate.add_argument("--seed", type=int, help="override the config seed")
    p_ablate.add_argument("--out", help="override the output directory")
    p_ablate.set_defaults(fn=cmd_ablate)

    p_gc = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p_gc.add_argument("--spec", choices=("small", "full"), default="small")
    p_gc.add_argument(
        "--inject-fault",
        action="store_true",
        help="corrupt the analytic gradients to prove the check catches faults",
    )
    p_gc.set_defaults(fn=cmd_gradcheck)

    p_report = sub.add_parser("report", help="render a stored report as a text table")
    p_report.add_argument("--report", required=True, help="report.json path")
    p_report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergedRunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
