"""Command-line surface.

Subcommands: `basis`, `logsig`, `solve`, `train`, `grid`, `igbm`.  Global
flags `--seed`, `--config FILE`, `--out DIR` may sit before or after the
subcommand.

A config file is UTF-8 `key = value` lines with `#` comments; later keys
override earlier ones, and explicit command-line flags override the config.
Keys that match no option are kept for subcommand-specific payloads (the
`solve` field matrices).  Exit codes: 0 success, 2 usage error, 1 runtime
error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .bench import BenchmarkGrid, igbm_demo, run_grid
from .data import (
    Dataset,
    StreamCache,
    assemble,
    gen_synthetic_classification,
    load_csv,
    normalize_split,
    preprocess,
)
from .errors import DomainError
from .lyndon import BASIS_TAG, enumerate_lyndon, logsig_dim
from .model import NrdeModel, save_model
from .paths import index_partition, logsig_stream
from .solvers import LinearVectorField, OdeSolveConfig, linear_cde_reference, logode_solve
from .training import TrainConfig, evaluate, train

__all__ = ["main"]


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")


def _bool(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "on")


class _IntListAction(argparse.Action):
    """Flatten `--steps 8 32` and `--steps 8,32` to one tuple."""

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, tuple(x for part in values for x in part))


# config-file values are strings; convert per destination before set_defaults
_CONVERTERS = {
    "seed": int, "d": int, "depth": int, "step": int, "substeps": int,
    "epochs": int, "batch": int, "hidden": int, "synthetic": int,
    "length": int, "classes": int, "repeats": int, "fine": int,
    "a": float, "b": float, "sigma": float, "y0": float, "lr": float,
    "depths": _int_list, "steps": _int_list, "coarse": _int_list,
    "out": str, "data": str, "grad_mode": str, "loss": str, "metric": str,
    "header": _bool, "convergence": _bool,
}


def load_config(path: str) -> dict[str, str]:
    """`key = value` lines; `#` starts a comment; later keys override."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise DomainError(f"{path}:{lineno}: expected `key = value`")
            key, value = text.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _parse_matrix(text: str) -> np.ndarray:
    rows = [
        [float(x) for x in row.replace(",", " ").split()]
        for row in text.split(";")
    ]
    if len({len(r) for r in rows}) != 1:
        raise DomainError(f"ragged matrix rows in {text!r}")
    return np.asarray(rows, dtype=np.float64)


def field_from_config(config: dict[str, str], d: int):
    """Affine field from config keys: `y0 = ...`, `A<i> = row; row; ...` and
    `b<i> = ...` per channel i (0 is the time channel); omitted blocks are
    zero."""
    if "y0" not in config:
        raise DomainError("solve config must set y0")
    y0 = _parse_matrix(config["y0"]).ravel()
    n = y0.size
    A = np.zeros((d, n, n))
    b = np.zeros((d, n))
    for i in range(d):
        if f"A{i}" in config:
            A[i] = _parse_matrix(config[f"A{i}"])
        if f"b{i}" in config:
            b[i] = _parse_matrix(config[f"b{i}"]).ravel()
    return LinearVectorField(A, b), y0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sigode",
        description="log-signature streams, log-ODE solves, and NRDE training",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="key = value file of option defaults")
    parser.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = commands["basis"] = sub.add_parser(
        "basis", help="print the Lyndon word basis and its size"
    )
    p.add_argument("--d", type=int, required=True, help="alphabet size")
    p.add_argument("--depth", type=int, required=True)
    p.set_defaults(func=cmd_basis)

    p = commands["logsig"] = sub.add_parser(
        "logsig", help="windowed log-signature coordinates of a CSV path"
    )
    p.add_argument("input")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--header", action="store_true", default=None,
                   help="input file has a header row")
    p.set_defaults(func=cmd_logsig)

    p = commands["solve"] = sub.add_parser(
        "solve", help="log-ODE solve of an affine CDE along a CSV path"
    )
    p.add_argument("input")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--substeps", type=int, default=4)
    p.add_argument("--header", action="store_true", default=None)
    p.add_argument("--convergence", action="store_true", default=None,
                   help="also emit a step/terminal-error table")
    p.set_defaults(func=cmd_solve)

    for name in ("train", "grid"):
        p = commands[name] = sub.add_parser(
            name,
            help="train one model" if name == "train" else "depth x step benchmark",
        )
        p.add_argument("--data", help="directory with labels.csv + sample files")
        p.add_argument("--synthetic", type=int, metavar="COUNT",
                       help="generate a synthetic classification set")
        p.add_argument("--length", type=int, default=128)
        p.add_argument("--classes", type=int, default=2)
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--batch", type=int, default=32)
        p.add_argument("--hidden", type=int, default=16)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--loss", default="cross_entropy")
        if name == "train":
            p.add_argument("--depth", type=int, default=2)
            p.add_argument("--step", type=int, default=8)
            p.add_argument("--grad-mode", default="bptt",
                           choices=("bptt", "adjoint"))
            p.set_defaults(func=cmd_train)
        else:
            p.add_argument("--depths", type=_int_list, nargs="+",
                           action=_IntListAction, metavar="N", default=(1, 2))
            p.add_argument("--steps", type=_int_list, nargs="+",
                           action=_IntListAction, metavar="N", default=(8, 32))
            p.add_argument("--repeats", type=int, default=3)
            p.add_argument("--metric", default="accuracy",
                           choices=("accuracy", "loss"))
            p.set_defaults(func=cmd_grid)

    p = commands["igbm"] = sub.add_parser(
        "igbm", help="high-order vs increment-only IGBM demo"
    )
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--y0", type=float, default=1.0)
    p.add_argument("--coarse", type=_int_list, nargs="+",
                   action=_IntListAction, metavar="N", default=(25, 1000))
    p.add_argument("--fine", type=int, default=4096)
    p.add_argument("--depths", type=_int_list, nargs="+",
                   action=_IntListAction, metavar="N", default=(1, 3))
    p.add_argument("--substeps", type=int, default=4)
    p.set_defaults(func=cmd_igbm)
    return parser, commands


def cmd_basis(args, config) -> int:
    basis = enumerate_lyndon(args.d, args.depth)
    print(f"d={args.d} depth={args.depth} order={BASIS_TAG}")
    for word in basis.words:
        print("".join(str(c) for c in word))
    print(f"beta = {logsig_dim(args.d, args.depth)}")
    return 0


def cmd_logsig(args, config) -> int:
    sample = load_csv(args.input, has_header=bool(args.header))
    partition = index_partition(sample.times, args.step)
    stream = logsig_stream(sample, partition, args.depth)
    coords = stream.coord_matrix
    out = Path(args.out) / f"{Path(args.input).stem}_logsig.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r_lo", "r_hi"] + [f"c{i}" for i in range(coords.shape[1])])
        for i in range(coords.shape[0]):
            writer.writerow(
                [f"{partition[i]:.17g}", f"{partition[i + 1]:.17g}"]
                + [f"{x:.17g}" for x in coords[i]]
            )
    print(out)
    return 0


def cmd_solve(args, config) -> int:
    path = load_csv(args.input, has_header=bool(args.header))
    field, y0 = field_from_config(config, path.embedded_dim)
    solve_cfg = OdeSolveConfig(args.substeps)
    partition = index_partition(path.times, args.step)
    traj = logode_solve(field, y0, path, partition, args.depth, solve_cfg)
    stem = Path(args.input).stem
    out = Path(args.out) / f"{stem}_traj.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"y{i}" for i in range(y0.size)])
        for t, y in zip(partition, traj):
            writer.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in y])
    print(out)
    if args.convergence:
        reference = linear_cde_reference(field, y0, path)
        table = Path(args.out) / f"{stem}_convergence.csv"
        with open(table, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "terminal_abs_error"])
            step = 1
            while step <= args.step:
                part = index_partition(path.times, step)
                terminal = logode_solve(field, y0, path, part, args.depth, solve_cfg)[-1]
                err = float(np.linalg.norm(terminal - reference))
                writer.writerow([step, f"{err:.10g}"])
                step *= 2
        print(table)
    return 0


def _load_dataset(args) -> Dataset:
    if args.data is not None and args.synthetic is not None:
        raise DomainError("give either --data or --synthetic, not both")
    if args.data is not None:
        root = Path(args.data)
        samples, labels = [], []
        with open(root / "labels.csv", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                if len(row) != 2:
                    raise DomainError(
                        f"{root / 'labels.csv'}:{lineno}: expected `file,label`"
                    )
                samples.append(load_csv(str(root / row[0])))
                labels.append(int(row[1]))
        return Dataset(samples=samples, labels=np.asarray(labels))
    if args.synthetic is not None:
        return gen_synthetic_classification(
            args.synthetic, args.length, args.classes, args.seed
        )
    raise DomainError("need a data source: --data DIR or --synthetic COUNT")


def cmd_train(args, config) -> int:
    dataset = normalize_split(_load_dataset(args), seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = StreamCache(str(out_dir / "cache"))
    streams = preprocess(dataset, args.depth, args.step, cache)
    splits = {k: assemble(dataset, streams, k) for k in ("train", "val", "test")}
    model = NrdeModel(
        dataset.channels + 1, args.hidden, int(dataset.labels.max()) + 1,
        args.depth, args.step, seed=args.seed,
    )
    cfg = TrainConfig(
        batch_size=args.batch, max_epochs=args.epochs, seed=args.seed,
        lr=args.lr, grad_mode=args.grad_mode, loss_kind=args.loss,
    )
    history = train(model, splits["train"], splits["val"], cfg)
    loss, acc = evaluate(model, splits["test"], args.loss)
    save_model(model, str(out_dir / "model.bin"))
    history.to_csv(str(out_dir / "history.csv"))
    print(f"epochs={len(history.records)} best_val={history.best_val_loss:.6g}")
    if acc is None:
        print(f"test_loss={loss:.6g}")
    else:
        print(f"test_loss={loss:.6g} test_acc={acc:.4f}")
    return 0


def cmd_grid(args, config) -> int:
    dataset = normalize_split(_load_dataset(args), seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = BenchmarkGrid(args.depths, args.steps, args.repeats, args.metric)
    cfg = TrainConfig(
        batch_size=args.batch, max_epochs=args.epochs, seed=args.seed,
        lr=args.lr, loss_kind=args.loss,
    )
    results = run_grid(
        dataset, grid, cfg, hidden_dim=args.hidden,
        cache=StreamCache(str(out_dir / "cache")),
        csv_path=str(out_dir / "grid.csv"), verbose=True,
    )
    failed = [c for c in results.cells if c.error is not None]
    for cell in failed:
        print(f"failed depth={cell.depth} step={cell.step}: {cell.error}")
    if results.best is not None:
        print(f"best depth={results.best[0]} step={results.best[1]} (val argmin)")
    print(out_dir / "grid.csv")
    return 0 if not failed else 1


def cmd_igbm(args, config) -> int:
    report = igbm_demo(
        args.a, args.b, args.sigma, args.y0,
        coarse_steps=args.coarse, fine_mesh=args.fine, seed=args.seed,
        depths=args.depths, substeps=args.substeps,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / "igbm.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["depth", "steps", "terminal", "abs_error"])
        for row in report.rows:
            writer.writerow(
                [row.depth, row.steps, f"{row.terminal:.10g}", f"{row.abs_error:.10g}"]
            )
    print(f"reference terminal = {report.reference:.10g} "
          f"(fine mesh {report.fine_mesh}, seed {report.seed})")
    for row in report.rows:
        print(f"depth {row.depth} @ {row.steps:>5} steps: "
              f"terminal {row.terminal: .8f}  error {row.abs_error:.3e}")
    print(out)
    return 0


def main(argv=None) -> int:
    try:
        # global flags are extracted first so they work on either side of the
        # subcommand; no abbreviation, so subcommand flags cannot be stolen
        pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
        pre.add_argument("--seed", type=int)
        pre.add_argument("--config")
        pre.add_argument("--out")
        known, rest = pre.parse_known_args(argv)
        config: dict[str, str] = {}
        if known.config is not None:
            config = load_config(known.config)
        parser, commands = _build_parser()
        overrides = {
            k: _CONVERTERS[k](v) for k, v in config.items() if k in _CONVERTERS
        }
        parser.set_defaults(**overrides)
        # a subparser re-applies its own defaults over the parent namespace,
        # so push the overrides down to every command as well
        for command in commands.values():
            command.set_defaults(
                **{k: v for k, v in overrides.items()
                   if any(a.dest == k for a in command._actions)}
            )
        args = parser.parse_args(rest)
        # explicit flag > config file > builtin default
        args.config = known.config
        args.seed = (
            known.seed if known.seed is not None else overrides.get("seed", 0)
        )
        args.out = known.out if known.out is not None else overrides.get("out", ".")
        return args.func(args, config)
    except SystemExit as exc:
        return 2 if exc.code is None else int(exc.code)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
