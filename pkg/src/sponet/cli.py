"""Command-line interface: ``sponet gen-data | train | eval | report``."""

from __future__ import annotations

import argparse
import csv
import ctypes
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("sponet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_VERSION = 1


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use the long
    flag names with ``-`` or ``_``. An optional ``version`` key must be 1."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    version = out.pop("version", str(CONFIG_VERSION))
    if version != str(CONFIG_VERSION):
        raise UsageError(f"{path}: unsupported config version {version}")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file supplying defaults for any flag")
    common.add_argument("--threads", type=_positive_int,
                        help="BLAS/OpenMP threads (default: $SPONET_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")

    p = argparse.ArgumentParser(prog="sponet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a Poisson dataset")
    g.add_argument("--nx", type=_positive_int, default=16)
    g.add_argument("--degree", type=int, choices=(1, 2), default=1)
    g.add_argument("--train", type=_nonneg_int, default=200)
    g.add_argument("--val", type=_nonneg_int, default=20)
    g.add_argument("--test", type=_nonneg_int, default=40)
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--length-scale", type=_positive_float, default=0.4)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", choices=("spon", "spon-mg"), default="spon")
    t.add_argument("--levels", type=_positive_int, default=3)
    t.add_argument("--mp-layers", type=_positive_int, default=1)
    t.add_argument("--psi-layers", type=_positive_int, default=4)
    t.add_argument("--hidden", type=_positive_int, default=16)
    t.add_argument("--k", type=_positive_float, default=None,
                   help="low-rank compression factor (default 20 for spon, 1 for spon-mg)")
    t.add_argument("--epochs", type=_positive_int, default=500)
    t.add_argument("--batch", type=_positive_int, default=4)
    t.add_argument("--lr-start", type=_positive_float, default=1e-4)
    t.add_argument("--lr-end", type=_positive_float, default=1e-6)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--seed", type=_nonneg_int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="metrics CSV path")
    t.add_argument("--plot", help="PNG of the loss curves")
    t.add_argument("--no-wallclock", action="store_true",
                   help="write 0 in the seconds column so the CSV is reproducible")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--nx-eval", type=_positive_int,
                   help="regenerate the split at this resolution and evaluate through transfers")

    r = sub.add_parser("report", parents=[common], help="parameter counts and epoch times")
    r.add_argument("--arch", nargs="+", choices=("spon", "spon-mg"), default=["spon", "spon-mg"])
    r.add_argument("--nx", nargs="+", type=_positive_int, default=[16, 32, 64])
    r.add_argument("--levels", type=_positive_int, default=3)
    r.add_argument("--mp-layers", type=_positive_int, default=1)
    r.add_argument("--psi-layers", type=_positive_int, default=4)
    r.add_argument("--hidden", type=_positive_int, default=16)
    r.add_argument("--k-spon", type=_positive_float, default=20.0)
    r.add_argument("--k-mg", type=_positive_float, default=1.0)
    r.add_argument("--samples", type=_positive_int, default=200, help="training-set size an epoch covers")
    r.add_argument("--batch", type=_positive_int, default=4)
    r.add_argument("--reps", type=_nonneg_int, default=2, help="timed steps per row (0 skips timing)")
    r.add_argument("--seed", type=_nonneg_int, default=0)
    r.add_argument("--out", required=True, help="CSV path")
    r.add_argument("--plot", help="PNG path (default: CSV path with .png)")
    return p


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = read_config_file(args.config)
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        explicit = {a.dest for a in sub._actions for s in a.option_strings
                    if any(t == s or t.startswith(s + "=") for t in argv)}
        for key, value in cfg.items():
            if key not in known:
                parser.error(f"unknown config key {key!r} for {args.command}")
            if key in explicit:
                continue
            action = known[key]
            try:
                if action.nargs == "+":
                    conv = [action.type(v) if action.type else v for v in value.split()]
                elif isinstance(action, argparse._StoreTrueAction):
                    conv = value.lower() in ("1", "true", "yes", "on")
                else:
                    conv = action.type(value) if action.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"config key {key}: {exc}")
            if action.choices is not None and conv not in action.choices and not isinstance(conv, list):
                parser.error(f"config key {key}: invalid choice {conv!r}")
            setattr(args, key, conv)
    if args.threads is None:
        env = os.environ.get("SPONET_THREADS")
        try:
            args.threads = _positive_int(env) if env else 1
        except argparse.ArgumentTypeError as exc:
            parser.error(f"SPONET_THREADS: {exc}")
    if args.command == "train" and args.lr_end > args.lr_start:
        parser.error("--lr-end must not exceed --lr-start")
    return args


def _tune_malloc() -> None:
    # Keep large temporaries out of mmap/trim churn (glibc only).
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# subcommands ----------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .dataset import generate_dataset, write_dataset

    data = generate_dataset(args.nx, args.degree, (args.train, args.val, args.test), args.seed,
                            args.length_scale)
    nbytes = write_dataset(data, args.out)
    print(f"wrote {args.out}: nx={data.n_x} degree={data.degree} dim={data.dim} "
          f"train={args.train} val={args.val} test={args.test} bytes={nbytes}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .dataset import read_dataset
    from .spon import build_model
    from .train import TrainConfig, train

    data = read_dataset(args.data)
    k = args.k if args.k is not None else (20.0 if args.arch == "spon" else 1.0)
    model_cfg = {"arch": args.arch, "nx": data.n_x, "degree": data.degree, "levels": args.levels,
                 "mp_layers": args.mp_layers, "psi_layers": args.psi_layers, "hidden": args.hidden,
                 "k": k, "seed": args.seed, "bcs": "poisson"}
    try:
        model = build_model(model_cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.arch == "spon-mg":
        log.info("hierarchy %s", "/".join(str(s.n_x) for s in model.processor.u_spaces))
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr_start=args.lr_start,
                       lr_end=args.lr_end, weight_decay=args.weight_decay, seed=args.seed)
    result = train(model, data, tcfg, checkpoint_path=args.out)
    if args.no_wallclock:
        for row in result.metrics.rows:
            row["seconds"] = 0.0
    if args.metrics:
        result.metrics.write_csv(args.metrics)
    if args.plot:
        from .plotting import plot_metrics
        plot_metrics(result.metrics, args.plot)
    last = result.metrics.rows[-1]
    print(f"params={model.num_params}")
    print(f"final_train_rel_l2={_fmt(last['train_rel_l2'])}")
    print(f"final_val_rel_l2={_fmt(last['val_rel_l2'])}")
    print(f"best_epoch={result.best_epoch}")
    return EXIT_OK


def boundary_rel_l2(pred, ref) -> float:
    """Relative L2 error over the whole boundary for FeFunction pairs."""
    from .fespace import FeFunction, boundary_l2_error
    from .mesh import SIDES

    zero = FeFunction(ref.space, np.zeros(ref.space.dim))
    num = sum(boundary_l2_error(pred, ref, t) ** 2 for t in SIDES)
    den = sum(boundary_l2_error(zero, ref, t) ** 2 for t in SIDES)
    return math.sqrt(num) / max(math.sqrt(den), 1e-14)


def evaluate_checkpoint(ckpt, data, split: str = "test", nx_eval=None) -> dict:
    from .dataset import DataError, generate_samples
    from .fespace import FeFunction, assemble_mass, build_space
    from .mesh import unit_square_mesh
    from .spon import load_model, super_resolve_dofs
    from .train import relative_l2

    try:
        model = load_model(ckpt)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint: {exc}") from exc
    f, u = data.split(split)
    if len(f) == 0:
        raise DataError(f"the {split} split is empty")
    if data.degree != model.in_space.degree:
        raise DataError(f"data degree {data.degree} does not match model degree {model.in_space.degree}")
    if nx_eval is None:
        if data.n_x != model.in_space.n_x:
            raise DataError(f"data nx={data.n_x} but model nx={model.in_space.n_x}; use --nx-eval")
        space = model.out_space
        pred = model.predict(f)
    else:
        space = build_space(unit_square_mesh(nx_eval), data.degree)
        try:
            f, u = generate_samples(space, data.split_range(split), data.seed, data.length_scale)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        pred = super_resolve_dofs(model, f, space, space)
    rel = relative_l2(pred, u, assemble_mass(space))
    bnd = [boundary_rel_l2(FeFunction(space, p), FeFunction(space, t)) for p, t in zip(pred, u)]
    return {"rel_l2": float(rel.mean()), "boundary_rel_l2": float(np.mean(bnd)), "samples": len(f),
            "nx": space.n_x, "params": model.num_params}


def cmd_eval(args) -> int:
    from .dataset import read_dataset

    data = read_dataset(args.data)
    res = evaluate_checkpoint(args.ckpt, data, args.split, args.nx_eval)
    print(f"split={args.split} nx={res['nx']} samples={res['samples']} params={res['params']}")
    print(f"{args.split}_rel_l2={_fmt(res['rel_l2'])}")
    print(f"boundary_rel_l2={_fmt(res['boundary_rel_l2'])}")
    return EXIT_OK


def time_train_step(model, batch: int, reps: int, seed: int = 0) -> float:
    """Mean seconds of one forward/backward/AdamW step on a synthetic batch."""
    from . import diffcore as dc
    from .fespace import assemble_mass
    from .train import AdamWState, adamw_step, relative_l2_loss

    rng = np.random.default_rng(seed)
    f = rng.standard_normal((batch, model.in_space.dim, 1))
    u = rng.standard_normal((batch, model.out_space.dim))
    mass = assemble_mass(model.out_space)
    params = model.parameters()
    state = AdamWState()

    def step():
        with dc.Tape() as tape:
            loss = relative_l2_loss(model.forward_tensor(dc.Tensor(f)), u, mass)
        model.zero_grad()
        tape.backward(loss)
        adamw_step(params, [p.grad for p in params], state, 1e-6)

    step()  # warm-up
    t0 = time.perf_counter()
    for _ in range(reps):
        step()
    return (time.perf_counter() - t0) / reps


def cmd_report(args) -> int:
    from .spon import build_model

    rows = []
    for nx in args.nx:
        for arch in args.arch:
            cfg = {"arch": arch, "nx": nx, "levels": args.levels, "mp_layers": args.mp_layers,
                   "psi_layers": args.psi_layers, "hidden": args.hidden, "seed": args.seed,
                   "k": args.k_spon if arch == "spon" else args.k_mg}
            try:
                model = build_model(cfg)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            if args.reps:
                sec = time_train_step(model, args.batch, args.reps, args.seed) * math.ceil(args.samples / args.batch)
            else:
                sec = float("nan")
            rows.append({"nx": nx, "arch": arch, "params": model.num_params, "sec_per_epoch": sec})
            log.info("nx=%d arch=%s params=%d sec/epoch=%.3f", nx, arch, model.num_params, sec)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nx", "arch", "params", "sec_per_epoch"])
        for r in rows:
            w.writerow([r["nx"], r["arch"], r["params"], f"{r['sec_per_epoch']:.4f}"])
    from .plotting import plot_report
    plot_path = args.plot or str(Path(args.out).with_suffix(".png"))
    plot_report(rows, plot_path)
    print(f"wrote {args.out} ({len(rows)} rows) and {plot_path}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    from threadpoolctl import threadpool_limits

    from .dataset import DataError, SolverError
    from .train import NumericalError

    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    resolved = {k: v for k, v in sorted(vars(args).items())}
    log.info("resolved config: %s", resolved)
    if not args.verbose:
        print(f"# config {resolved}", file=sys.stderr)
    _tune_malloc()
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sponet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"sponet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"sponet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
