"""Command-line entry point: ``lcsurrogate <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Every command writes a JSON manifest (arguments, seeds, input hashes) next
to its output, or into the working directory when output goes to stdout.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, dataset, entangle, hyperopt, lcsim, mlp, studies, tomo
from .errors import DataError, NumericalError

log = logging.getLogger("lcsurrogate")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# -- helpers -----------------------------------------------------------------------

def _ints(text: str) -> list[int]:
    try:
        return [int(float(x)) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _device(args, fallback: lcsim.DeviceConfig | None = None) -> lcsim.DeviceConfig:
    # without --device, commands that read a dataset use the device recorded in it
    if args.device:
        device = lcsim.DeviceConfig.load(args.device)
    else:
        device = fallback if fallback is not None else lcsim.DeviceConfig()
    if getattr(args, "depolarization", None) is not None:
        device = device.replace(depolarization=args.depolarization)
    return device


def _train_config(args, compound: bool = False) -> mlp.TrainConfig:
    config = mlp.compound_config() if compound else mlp.TrainConfig()
    if getattr(args, "config", None):
        config = mlp.TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    changes = {"seed": args.seed}
    if getattr(args, "epochs", None):
        changes["epochs"] = args.epochs
    return config.replace(**changes)


def _default_split(n: int) -> tuple[int, int, int]:
    # 16000 / 6500 / rest of 27000, scaled to the dataset at hand
    n_train = round(n * 16000 / 27000)
    n_val = round(n * 6500 / 27000)
    return n_train, n_val, n - n_train - n_val


def _splits(args):
    data = dataset.Dataset.load(args.data)
    sizes = tuple(args.split) if args.split else _default_split(len(data))
    if len(sizes) != 3:
        raise DataError("--split needs three sizes: train,val,test")
    parts = dataset.split(data, dataset.SplitSpec(*sizes, seed=args.split_seed))
    return data, parts


def _load_predictor(path: str, device: lcsim.DeviceConfig):
    """Model file -> (predictor, mode) with mode "direct" or "compound"."""
    if path == "twin":
        return lcsim.Twin(device), "direct"
    d = json.loads(Path(path).read_text())
    kind = d.get("kind")
    if kind == "mlp":
        return mlp.DirectPredictor(mlp.MlpModel.from_dict(d)), "direct"
    if kind == "compound":
        return mlp.CompoundModel.from_dict(d), "compound"
    if kind in ("rbf", "grid"):
        return baselines.direct_predictor(d), "direct"
    if kind == "baseline_compound":
        return baselines.BaselineCompound.from_dict(d), "compound"
    raise DataError(f"{path}: unknown model kind {kind!r}")


def _write_json(obj, out) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _manifest(args, extra: dict) -> None:
    record = {
        "command": args.command,
        "version": __version__,
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": args.seed,
        "numpy": np.__version__,
        **extra,
    }
    for key in ("data", "config", "device", "direct", "compound"):
        path = getattr(args, key, None)
        if isinstance(path, str) and path != "twin" and Path(path).is_file():
            record.setdefault("inputs", {})[key] = {"path": str(path), "sha256_16": _file_digest(path)}
    target = Path(f"{args.out}.manifest.json") if args.out else Path(f"lcsurrogate-{args.command}.manifest.json")
    target.write_text(json.dumps(record, indent=2, default=str) + "\n")


# -- commands ----------------------------------------------------------------------

def cmd_gen_data(args) -> dict:
    device = _device(args)
    data = dataset.generate(args.n, args.mode, args.noise, device, args.seed)
    if not args.out:
        raise DataError("gen-data needs --out")
    data.save(args.out)
    log.info("wrote %d records to %s", len(data), args.out)
    return {"dataset_digest": data.digest(), "device": device.to_dict()}


def cmd_train_direct(args) -> dict:
    data, (train, val, test) = _splits(args)
    config = _train_config(args)
    model = mlp.train_direct(train, val, config)
    stats = mlp.evaluate(mlp.DirectPredictor(model), test) if len(test) else None
    model.meta["test"] = stats.to_dict() if stats else None
    model.meta["dataset_digest"] = data.digest()
    if not args.out:
        raise DataError("train-direct needs --out")
    model.save(args.out)
    print(json.dumps({"val_mean_infidelity": model.meta["val_mean_infidelity"], "test": model.meta["test"]}))
    return {"config": config.to_dict(), "dataset_digest": data.digest(), "weights_sha256": model.weights_digest()}


def cmd_train_compound(args) -> dict:
    data, (train, val, test) = _splits(args)
    config = _train_config(args, compound=True)
    direct = mlp.MlpModel.load(args.direct)
    compound = mlp.train_compound(direct, train, val, config)
    stats = mlp.evaluate(compound, test) if len(test) else None
    compound.meta["test"] = stats.to_dict() if stats else None
    if not args.out:
        raise DataError("train-compound needs --out")
    compound.save(args.out)
    print(json.dumps({"val_mean_infidelity": compound.inverse.meta["val_mean_infidelity"], "test": compound.meta["test"]}))
    return {"config": config.to_dict(), "dataset_digest": data.digest(), "inverse_sha256": compound.inverse.weights_digest()}


def _baseline_out(args, direct, compound_method: str | None, train) -> dict:
    if not args.out:
        raise DataError(f"{args.command} needs --out")
    if compound_method:
        comp = baselines.fit_inverse_baseline(compound_method, train, direct, args.kernel if compound_method == "rbf" else "cubic")
        _write_json(comp.to_dict(), args.out)
    else:
        _write_json(direct.model.to_dict(), args.out)
    return {"train_digest": train.digest()}


def cmd_fit_rbf(args) -> dict:
    data, (train, val, test) = _splits(args)
    if args.centers:
        train = train.take(np.arange(min(args.centers, len(train))))
    kernels = baselines.KERNELS if args.kernel == "auto" else (args.kernel,)
    best = None
    for k in kernels:
        pred = baselines.fit_direct_rbf(train, k, args.epsilon)
        score = mlp.evaluate(pred, val).mean if len(val) else 0.0
        log.info("rbf %s: validation %.3g", k, score)
        if best is None or score < best[0]:
            best = (score, k, pred)
    score, args.kernel, pred = best
    print(json.dumps({"kernel": args.kernel, "val_mean_infidelity": score}))
    return _baseline_out(args, pred, "rbf" if args.compound else None, train)


def cmd_fit_linear(args) -> dict:
    grid = dataset.Dataset.load(args.data)
    pred = baselines.fit_direct_grid(grid)
    return _baseline_out(args, pred, "grid" if args.compound else None, grid)


def cmd_eval(args) -> dict:
    if args.split or args.part != "all":
        full, parts = _splits(args)
        data = dict(zip(("train", "val", "test"), parts))[args.part]
    else:
        full = data = dataset.Dataset.load(args.data)
    predictor, _ = _load_predictor(args.model, _device(args, full.device))
    stats = mlp.evaluate(predictor, data)
    _write_json(stats.to_dict(), args.out)
    return {"dataset_digest": data.digest()}


def cmd_hyperopt(args) -> dict:
    _, (train, val, _) = _splits(args)
    base = _train_config(args)
    result = hyperopt.tune_training(
        None, train, val, args.budget, args.seed, base, args.search_epochs, retrain=False, jobs=args.jobs
    )
    _write_json(result.config.to_dict(), args.out)
    if args.trace:
        result.trace.write_csv(args.trace)
    return {"best_value": result.trace.best_value, "evaluations": len(result.trace.evaluations)}


def _study_out(report: studies.StudyReport, args) -> None:
    if args.out:
        report.write_csv(args.out)
        Path(f"{args.out}.json").write_text(json.dumps(report.to_dict(), indent=2, default=str) + "\n")
    else:
        report.write_csv(sys.stdout)


def cmd_scaling_study(args) -> dict:
    data, (train, val, test) = _splits(args)
    report = studies.scaling_study(
        train,
        val,
        test,
        args.sizes,
        args.methods.split(","),
        args.seed,
        _train_config(args),
        args.kernel,
        args.max_subsets,
        jobs=args.jobs,
    )
    _study_out(report, args)
    return {"dataset_digest": data.digest(), **report.meta}


def cmd_shrink_study(args) -> dict:
    data, (train, val, test) = _splits(args)
    report = studies.shrink_study(_train_config(args), train, val, test, args.halvings, jobs=args.jobs)
    _study_out(report, args)
    return {"dataset_digest": data.digest(), **report.meta}


def cmd_rsp_demo(args) -> dict:
    targets = entangle.parse_targets(args.targets)
    resource = entangle.parse_resource(args.resource)
    source = entangle.oracle_source
    if args.compound:
        compound, mode = _load_predictor(args.compound, _device(args))
        if mode != "compound":
            raise DataError(f"{args.compound} is not a compound model")
        twin = lcsim.Twin(_device(args))
        source = lambda t: twin(compound.voltages(t))  # noqa: E731
    report = entangle.rsp_demo(targets, resource, source)
    if args.out:
        report.write_csv(args.out)
    print(json.dumps(report.to_dict()))
    return {"summary": report.to_dict()}


def cmd_tomo(args) -> dict:
    state = tomo.mle_reconstruct(tomo.CountVector(tuple(args.counts), args.shots), args.max_iters, args.tol)
    _write_json(state.to_list(), args.out)
    return {}


def cmd_report(args) -> dict:
    full, (_, _, test) = _splits(args)
    device = _device(args, full.device)
    entries = [("twin", "direct", lcsim.Twin(device), test)]
    for method, paths in (("linear", args.linear), ("rbf", args.rbf), ("dnn", args.dnn)):
        for path in paths or ():
            predictor, mode = _load_predictor(path, device)
            entries.append((method, mode, predictor, test))
    report = studies.report_table(entries, args.timing_samples)
    _study_out(report, args)
    for r in report.rows:
        log.info("%-6s %-8s %s  %.1e s", r.method, r.mode, r.label, r.time_per_sample_s)
    return {"dataset_digest": test.digest()}


# -- parser ------------------------------------------------------------------------

def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=default(0), help="run seed")
    p.add_argument("--jobs", type=int, default=default(1), help="worker processes for studies")
    p.add_argument("--device", default=default(None), help="device.json for the digital twin")
    p.add_argument("--out", default=default(None), help="output path (stdout when omitted)")
    p.add_argument("-v", "--verbose", action="store_true", default=default(False))


def _data_args(p, split=True) -> None:
    p.add_argument("--data", required=True, help="dataset JSONL")
    if split:
        p.add_argument("--split", type=_ints, help="train,val,test sizes (default 16000:6500:rest proportions)")
        p.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcsurrogate", description="Surrogate models of a three-cell LC polarization device.")
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "generate a dataset from the digital twin")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mode", choices=("random", "grid"), default="random")
    p.add_argument("--noise", default="none", help="none or tomo:SHOTS")
    p.add_argument("--depolarization", type=float, help="override the device depolarization")

    p = command("train-direct", cmd_train_direct, "train the direct network")
    _data_args(p)
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--epochs", type=int)

    p = command("train-compound", cmd_train_compound, "train the inverse network against a frozen direct one")
    _data_args(p)
    p.add_argument("--direct", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)

    p = command("fit-rbf", cmd_fit_rbf, "fit an RBF direct model (or compound with --compound)")
    _data_args(p)
    p.add_argument("--kernel", default="cubic", choices=baselines.KERNELS + ("auto",))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--centers", type=int, help="use only the first N training records as centers")
    p.add_argument("--compound", action="store_true")

    p = command("fit-linear", cmd_fit_linear, "fit the trilinear lattice model from a grid dataset")
    _data_args(p, split=False)
    p.add_argument("--compound", action="store_true")
    p.set_defaults(kernel="cubic")

    p = command("eval", cmd_eval, "score a model file (or 'twin') on a dataset")
    _data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--part", choices=("all", "train", "val", "test"), default="all")

    p = command("hyperopt", cmd_hyperopt, "search training hyperparameters")
    _data_args(p)
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--search-epochs", type=int)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--trace", help="trace CSV path")

    p = command("scaling-study", cmd_scaling_study, "test infidelity against training-set size")
    _data_args(p)
    p.add_argument("--sizes", type=_ints, default=[250, 1000, 4000, 16000])
    p.add_argument("--methods", default="dnn,rbf,linear")
    p.add_argument("--kernel", default="cubic", choices=baselines.KERNELS)
    p.add_argument("--max-subsets", type=int)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)

    p = command("shrink-study", cmd_shrink_study, "test infidelity against network size")
    _data_args(p)
    p.add_argument("--config", help="best TrainConfig JSON")
    p.add_argument("--halvings", type=int, default=4)
    p.add_argument("--epochs", type=int)

    p = command("rsp-demo", cmd_rsp_demo, "remote state preparation over a target point set")
    p.add_argument("--resource", default="singlet", help="singlet or werner:V")
    p.add_argument("--targets", default="spiral:1024", help="spiral:N[:cap_degrees]")
    p.add_argument("--compound", help="compound model JSON; oracle projectors when omitted")

    p = command("tomo", cmd_tomo, "maximum-likelihood reconstruction from six counts")
    p.add_argument("--counts", type=_ints, required=True, help="h,v,d,a,r,l")
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-10)

    p = command("report", cmd_report, "infidelity and timing table for a set of models")
    _data_args(p)
    p.add_argument("--linear", nargs="*", help="linear model files (direct and/or compound)")
    p.add_argument("--rbf", nargs="*", help="RBF model files")
    p.add_argument("--dnn", nargs="*", help="network model files")
    p.add_argument("--timing-samples", type=int, default=1000)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        extra = args.func(args)
        _manifest(args, extra or {})
    except (DataError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
