"""Experiment drivers: dataset-size scaling, network shrinking, the summary table."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines, dataset, lcsim, mlp
from .errors import ArchitectureTooSmall, BadSizes, DataError
from .mlp import InfidelityStats, TrainConfig

log = logging.getLogger(__name__)

METHODS = ("dnn", "rbf", "linear")
COLUMNS = (
    "method",
    "mode",
    "train_size",
    "param_count",
    "hidden_layers",
    "neurons_per_layer",
    "overparametrization",
    "mean_infidelity",
    "p5",
    "p95",
    "time_per_sample_s",
    "n_models",
    "label",
)


@dataclass
class StudyRow:
    method: str
    mode: str = "direct"
    train_size: int | None = None
    param_count: int | None = None
    hidden_layers: int | None = None
    neurons_per_layer: int | None = None
    overparametrization: float | None = None
    mean_infidelity: float = math.nan
    p5: float = math.nan
    p95: float = math.nan
    time_per_sample_s: float | None = None
    n_models: int = 1
    label: str = ""

    @classmethod
    def from_stats(cls, method: str, stats: InfidelityStats, **kw) -> "StudyRow":
        return cls(method, mean_infidelity=stats.mean, p5=stats.p5, p95=stats.p95, **kw)


@dataclass
class StudyReport:
    kind: str
    rows: list[StudyRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def curve(self, method: str, mode: str = "direct") -> list[StudyRow]:
        return [r for r in self.rows if r.method == method and r.mode == mode]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": [asdict(r) for r in self.rows], "meta": self.meta}

    def write_csv(self, target) -> None:
        """Write to a path, or to an open text stream such as stdout."""
        if hasattr(target, "write"):
            self._write(target)
        else:
            with open(target, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in self.rows:
            d = asdict(r)
            w.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c]) for c in COLUMNS])


def format_interval(mean: float, p5: float, p95: float, digits: int = 1) -> str:
    """Mean with its percentile offsets, e.g. ``(4 - 4 - 1) x 10^-4``.

    The first offset is how far p5 lies below the mean, the second is the
    signed step from the mean to p95; all three share one power of ten.
    """
    if not mean > 0:
        return f"({mean:g} - {mean - p5:g} + {p95 - mean:g})"
    e = math.floor(math.log10(mean))
    scale = 10.0 ** e
    places = max(digits - 1, 0)

    def num(x):
        s = f"{x / scale:.{places}f}"
        return "0" if float(s) == 0 else s

    up = p95 - mean
    return f"({num(mean)} - {num(mean - p5)} {'-' if up < 0 else '+'} {num(abs(up))}) x 10^{e}"


# -- timing ----------------------------------------------------------------------

def time_per_sample(fn, inputs, n: int = 1000) -> float:
    """Mean seconds per single-sample call over ``n`` calls after one warm-up pass."""
    inputs = np.asarray(inputs, dtype=float)
    if len(inputs) == 0:
        raise DataError("no inputs to time")
    picks = [inputs[i % len(inputs)][None, :] for i in range(n)]
    for x in picks[: min(n, 50)]:
        fn(x)
    t0 = time.perf_counter()
    for x in picks:
        fn(x)
    return (time.perf_counter() - t0) / n


# -- fitting tasks (top level so worker processes can run them) -----------------

def _fit_dnn(train, val, config: TrainConfig):
    model = mlp.train_direct(train, val, config)
    return mlp.DirectPredictor(model), model.meta["val_mean_infidelity"]


def _fit_rbf(train, val, kernel_name: str):
    pred = baselines.fit_direct_rbf(train, kernel_name)
    return pred, mlp.evaluate(pred, val).mean


def _fit_linear(grid, val):
    pred = baselines.fit_direct_grid(grid)
    return pred, mlp.evaluate(pred, val).mean


def _task(args):
    kind, *rest = args
    t0 = time.perf_counter()
    if kind == "dnn":
        pred, score = _fit_dnn(*rest)
    elif kind == "rbf":
        pred, score = _fit_rbf(*rest)
    else:
        pred, score = _fit_linear(*rest)
    return pred, score, time.perf_counter() - t0


def _run(tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_task, tasks))
    return [_task(t) for t in tasks]


def config_for_size(config: TrainConfig, size: int, reference: int | None, max_factor: float = 16.0) -> TrainConfig:
    """Hold the number of optimizer steps near that of a ``reference``-sized run.

    Smaller sets get proportionally more epochs (at most ``max_factor``
    times more) and validate proportionally less often.
    """
    if reference is None or size >= reference:
        return config
    factor = min(reference / size, max_factor)
    return config.replace(epochs=int(round(config.epochs * factor)), eval_every=max(1, int(round(factor))))


def grid_dataset(size: int, like) -> "dataset.Dataset":
    """Lattice dataset with the largest cube count <= ``size``, drawn like ``like``."""
    header = like.header
    device = like.device or lcsim.DeviceConfig()
    m = max(dataset.nearest_cube(size), 2)
    return dataset.generate(m**3, "grid", header.get("noise", "none"), device, header.get("seed", 0))


def scaling_study(
    train,
    val,
    test,
    sizes,
    methods=METHODS,
    seed: int = 0,
    config: TrainConfig | None = None,
    kernel_name: str = "cubic",
    max_subsets: int | None = None,
    match_steps: bool = True,
    jobs: int = 1,
) -> StudyReport:
    """Test infidelity against training-set size for each method.

    For every size the training set is cut into disjoint subsets, each
    method is fitted on each subset, and the subset model with the lowest
    validation infidelity is scored on the test set. The linear method uses
    one lattice dataset of the nearest cube size instead of subsets.
    ``max_subsets`` bounds the number of subsets fitted per size.
    """
    sizes = sorted(int(s) for s in sizes)
    if not sizes or sizes[0] < 1 or sizes[-1] > len(train):
        raise BadSizes(f"sizes {sizes} must lie in [1, {len(train)}]")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise DataError(f"unknown methods {sorted(unknown)}")
    config = (config or TrainConfig()).replace(seed=seed)
    report = StudyReport("scaling", meta={"seed": seed, "sizes": sizes, "methods": list(methods), "train_digest": train.digest()})
    for method in METHODS:
        if method not in methods:
            continue
        for size in sizes:
            if method == "linear":
                grid = grid_dataset(size, train)
                tasks = [("linear", grid, val)]
                n_train = len(grid)
            else:
                subsets = dataset.disjoint_subsets(train, size)[:max_subsets]
                if method == "dnn":
                    cfg = config_for_size(config, size, len(train) if match_steps else None)
                    tasks = [("dnn", s, val, cfg.replace(seed=seed + k)) for k, s in enumerate(subsets)]
                else:
                    tasks = [("rbf", s, val, kernel_name) for s in subsets]
                n_train = size
            results = _run(tasks, jobs)
            scores = [r[1] for r in results]
            best = int(np.argmin(scores))
            stats = mlp.evaluate(results[best][0], test)
            log.info("%s size %d: %d models, best val %.3g, test %.3g", method, size, len(results), scores[best], stats.mean)
            report.rows.append(StudyRow.from_stats(method, stats, train_size=n_train, n_models=len(results), label=str(size)))
    return report


# -- shrinking the network -----------------------------------------------------------

def shrink_architectures(hidden_layers: int, neurons: int, halvings: int, n_in: int = 3, n_out: int = 4) -> list[tuple[int, int, int]]:
    """``(layers, neurons, params)`` for k = 0..halvings with params near ``P0 / 2**k``.

    Layers and neurons both scale by ``2**(-k/3)`` (parameters grow roughly
    as layers x neurons^2), which keeps their ratio about constant; the
    neuron count is then tuned so each row lands near half the previous.
    """
    if halvings < 1:
        raise DataError("halvings must be at least 1")
    p0 = mlp.count_params_for(n_in, n_out, hidden_layers, neurons)
    rows = [(hidden_layers, neurons, p0)]
    for k in range(1, halvings + 1):
        s = 2.0 ** (-k / 3)
        layers = max(1, round(hidden_layers * s))
        target = p0 * 2.0**-k
        best = min(
            range(1, neurons + 1),
            key=lambda n: abs(math.log(mlp.count_params_for(n_in, n_out, layers, n) / target)),
        )
        params = mlp.count_params_for(n_in, n_out, layers, best)
        if not 0.4 <= params / rows[-1][2] <= 0.6:
            raise ArchitectureTooSmall(f"cannot halve {rows[-1][2]} parameters with {layers} layers")
        rows.append((layers, best, params))
    return rows


def shrink_study(best_config: TrainConfig, train, val, test, halvings: int, jobs: int = 1) -> StudyReport:
    archs = shrink_architectures(best_config.hidden_layers, best_config.neurons_per_layer, halvings)
    tasks = [("dnn", train, val, best_config.replace(hidden_layers=l, neurons_per_layer=n)) for l, n, _ in archs]
    results = _run(tasks, jobs)
    report = StudyReport("shrink", meta={"config": best_config.to_dict(), "train_digest": train.digest()})
    for (layers, neurons, params), (pred, _, _) in zip(archs, results):
        stats = mlp.evaluate(pred, test)
        report.rows.append(
            StudyRow.from_stats(
                "dnn",
                stats,
                train_size=len(train),
                param_count=params,
                hidden_layers=layers,
                neurons_per_layer=neurons,
                overparametrization=params / len(train),
            )
        )
    return report


# -- summary table ---------------------------------------------------------------------

def _param_count(predictor) -> int | None:
    if isinstance(predictor, mlp.DirectPredictor):
        return mlp.count_params(predictor.model)
    if isinstance(predictor, mlp.CompoundModel):
        return mlp.count_params(predictor.inverse)
    if isinstance(predictor, baselines.RbfDirect):
        return int(predictor.model.weights.size)
    if isinstance(predictor, baselines.GridDirect):
        return int(predictor.model.values.size)
    return None


def report_table(entries, timing_samples: int = 1000) -> StudyReport:
    """Evaluate and time ``(method, mode, predictor, data)`` entries.

    ``mode`` is ``"direct"`` (predictor maps voltages to states) or
    ``"compound"`` (predictor has ``reconstruct``). Times are single calls
    on one sample each, so they include per-call overhead as a user sees it.
    """
    report = StudyReport("table")
    for method, mode, predictor, data in entries:
        stats = mlp.evaluate(predictor, data)
        if mode == "compound":
            fn, inputs = predictor.reconstruct, data.states
        else:
            fn, inputs = predictor, data.voltages
        t = time_per_sample(fn, inputs, timing_samples)
        report.rows.append(
            StudyRow.from_stats(
                method,
                stats,
                mode=mode,
                param_count=_param_count(predictor),
                time_per_sample_s=t,
                label=format_interval(stats.mean, stats.p5, stats.p95),
            )
        )
    return report
