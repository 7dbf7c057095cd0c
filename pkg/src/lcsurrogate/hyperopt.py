"""Box-constrained derivative-free minimization by mesh-adaptive direct search.

The search runs in the unit cube. Each variable is mapped affinely (or
affinely in log space) onto ``[0, 1]``, so a single scalar mesh size works
for all of them. Every iteration polls the incumbent along ``2n`` directions
``+-q_k`` taken from a freshly seeded random orthogonal basis; integer
variables also get unit moves once the mesh is finer than one step.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import mlp
from .errors import DataError, EmptySpace
from .mlp import TrainConfig

log = logging.getLogger(__name__)

KINDS = ("integer", "continuous", "log_continuous")
INITIAL_MESH = 0.5
MIN_MESH = 1e-6


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown variable kind {self.kind!r}")
        if not self.lower < self.upper:
            raise EmptySpace(f"{self.name}: lower bound must be below upper bound")
        if self.kind == "integer" and (self.lower != int(self.lower) or self.upper != int(self.upper)):
            raise DataError(f"{self.name}: integer bounds must be integral")
        if self.kind == "log_continuous" and self.lower <= 0:
            raise DataError(f"{self.name}: log scale needs a positive lower bound")

    def decode(self, u: float):
        u = min(max(u, 0.0), 1.0)
        if self.kind == "log_continuous":
            lo, hi = math.log(self.lower), math.log(self.upper)
            return min(max(math.exp(lo + u * (hi - lo)), self.lower), self.upper)
        x = self.lower + u * (self.upper - self.lower)
        if self.kind == "integer":
            return int(min(max(round(x), self.lower), self.upper))
        return min(max(x, self.lower), self.upper)

    def encode(self, x) -> float:
        if self.kind == "log_continuous":
            lo, hi = math.log(self.lower), math.log(self.upper)
            return (math.log(x) - lo) / (hi - lo)
        return (x - self.lower) / (self.upper - self.lower)


@dataclass(frozen=True)
class SearchSpace:
    variables: tuple[Variable, ...]

    def __post_init__(self):
        if not self.variables:
            raise EmptySpace("search space has no variables")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DataError("duplicate variable names")

    @classmethod
    def of(cls, *specs) -> "SearchSpace":
        """Build from ``(name, kind, lower, upper)`` tuples."""
        return cls(tuple(Variable(*s) for s in specs))

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def dim(self) -> int:
        return len(self.variables)

    def decode(self, u) -> dict:
        return {v.name: v.decode(float(x)) for v, x in zip(self.variables, u)}

    def encode(self, point: dict) -> np.ndarray:
        return np.array([v.encode(point[v.name]) for v in self.variables])

    def contains(self, point: dict) -> bool:
        for v in self.variables:
            x = point[v.name]
            if not v.lower <= x <= v.upper:
                return False
            if v.kind == "integer" and x != int(x):
                return False
        return True


@dataclass(frozen=True)
class Evaluation:
    index: int
    point: dict
    value: float
    mesh_size: float


@dataclass
class SearchTrace:
    space: SearchSpace
    evaluations: list[Evaluation] = field(default_factory=list)
    best_point: dict | None = None
    best_value: float = math.inf
    final_mesh: float = INITIAL_MESH

    def incumbent_values(self) -> list[float]:
        out, best = [], math.inf
        for e in self.evaluations:
            best = min(best, e.value)
            out.append(best)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eval_index", *self.space.names, "objective", "mesh_size"])
            for e in self.evaluations:
                w.writerow([e.index, *(e.point[n] for n in self.space.names), repr(e.value), repr(e.mesh_size)])


def _key(point: dict) -> tuple:
    # quantized so float noise from encode/decode does not defeat the cache
    return tuple((k, v if isinstance(v, int) else round(v, 12)) for k, v in point.items())


def _orthogonal_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    q = q * np.sign(np.diag(r))
    return np.concatenate([q.T, -q.T])


def _integer_neighbours(space: SearchSpace, point: dict, mesh: float) -> list[dict]:
    """+-1 moves on integer variables whose mesh step has shrunk below one unit.

    Rounding would otherwise map every poll back onto the incumbent, so the
    integer coordinates keep a granularity of one.
    """
    out = []
    for v in space.variables:
        if v.kind != "integer" or mesh * (v.upper - v.lower) >= 1:
            continue
        for step in (-1, 1):
            x = point[v.name] + step
            if v.lower <= x <= v.upper:
                out.append({**point, v.name: x})
    return out


def _better(a: float, b: float, ta: float, tb: float) -> bool:
    """Is (a, ta) strictly preferable to (b, tb)? Near-equal values fall to the tiebreak."""
    if math.isinf(a) and math.isinf(b):
        return False
    if abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b)):
        return ta < tb
    return a < b


def mads_minimize(
    objective: Callable[[dict], float],
    space: SearchSpace,
    budget: int,
    seed: int = 0,
    tiebreak: Callable[[dict], float] | None = None,
    jobs: int = 1,
) -> tuple[dict, SearchTrace]:
    """Minimize ``objective`` over ``space`` using at most ``budget`` evaluations.

    Polls are complete: all poll points of an iteration are evaluated (in
    parallel when ``jobs > 1``) before the incumbent moves, which keeps the
    trace independent of scheduling. A successful poll doubles the mesh size
    up to the box width, a failed one halves it.
    """
    if budget < 1:
        raise DataError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    tiebreak = tiebreak or (lambda p: 0.0)
    trace = SearchTrace(space)
    cache: dict[tuple, float] = {}
    mesh = INITIAL_MESH
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None

    def safe(point):
        try:
            value = float(objective(point))
        except (ArithmeticError, ValueError, FloatingPointError) as exc:
            log.warning("objective failed at %s: %s", point, exc)
            return math.inf
        return value if math.isfinite(value) else math.inf

    def run(points):
        fresh = []
        for p in points:
            k = _key(p)
            if k not in cache and k not in {_key(q) for q in fresh}:
                fresh.append(p)
        fresh = fresh[: budget - len(trace.evaluations)]
        values = list(pool.map(safe, fresh)) if pool else [safe(p) for p in fresh]
        for p, v in zip(fresh, values):
            cache[_key(p)] = v
            trace.evaluations.append(Evaluation(len(trace.evaluations), p, v, mesh))
        return [(p, cache[_key(p)]) for p in points if _key(p) in cache]

    try:
        u = np.full(space.dim, 0.5)
        best = space.decode(u)
        (best, value), = run([best])
        u = space.encode(best)
        while len(trace.evaluations) < budget and mesh >= MIN_MESH:
            polls = [space.decode(np.clip(u + mesh * d, 0.0, 1.0)) for d in _orthogonal_directions(rng, space.dim)]
            polls += _integer_neighbours(space, best, mesh)
            improved = False
            for p, v in run(polls):
                if _better(v, value, tiebreak(p), tiebreak(best)):
                    best, value, improved = p, v, True
            if improved:
                u = space.encode(best)
                mesh = min(2 * mesh, 1.0)
            else:
                mesh /= 2
    finally:
        if pool:
            pool.shutdown()
    trace.best_point, trace.best_value, trace.final_mesh = best, value, mesh
    return best, trace


# -- hyperparameter tuning of the direct network -------------------------------

def default_space() -> SearchSpace:
    return SearchSpace.of(
        ("hidden_layers", "integer", 1, 12),
        ("neurons_per_layer", "integer", 8, 128),
        ("batch_size", "integer", 32, 1024),
        ("learning_rate", "log_continuous", 1e-4, 1e-2),
        ("dropout_rate", "continuous", 0.0, 0.5),
    )


@dataclass
class TuneResult:
    config: TrainConfig
    trace: SearchTrace
    model: mlp.MlpModel | None = None


def tune_training(
    space: SearchSpace | None,
    train,
    val,
    budget: int,
    seed: int = 0,
    base: TrainConfig | None = None,
    search_epochs: int | None = None,
    retrain: bool = True,
    jobs: int = 1,
) -> TuneResult:
    """Search training hyperparameters on validation mean infidelity.

    Candidates train for ``search_epochs`` (default: a tenth of the base
    epochs, at least 5); the winner is retrained at the full epoch count.
    Equal objectives prefer the smaller network.
    """
    space = space or default_space()
    base = base or TrainConfig(seed=seed)
    if len(train) == 0 or len(val) == 0:
        raise DataError("tuning needs nonempty train and validation sets")
    unknown = set(space.names) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise DataError(f"not training parameters: {sorted(unknown)}")
    search_epochs = search_epochs or max(5, base.epochs // 10)

    def configure(point: dict, epochs: int) -> TrainConfig:
        return base.replace(**point, epochs=epochs)

    def objective(point):
        model = mlp.train_direct(train, val, configure(point, search_epochs))
        return model.meta["val_mean_infidelity"]

    def size(point):
        c = configure(point, 1)
        return mlp.count_params_for(3, 4, c.hidden_layers, c.neurons_per_layer)

    best, trace = mads_minimize(objective, space, budget, seed, tiebreak=size, jobs=jobs)
    config = configure(best, base.epochs)
    model = mlp.train_direct(train, val, config) if retrain else None
    return TuneResult(config, trace, model)
