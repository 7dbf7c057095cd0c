"""Reference regressors: RBF interpolation and trilinear lattice interpolation.

Both are used as direct models (voltages -> tau) and, paired with an
inverse regressor fitted on (state -> voltages), as compound models.
Inputs are normalized voltages ``v / 10`` throughout, matching the networks.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from . import qstate
from .errors import DimensionMismatch, DuplicateCenters, IncompleteGrid, OutOfDomain, SingularSystem, DataError
from .mlp import VOLT_SCALE

KERNELS = ("linear", "cubic", "quintic", "multiquadric", "inverse_multiquadric", "gaussian")
SHAPED = ("multiquadric", "inverse_multiquadric", "gaussian")
TIKHONOV = 1e-10
_CHUNK = 2048


def kernel(name: str, r: np.ndarray, eps: float, out: np.ndarray | None = None) -> np.ndarray:
    """Radial function of distance; ``out=r`` evaluates in place."""
    if out is None:
        out = np.array(r, dtype=float)
    elif out is not r:
        out[...] = r
    if name == "linear":
        return out
    if name == "cubic":
        return np.power(out, 3, out=out)
    if name == "quintic":
        return np.power(out, 5, out=out)
    if name in SHAPED:
        out *= eps
        np.square(out, out=out)
        if name == "gaussian":
            np.negative(out, out=out)
            return np.exp(out, out=out)
        out += 1.0
        np.sqrt(out, out=out)
        if name == "inverse_multiquadric":
            np.reciprocal(out, out=out)
        return out
    raise DataError(f"unknown kernel {name!r}")


@dataclass
class RbfModel:
    kernel: str
    shape_epsilon: float
    centers: np.ndarray  # (n_centers, input_dim)
    weights: np.ndarray  # (output_dim, n_centers)
    regularized: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {
            "kind": "rbf",
            "kernel": self.kernel,
            "shape_epsilon": self.shape_epsilon,
            "centers": self.centers.tolist(),
            "weights": self.weights.tolist(),
            "regularized": self.regularized,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RbfModel":
        return cls(d["kernel"], float(d["shape_epsilon"]), np.array(d["centers"], float), np.array(d["weights"], float), d.get("regularized", False), d.get("meta", {}))


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a @ b.T
    d *= -2.0
    d += np.sum(a * a, axis=1)[:, None]
    d += np.sum(b * b, axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return np.sqrt(d, out=d)


def _system(x: np.ndarray, name: str, eps: float) -> np.ndarray:
    r = _pairwise(x, x)
    np.fill_diagonal(r, 0.0)
    return kernel(name, r, eps, out=r)


def rbf_fit(x, y, kernel_name: str = "cubic", shape_epsilon: float | None = None) -> RbfModel:
    """Solve ``Phi a = Y`` for every output column.

    ``shape_epsilon`` defaults to the reciprocal mean nearest-neighbour
    distance between centers. If the dense solve breaks down a ``1e-10``
    ridge is added to the diagonal and the solve retried once.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(x), -1)
    if kernel_name not in KERNELS:
        raise DataError(f"unknown kernel {kernel_name!r}")
    if len(x) < 2:
        raise DataError("RBF fit needs at least two centers")
    nn, _ = cKDTree(x).query(x, k=2)
    nearest = nn[:, 1]
    if nearest.min() <= 1e-12:
        raise DuplicateCenters("two centers coincide within 1e-12")
    eps = float(shape_epsilon) if shape_epsilon is not None else 1.0 / float(nearest.mean())
    if not eps > 0:
        raise DataError("shape_epsilon must be positive")
    regularized = False
    try:
        lu = _factor(_system(x, kernel_name, eps))
    except (np.linalg.LinAlgError, ValueError):
        regularized = True
        phi = _system(x, kernel_name, eps)
        phi[np.diag_indices_from(phi)] += TIKHONOV
        try:
            lu = _factor(phi)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystem(str(exc)) from exc
    model = RbfModel(kernel_name, eps, x.copy(), np.ascontiguousarray(scipy.linalg.lu_solve(lu, y, check_finite=False).T), regularized)
    # one step of iterative refinement; the residual is formed chunk by chunk
    # so no second n x n matrix is held
    resid = y - rbf_eval(model, x)
    model.weights += scipy.linalg.lu_solve(lu, resid, check_finite=False).T
    if not np.all(np.isfinite(model.weights)):
        raise SingularSystem("RBF solve produced non-finite weights")
    return model


def _factor(phi: np.ndarray):
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        lu = scipy.linalg.lu_factor(phi, overwrite_a=True, check_finite=False)
    if not np.all(np.isfinite(lu[0])) or np.any(np.diag(lu[0]) == 0):
        raise np.linalg.LinAlgError("singular RBF system")
    return lu


def rbf_eval(model: RbfModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected input dim {model.input_dim}, got {x.shape[1]}")
    out = np.empty((len(x), model.output_dim))
    for s in range(0, len(x), _CHUNK):
        r = _pairwise(x[s : s + _CHUNK], model.centers)
        phi = kernel(model.kernel, r, model.shape_epsilon, out=r)
        out[s : s + _CHUNK] = phi @ model.weights.T
    return out[0] if single else out


def clamp_tau(tau: np.ndarray) -> np.ndarray:
    tau = np.array(tau, dtype=float)
    tau[..., :2] = np.maximum(tau[..., :2], 0.0)
    return tau


# -- trilinear lattice ----------------------------------------------------------

@dataclass
class GridModel:
    axes: tuple  # three strictly increasing knot arrays, normalized voltage units
    values: np.ndarray  # (n1, n2, n3, out)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": "grid", "axes": [a.tolist() for a in self.axes], "values": self.values.tolist(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "GridModel":
        return cls(tuple(np.array(a, float) for a in d["axes"]), np.array(d["values"], float), d.get("meta", {}))


def grid_fit(x, y) -> GridModel:
    """Lattice model from samples that cover every node of a rectilinear grid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(x), -1)
    axes = tuple(np.unique(x[:, k]) for k in range(3))
    shape = tuple(len(a) for a in axes)
    if min(shape) < 2:
        raise IncompleteGrid("each axis needs at least two knots")
    if int(np.prod(shape)) != len(x):
        raise IncompleteGrid(f"{len(x)} samples do not form a {shape} lattice")
    idx = tuple(np.searchsorted(axes[k], x[:, k]) for k in range(3))
    values = np.full(shape + (y.shape[1],), np.nan)
    values[idx] = y
    if np.isnan(values).any():
        raise IncompleteGrid("lattice has missing nodes")
    return GridModel(axes, values)


def grid_eval(model: GridModel, x) -> np.ndarray:
    """Trilinear blend of the eight enclosing nodes."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    if x.shape[1] != 3:
        raise DimensionMismatch("grid model takes three inputs")
    lo_idx, frac = [], []
    for k, axis in enumerate(model.axes):
        xk = x[:, k]
        if np.any(xk < axis[0] - 1e-12) or np.any(xk > axis[-1] + 1e-12):
            raise OutOfDomain("query outside the lattice hull")
        i = np.clip(np.searchsorted(axis, xk, side="right") - 1, 0, len(axis) - 2)
        lo_idx.append(i)
        frac.append(np.clip((xk - axis[i]) / (axis[i + 1] - axis[i]), 0.0, 1.0))
    out = np.zeros((len(x), model.values.shape[-1]))
    for cx in (0, 1):
        wx = frac[0] if cx else 1 - frac[0]
        for cy in (0, 1):
            wy = frac[1] if cy else 1 - frac[1]
            for cz in (0, 1):
                wz = frac[2] if cz else 1 - frac[2]
                node = model.values[lo_idx[0] + cx, lo_idx[1] + cy, lo_idx[2] + cz]
                out += (wx * wy * wz)[:, None] * node
    return out[0] if single else out


# -- predictors -------------------------------------------------------------------

class RbfDirect:
    def __init__(self, model: RbfModel):
        self.model = model

    def __call__(self, volts) -> np.ndarray:
        return qstate.tau_to_rho4_safe(clamp_tau(rbf_eval(self.model, np.asarray(volts, float) / VOLT_SCALE)))


class GridDirect:
    def __init__(self, model: GridModel):
        self.model = model

    def __call__(self, volts) -> np.ndarray:
        return qstate.tau_to_rho4_safe(clamp_tau(grid_eval(self.model, np.asarray(volts, float) / VOLT_SCALE)))


def fit_direct_rbf(train, kernel_name: str = "cubic", shape_epsilon: float | None = None) -> RbfDirect:
    model = rbf_fit(train.voltages / VOLT_SCALE, qstate.rho4_to_tau(train.states), kernel_name, shape_epsilon)
    model.meta = {"role": "direct", "train_digest": train.digest()}
    return RbfDirect(model)


def fit_direct_grid(grid_train) -> GridDirect:
    model = grid_fit(grid_train.voltages / VOLT_SCALE, qstate.rho4_to_tau(grid_train.states))
    model.meta = {"role": "direct", "train_digest": grid_train.digest()}
    return GridDirect(model)


class LocalLinearInverse:
    """Scattered first-order interpolation from Bloch vectors to voltages.

    Each query gets an affine map least-squares fitted to its ``k`` nearest
    training states, which reproduces any globally affine relation exactly.
    """

    def __init__(self, states, volts_norm, k: int = 8, ridge: float = 1e-9):
        self.states = np.asarray(states, dtype=float)
        self.bloch = qstate.bloch4(self.states)
        self.targets = np.asarray(volts_norm, dtype=float)
        self.k = min(k, len(self.bloch))
        self.ridge = ridge
        self.tree = cKDTree(self.bloch)

    def __call__(self, states) -> np.ndarray:
        q = qstate.bloch4(np.asarray(states, dtype=float).reshape(-1, 4))
        _, nbr = self.tree.query(q, k=self.k)
        nbr = nbr.reshape(len(q), -1)
        pts = self.bloch[nbr] - q[:, None, :]  # centered at the query
        design = np.concatenate([np.ones(pts.shape[:2] + (1,)), pts], axis=2)
        gram = np.einsum("nki,nkj->nij", design, design) + self.ridge * np.eye(4)
        rhs = np.einsum("nki,nkj->nij", design, self.targets[nbr])
        coef = np.linalg.solve(gram, rhs)
        return coef[:, 0, :]  # intercept = value at the query point

    def to_dict(self) -> dict:
        return {"kind": "local_linear", "states": self.states.tolist(), "targets": self.targets.tolist(), "k": self.k, "ridge": self.ridge}

    @classmethod
    def from_dict(cls, d: dict) -> "LocalLinearInverse":
        return cls(np.array(d["states"], float), np.array(d["targets"], float), int(d["k"]), float(d["ridge"]))


@dataclass
class BaselineCompound:
    """Inverse regressor piped through a direct baseline."""

    method: str
    inverse: object
    direct: object
    meta: dict = field(default_factory=dict)

    def normalized_voltages(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float).reshape(-1, 4)
        if isinstance(self.inverse, RbfModel):
            u = rbf_eval(self.inverse, states)
        else:
            u = self.inverse(states)
        return np.clip(u, 0.0, 1.0)

    def voltages(self, states) -> np.ndarray:
        return VOLT_SCALE * self.normalized_voltages(states)

    def reconstruct(self, states) -> np.ndarray:
        return self.direct(self.voltages(states))

    def to_dict(self) -> dict:
        return {
            "kind": "baseline_compound",
            "method": self.method,
            "inverse": self.inverse.to_dict(),
            "direct": self.direct.model.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineCompound":
        inv = d["inverse"]
        inverse = RbfModel.from_dict(inv) if inv["kind"] == "rbf" else LocalLinearInverse.from_dict(inv)
        return cls(d["method"], inverse, direct_predictor(d["direct"]), d.get("meta", {}))


def direct_predictor(d: dict):
    """Wrap a serialized direct baseline (rbf or grid) as a voltages -> state predictor."""
    if d.get("kind") == "rbf":
        return RbfDirect(RbfModel.from_dict(d))
    if d.get("kind") == "grid":
        return GridDirect(GridModel.from_dict(d))
    raise DataError(f"not a direct baseline (kind={d.get('kind')!r})")


def fit_inverse_baseline(method: str, train, direct_baseline, kernel_name: str = "cubic", shape_epsilon: float | None = None) -> BaselineCompound:
    """``method`` is ``"rbf"`` or ``"grid"``; ``train`` holds (state, voltage) pairs."""
    u = train.voltages / VOLT_SCALE
    if method == "rbf":
        inv = rbf_fit(train.states, u, kernel_name, shape_epsilon)
        inv.meta = {"role": "inverse", "train_digest": train.digest()}
    elif method == "grid":
        inv = LocalLinearInverse(train.states, u)
    else:
        raise DataError(f"unknown baseline method {method!r}")
    return BaselineCompound(method, inv, direct_baseline)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path):
    d = json.loads(Path(path).read_text())
    kind = d.get("kind")
    if kind == "rbf":
        return RbfModel.from_dict(d)
    if kind == "grid":
        return GridModel.from_dict(d)
    if kind == "baseline_compound":
        return BaselineCompound.from_dict(d)
    raise DataError(f"{path}: not a baseline model (kind={kind!r})")
