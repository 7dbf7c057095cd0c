"""Two-qubit states and remote state preparation.

Two-qubit matrices use the basis order HH, HV, VH, VV, with qubit 1 (the
one projected by the LC device and polarizer) as the left tensor factor.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import qstate
from .errors import DataError, NonPhysical, OutOfRange, ZeroProbability
from .qstate import SIGMA_Y, DensityMatrix

WERNER_V = 0.9853
_SYSY = np.kron(SIGMA_Y, SIGMA_Y)


@dataclass(frozen=True)
class TwoQubitState:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise DataError("two-qubit state must be 4x4")
        if np.abs(m - m.conj().T).max() > 1e-12:
            raise NonPhysical("two-qubit state is not Hermitian")
        if abs(np.trace(m).real - 1) > 1e-12:
            raise NonPhysical("two-qubit state does not have unit trace")
        if np.linalg.eigvalsh(m).min() < -1e-10:
            raise NonPhysical("two-qubit state has a negative eigenvalue")
        object.__setattr__(self, "matrix", m)

    @property
    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def reduced(self, keep: int) -> DensityMatrix:
        t = self.matrix.reshape(2, 2, 2, 2)
        m = np.einsum("abcb->ac", t) if keep == 1 else np.einsum("abad->bd", t)
        return DensityMatrix.from_matrix(m)


def singlet() -> TwoQubitState:
    psi = np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2)
    return TwoQubitState(np.outer(psi, psi.conj()))


def werner(v: float) -> TwoQubitState:
    if not 0.0 <= v <= 1.0:
        raise OutOfRange(f"Werner weight must lie in [0, 1], got {v}")
    return TwoQubitState(v * singlet().matrix + (1 - v) * np.eye(4) / 4)


def werner_concurrence(v: float) -> float:
    return max(0.0, (3 * v - 1) / 2)


def werner_purity(v: float) -> float:
    return v * v + v * (1 - v) / 2 + (1 - v) ** 2 / 4


def concurrence(rho12: TwoQubitState) -> float:
    """Wootters concurrence max(0, l1 - l2 - l3 - l4)."""
    rho = rho12.matrix
    flipped = _SYSY @ rho.conj() @ _SYSY
    # the l_i are the eigenvalues of sqrt(sqrt(rho) flipped sqrt(rho)), a Hermitian form
    w, u = np.linalg.eigh(rho)
    root = (u * np.sqrt(np.clip(w, 0.0, None))) @ u.conj().T
    lam = np.sqrt(np.clip(np.linalg.eigvalsh(root @ flipped @ root), 0.0, None))[::-1]
    return float(max(0.0, lam[0] - lam[1:].sum()))


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, DensityMatrix):
        return x.matrix
    return np.asarray(x, dtype=complex)


def projector(ket) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    ket = ket / np.linalg.norm(ket)
    return np.outer(ket, ket.conj())


def remote_state(rho12: TwoQubitState, proj1, apply_correction: bool = True) -> tuple[DensityMatrix, float]:
    """Conditional state of qubit 2 after projecting qubit 1 onto ``proj1``.

    Returns the (optionally sigma_y corrected) state and the success
    probability ``Tr[rho12 (proj1 x I)]``.
    """
    p1 = _as_matrix(proj1)
    t = rho12.matrix.reshape(2, 2, 2, 2)
    # Tr_1[rho (P x I)]_{bd} = sum_{a,c} rho_{ab,cd} P_{ca}
    cond = np.einsum("abcd,ca->bd", t, p1)
    prob = float(np.trace(cond).real)
    if prob <= 1e-15:
        raise ZeroProbability("projector has zero success probability on this state")
    cond = cond / prob
    cond = (cond + cond.conj().T) / 2
    if apply_correction:
        cond = SIGMA_Y @ cond @ SIGMA_Y
    return DensityMatrix.from_matrix(cond), prob


# -- point sets ----------------------------------------------------------------

def fibonacci_bloch(n: int, cap: float = math.pi) -> np.ndarray:
    """``n`` unit Bloch vectors on a golden-angle spiral.

    Points fill the polar cap of half-angle ``cap`` around +s3 (|H>) with
    equal area per point; ``cap = pi`` covers the whole sphere.
    """
    if n < 1:
        raise DataError("need at least one point")
    k = np.arange(n) + 0.5
    z = 1 - (1 - math.cos(cap)) * k / n
    r = np.sqrt(np.clip(1 - z * z, 0.0, None))
    phi = math.pi * (3 - math.sqrt(5)) * np.arange(n)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def parse_targets(spec: str) -> np.ndarray:
    """``spiral:N`` or ``spiral:N:cap_degrees`` -> density rows."""
    parts = spec.split(":")
    if parts[0] != "spiral" or len(parts) not in (2, 3):
        raise DataError(f"unknown target set {spec!r}")
    cap = math.radians(float(parts[2])) if len(parts) == 3 else math.pi
    return qstate.rho4_from_bloch(fibonacci_bloch(int(parts[1]), cap))


def parse_resource(spec: str) -> TwoQubitState:
    """``singlet`` or ``werner:v``."""
    kind, _, arg = spec.partition(":")
    if kind == "singlet" and not arg:
        return singlet()
    if kind == "werner" and arg:
        return werner(float(arg))
    raise DataError(f"unknown resource {spec!r}")


# -- demo ----------------------------------------------------------------------

def oracle_source(targets: np.ndarray) -> np.ndarray:
    return np.asarray(targets, dtype=float)


def pure_part(rho4) -> np.ndarray:
    """Projectors onto the dominant eigenvector of each density row."""
    m = qstate.rho4_to_matrices(rho4)
    _, vecs = np.linalg.eigh(m)
    top = vecs[:, :, -1]
    return qstate.matrices_to_rho4(np.einsum("ni,nj->nij", top, top.conj()))


def overlap4(a, b) -> np.ndarray:
    """Tr(rho_a rho_b); the fidelity whenever one side is pure."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 0] + a[..., 3] * b[..., 3] + 2 * (a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2])


@dataclass
class RspRow:
    index: int
    bloch: tuple[float, float, float]
    fidelity: float
    success_probability: float
    skipped: bool = False


@dataclass
class RspReport:
    rows: list[RspRow] = field(default_factory=list)
    mean: float = math.nan
    p5: float = math.nan
    p95: float = math.nan
    skipped: int = 0

    def to_dict(self) -> dict:
        return {"mean_fidelity": self.mean, "p5": self.p5, "p95": self.p95, "n": len(self.rows), "skipped": self.skipped}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "s1", "s2", "s3", "fidelity", "success_probability"])
            for r in self.rows:
                w.writerow([r.index, *(repr(x) for x in r.bloch), repr(r.fidelity), repr(r.success_probability)])


def rsp_demo(
    targets,
    resource: TwoQubitState,
    source: Callable[[np.ndarray], np.ndarray] = oracle_source,
    apply_correction: bool = True,
) -> RspReport:
    """Prepare each target remotely and score it.

    ``source`` maps target density rows to the states the preparation
    device actually projects onto (the targets themselves for the oracle,
    or the twin's response to compound-model voltages). The projector is
    the complex conjugate of that state, which the singlet correlations
    and the sigma_y correction undo.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 4)
    if np.any(qstate.purity4(targets) < 1 - 2e-6):
        raise NonPhysical("targets must be pure")
    # score against the pure part: rounding-level determinants would otherwise
    # leak ~1e-10 into the closed-form fidelity through its square root
    targets = pure_part(targets)
    associated = pure_part(source(targets))
    projectors = qstate.rho4_to_matrices(associated).conj()
    report = RspReport()
    fids = []
    for i, (target, proj) in enumerate(zip(targets, projectors)):
        s = tuple(float(x) for x in qstate.bloch4(target))
        try:
            out, prob = remote_state(resource, proj, apply_correction)
        except ZeroProbability:
            report.rows.append(RspRow(i, s, math.nan, 0.0, True))
            report.skipped += 1
            continue
        f = float(np.clip(overlap4(target, out.as_array()), 0.0, 1.0))
        fids.append(f)
        report.rows.append(RspRow(i, s, f, prob))
    if fids:
        report.mean = float(np.mean(fids))
        report.p5, report.p95 = (float(x) for x in np.percentile(fids, [5, 95], method="hazen"))
    return report
