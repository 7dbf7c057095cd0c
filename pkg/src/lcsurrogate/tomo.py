"""Six-projection polarization tomography and maximum-likelihood reconstruction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qstate
from .errors import DataError, NoConvergence
from .qstate import DensityMatrix

LABELS = ("H", "V", "D", "A", "R", "L")

_S = 1 / np.sqrt(2)
_KETS = np.array([[1, 0], [0, 1], [_S, _S], [_S, -_S], [_S, 1j * _S], [_S, -1j * _S]], dtype=complex)
PROJECTORS = np.einsum("ja,jb->jab", _KETS, _KETS.conj())

PROB_FLOOR = 1e-15


@dataclass(frozen=True)
class CountVector:
    counts: tuple[int, ...]
    shots_per_projection: int

    def __post_init__(self):
        if len(self.counts) != 6:
            raise DataError("need six counts (H, V, D, A, R, L)")
        if self.shots_per_projection <= 0:
            raise DataError("shots_per_projection must be positive")
        if any(c < 0 or c > self.shots_per_projection for c in self.counts):
            raise DataError("counts must lie in [0, shots_per_projection]")


def _probs_from_matrix(rho: np.ndarray) -> np.ndarray:
    return np.einsum("jab,ba->j", PROJECTORS, rho).real


def projection_probs(rho) -> np.ndarray:
    """Probabilities for H, V, D, A, R, L; accepts a DensityMatrix or density rows."""
    if isinstance(rho, DensityMatrix):
        rho = rho.as_array()
    r = np.asarray(rho, dtype=float)
    # Tr(rho Pi) for each projector, written out in density-row form
    r00, re, im, r11 = np.moveaxis(r, -1, 0)
    return np.stack([r00, r11, 0.5 + re, 0.5 - re, 0.5 - im, 0.5 + im], axis=-1)


def simulate_counts(probs, shots: int, seed) -> CountVector:
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, 1.0)
    if shots < 0:
        raise DataError("shots must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    counts = rng.binomial(shots, probs)
    return CountVector(tuple(int(c) for c in counts), max(int(shots), 1))


def log_likelihood(rho: np.ndarray, freqs: np.ndarray) -> float:
    q = np.maximum(_probs_from_matrix(rho), 1e-300)
    m = freqs > 0
    return float(np.sum(freqs[m] * np.log(q[m])))


def _step_length(rho, d, freqs) -> float:
    """Exact line search for t in rho(t) ~ (I + tD) rho (I + tD).

    Along this curve every projection probability is a ratio of quadratics
    in t, so the log-likelihood slope is available in closed form. Its root
    is bracketed by doubling from t = 1 (the plain RrhoR step).
    """
    b_mat = d @ rho + rho @ d
    c_mat = d @ rho @ d
    m = freqs > 0
    f = freqs[m]
    a = _probs_from_matrix(rho)[m]
    b = _probs_from_matrix(b_mat)[m]
    c = _probs_from_matrix(c_mat)[m]
    na, nb, nc = np.trace(rho).real, np.trace(b_mat).real, np.trace(c_mat).real

    def slope(t):
        return np.sum(f * (b + 2 * t * c) / (a + t * b + t * t * c)) - (nb + 2 * t * nc) / (na + t * nb + t * t * nc)

    def value(t):
        return np.sum(f * np.log(np.maximum(a + t * b + t * t * c, 1e-300))) - np.log(na + t * nb + t * t * nc)

    if not slope(1.0) > 0:
        return 1.0
    lo, hi = 1.0, 2.0
    while slope(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > 1e15:
            return 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * hi:
            break
    t = 0.5 * (lo + hi)
    # near convergence the slope is rounding noise; only stretch on a real gain
    base = value(1.0)
    return t if value(t) > base + 1e-15 * max(1.0, abs(base)) else 1.0


def _bloch(rho: np.ndarray) -> np.ndarray:
    return np.array([2 * rho[0, 1].real, -2 * rho[0, 1].imag, (rho[0, 0] - rho[1, 1]).real])


def _parallel_tangent(rho, rho_back, freqs) -> np.ndarray:
    """Exact likelihood maximum along the chord through two earlier iterates.

    On the segment rho + s (rho - rho_back) the probabilities are affine in
    s, so the log-likelihood is concave and its slope is monotone; the
    step is capped where the segment leaves the Bloch ball.
    """
    r = _bloch(rho)
    delta = r - _bloch(rho_back)
    dd = float(delta @ delta)
    if dd < 1e-30:
        return rho
    rd = float(r @ delta)
    s_max = (-rd + np.sqrt(max(rd * rd + dd * (1 - r @ r), 0.0))) / dd
    m = freqs > 0
    f = freqs[m]
    a = _probs_from_matrix(rho)[m]
    b = _probs_from_matrix(rho - rho_back)[m]

    def slope(s):
        return np.sum(f * b / np.maximum(a + s * b, 1e-300))

    if not slope(0.0) > 0 or s_max <= 0:
        return rho
    hi = s_max * (1 - 1e-12)
    if slope(hi) > 0:
        s = hi
    else:
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if slope(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-9 * hi:
                break
        s = 0.5 * (lo + hi)
    cand = rho + s * (rho - rho_back)
    cand = (cand + cand.conj().T) / (2 * np.trace(cand).real)
    if log_likelihood(cand, freqs) > log_likelihood(rho, freqs):
        return cand
    return rho


def mle_reconstruct_freqs(
    freqs,
    max_iters: int = 1000,
    tol: float = 1e-10,
    line_search: bool = True,
    history: list | None = None,
) -> DensityMatrix:
    """RrhoR iteration from I/2 on normalized frequencies.

    With ``line_search`` the RrhoR generator is stretched to the exact
    likelihood maximum along its curve, and each step is followed by a
    parallel-tangent move along the chord to the iterate two steps back,
    which removes the zig-zag of plain ascent. ``line_search=False`` gives
    the textbook update. ``history``, if given, collects the
    log-likelihood of every iterate.
    """
    freqs = np.asarray(freqs, dtype=float)
    if freqs.shape != (6,) or np.any(freqs < 0) or freqs.sum() <= 0:
        raise DataError("need six nonnegative frequencies with a positive sum")
    freqs = freqs / freqs.sum()
    rho = np.eye(2, dtype=complex) / 2
    if history is not None:
        history.append(log_likelihood(rho, freqs))
    eye = np.eye(2)
    previous = None
    for it in range(1, max_iters + 1):
        q = np.maximum(_probs_from_matrix(rho), PROB_FLOOR)
        r_op = np.einsum("j,jab->ab", freqs / q, PROJECTORS)
        x = r_op
        if line_search:
            t = _step_length(rho, r_op - eye, freqs)
            x = eye + t * (r_op - eye)
        new = x @ rho @ x.conj().T
        new = (new + new.conj().T) / (2 * np.trace(new).real)
        if line_search and previous is not None:
            new = _parallel_tangent(new, previous, freqs)
        change = np.abs(new - rho).max()
        previous, rho = rho, new
        if history is not None:
            history.append(log_likelihood(rho, freqs))
        if change < tol:
            return DensityMatrix.from_matrix(rho)
    raise NoConvergence(f"no convergence within {max_iters} iterations", DensityMatrix.from_matrix(rho), max_iters)


def mle_reconstruct(counts: CountVector, max_iters: int = 1000, tol: float = 1e-10, line_search: bool = True) -> DensityMatrix:
    c = np.asarray(counts.counts, dtype=float)
    if c.sum() <= 0:
        raise DataError("all counts are zero")
    return mle_reconstruct_freqs(c, max_iters=max_iters, tol=tol, line_search=line_search)


def reconstruct_lenient(counts: CountVector, max_iters: int = 1000, tol: float = 1e-10) -> tuple[DensityMatrix, bool]:
    """Like :func:`mle_reconstruct` but returns the last iterate on non-convergence."""
    try:
        return mle_reconstruct(counts, max_iters, tol), True
    except NoConvergence as exc:
        return exc.state, False


def noisy_state(rho4, shots: int, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    counts = simulate_counts(projection_probs(rho4), shots, rng)
    state, ok = reconstruct_lenient(counts)
    return state.as_array(), ok


def r_operator(rho: np.ndarray, freqs) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=float)
    q = np.maximum(_probs_from_matrix(rho), PROB_FLOOR)
    return np.einsum("j,jab->ab", freqs / q, PROJECTORS)

