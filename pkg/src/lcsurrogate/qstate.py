"""Qubit state algebra.

States travel through the package in two forms: the small frozen
dataclasses below for single values, and ``(N, 4)`` float arrays for bulk
work. Array rows use the serialization order ``[rho00, rho01_re, rho01_im,
rho11]`` for density matrices and ``[t0, t1, t2, t3]`` for Cholesky
parameters, with ``tau = [[t0, 0], [t2 + i t3, t1]]``.

Pauli convention: sigma1 = sigma_x (D/A), sigma2 = sigma_y (R/L),
sigma3 = sigma_z (H/V), and ``|H> = (1, 0)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPhysical, ZeroTrace

CHOLESKY_JITTER = 1e-12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class DensityMatrix:
    rho00: float
    rho11: float
    rho01_re: float
    rho01_im: float

    @classmethod
    def from_matrix(cls, m) -> "DensityMatrix":
        m = np.asarray(m, dtype=complex)
        return cls(float(m[0, 0].real), float(m[1, 1].real), float(m[0, 1].real), float(m[0, 1].imag))

    @classmethod
    def from_list(cls, values) -> "DensityMatrix":
        r00, re, im, r11 = (float(x) for x in values)
        return cls(r00, r11, re, im)

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix":
        ket = np.asarray(ket, dtype=complex)
        ket = ket / np.linalg.norm(ket)
        return cls.from_matrix(np.outer(ket, ket.conj()))

    @property
    def matrix(self) -> np.ndarray:
        off = complex(self.rho01_re, self.rho01_im)
        return np.array([[self.rho00, off], [off.conjugate(), self.rho11]], dtype=complex)

    def to_list(self) -> list[float]:
        return [self.rho00, self.rho01_re, self.rho01_im, self.rho11]

    def as_array(self) -> np.ndarray:
        return np.array(self.to_list())

    @property
    def det(self) -> float:
        return self.rho00 * self.rho11 - (self.rho01_re**2 + self.rho01_im**2)

    def is_valid(self, tol: float = 1e-12) -> bool:
        return (
            self.rho00 >= -tol
            and self.rho11 >= -tol
            and abs(self.rho00 + self.rho11 - 1.0) <= tol
            and self.det >= -tol
        )

    def check(self, tol: float = 1e-12) -> "DensityMatrix":
        if not self.is_valid(tol):
            raise NonPhysical(f"not a valid qubit density matrix: {self.to_list()}")
        return self

    def conjugate(self) -> "DensityMatrix":
        return DensityMatrix(self.rho00, self.rho11, self.rho01_re, -self.rho01_im)


@dataclass(frozen=True)
class TauParams:
    t0: float
    t1: float
    t2: float
    t3: float

    @classmethod
    def from_list(cls, values) -> "TauParams":
        return cls(*(float(x) for x in values))

    def to_list(self) -> list[float]:
        return [self.t0, self.t1, self.t2, self.t3]

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.t0, 0], [complex(self.t2, self.t3), self.t1]], dtype=complex)


@dataclass(frozen=True)
class BlochVector:
    s1: float
    s2: float
    s3: float

    def to_list(self) -> list[float]:
        return [self.s1, self.s2, self.s3]

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.s1**2 + self.s2**2 + self.s3**2))


H = DensityMatrix(1.0, 0.0, 0.0, 0.0)
V = DensityMatrix(0.0, 1.0, 0.0, 0.0)
MIXED = DensityMatrix(0.5, 0.5, 0.0, 0.0)


# -- bulk (N, 4) array forms -------------------------------------------------

def _rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(1, 4) if a.ndim == 1 else a


def tau_to_rho4(tau) -> np.ndarray:
    """Map Cholesky rows to trace-normalized density rows."""
    tau = np.asarray(tau, dtype=float)
    single = tau.ndim == 1
    t = _rows(tau)
    t0, t1, t2, t3 = t.T
    trace = t0 * t0 + t1 * t1 + t2 * t2 + t3 * t3
    if np.any(trace <= 1e-300):
        raise ZeroTrace("Cholesky parameters are all zero")
    # tau tau^dagger = [[t0^2, t0 c*], [t0 c, |c|^2 + t1^2]] with c = t2 + i t3
    out = np.empty_like(t)
    out[:, 0] = t0 * t0 / trace
    out[:, 1] = t0 * t2 / trace
    out[:, 2] = -t0 * t3 / trace
    out[:, 3] = 1.0 - out[:, 0]
    return out[0] if single else out


def tau_to_rho4_safe(tau) -> np.ndarray:
    """As :func:`tau_to_rho4`, but all-zero rows map to I/2 instead of raising."""
    t = np.array(tau, dtype=float)
    rows = _rows(t)
    dead = np.sum(rows * rows, axis=1) <= 1e-300
    if np.any(dead):
        rows[dead] = [1.0, 1.0, 0.0, 0.0]
    return tau_to_rho4(t)


def tau_to_rho4_vjp(tau, grad_rho4) -> np.ndarray:
    """Pull a gradient on density rows back onto the Cholesky rows."""
    t = _rows(tau)
    g = _rows(grad_rho4)
    t0, t1, t2, t3 = t.T
    T = t0 * t0 + t1 * t1 + t2 * t2 + t3 * t3
    m00, m01r, m01i = t0 * t0, t0 * t2, -t0 * t3
    # rho11 = 1 - rho00, so its gradient folds into rho00's
    g00 = g[:, 0] - g[:, 3]
    g01r, g01i = g[:, 1], g[:, 2]
    # d(m/T) = dm/T - m dT/T^2 with dT = 2 t
    common = (g00 * m00 + g01r * m01r + g01i * m01i) / (T * T)
    out = np.empty_like(t)
    out[:, 0] = (g00 * 2 * t0 + g01r * t2 - g01i * t3) / T - 2 * t0 * common
    out[:, 1] = -2 * t1 * common
    out[:, 2] = (g01r * t0) / T - 2 * t2 * common
    out[:, 3] = (-g01i * t0) / T - 2 * t3 * common
    return out


def rho4_to_tau(rho4) -> np.ndarray:
    """Cholesky factor of ``rho + 1e-12 I``; handles rank-deficient input."""
    rho4 = np.asarray(rho4, dtype=float)
    single = rho4.ndim == 1
    r = _rows(rho4)
    a = r[:, 0] + CHOLESKY_JITTER
    d = r[:, 3] + CHOLESKY_JITTER
    l00 = np.sqrt(np.maximum(a, 0.0))
    # tau10 = conj(rho01) / l00
    t2 = r[:, 1] / l00
    t3 = -r[:, 2] / l00
    l11 = np.sqrt(np.maximum(d - (t2 * t2 + t3 * t3), 0.0))
    out = np.stack([l00, l11, t2, t3], axis=1)
    return out[0] if single else out


def fidelity4(a, b) -> np.ndarray:
    """Qubit closed form Tr(r1 r2) + 2 sqrt(det r1 det r2), clamped to [0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    overlap = a[..., 0] * b[..., 0] + a[..., 3] * b[..., 3] + 2 * (a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2])
    det_a = np.maximum(a[..., 0] * a[..., 3] - a[..., 1] ** 2 - a[..., 2] ** 2, 0.0)
    det_b = np.maximum(b[..., 0] * b[..., 3] - b[..., 1] ** 2 - b[..., 2] ** 2, 0.0)
    return np.clip(overlap + 2 * np.sqrt(det_a * det_b), 0.0, 1.0)


def purity4(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[..., 0] ** 2 + a[..., 3] ** 2 + 2 * (a[..., 1] ** 2 + a[..., 2] ** 2)


def bloch4(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.stack([2 * a[..., 1], -2 * a[..., 2], a[..., 0] - a[..., 3]], axis=-1)


def rho4_from_bloch(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(np.linalg.norm(s, axis=-1) > 1 + 1e-9):
        raise NonPhysical("Bloch vector outside the unit ball")
    return np.stack([(1 + s[..., 2]) / 2, s[..., 0] / 2, -s[..., 1] / 2, (1 - s[..., 2]) / 2], axis=-1)


def rho4_to_matrices(a) -> np.ndarray:
    a = _rows(a)
    m = np.empty((len(a), 2, 2), dtype=complex)
    m[:, 0, 0] = a[:, 0]
    m[:, 1, 1] = a[:, 3]
    m[:, 0, 1] = a[:, 1] + 1j * a[:, 2]
    m[:, 1, 0] = a[:, 1] - 1j * a[:, 2]
    return m


def matrices_to_rho4(m) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    return np.stack([m[..., 0, 0].real, m[..., 0, 1].real, m[..., 0, 1].imag, m[..., 1, 1].real], axis=-1)


def random_rho4(n: int, rng: np.random.Generator, pure: bool = False) -> np.ndarray:
    """Random states: Haar-pure, or Hilbert-Schmidt mixed."""
    if pure:
        psi = rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        return matrices_to_rho4(np.einsum("ni,nj->nij", psi, psi.conj()))
    g = rng.normal(size=(n, 2, 2)) + 1j * rng.normal(size=(n, 2, 2))
    m = g @ np.conj(np.transpose(g, (0, 2, 1)))
    m /= np.trace(m, axis1=1, axis2=2).real[:, None, None]
    return matrices_to_rho4(m)


# -- scalar API ---------------------------------------------------------------

def tau_to_rho(params: TauParams) -> DensityMatrix:
    return DensityMatrix.from_list(tau_to_rho4(np.array(params.to_list())))


def rho_to_tau(rho: DensityMatrix) -> TauParams:
    return TauParams.from_list(rho4_to_tau(rho.as_array()))


def fidelity(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    return float(fidelity4(rho1.as_array(), rho2.as_array()))


def purity(rho: DensityMatrix) -> float:
    return float(purity4(rho.as_array()))


def bloch_from_rho(rho: DensityMatrix) -> BlochVector:
    return BlochVector(*(float(x) for x in bloch4(rho.as_array())))


def rho_from_bloch(b: BlochVector) -> DensityMatrix:
    return DensityMatrix.from_list(rho4_from_bloch(np.array(b.to_list())))
