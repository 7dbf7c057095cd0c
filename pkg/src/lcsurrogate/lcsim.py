"""Digital twin of a three-cell twisted-nematic liquid-crystal device.

Each cell is a twisted retarder whose retardance falls off with drive
voltage along a sigmoid law. Cells are mounted at fixed orientations and
act on a horizontally polarized input, optionally followed by isotropic
depolarization.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import qstate
from .errors import DataError, OutOfRange
from .qstate import DensityMatrix

V_MIN, V_MAX = 0.0, 10.0


@dataclass(frozen=True)
class Voltages:
    v1: float
    v2: float
    v3: float

    def __post_init__(self):
        for v in (self.v1, self.v2, self.v3):
            if not V_MIN <= v <= V_MAX:
                raise OutOfRange(f"voltage {v} outside [{V_MIN}, {V_MAX}]")

    def to_list(self) -> list[float]:
        return [self.v1, self.v2, self.v3]


@dataclass(frozen=True)
class CellParams:
    twist: float = math.pi / 2
    orientation: float = 0.0
    gamma_max: float = 3 * math.pi
    gamma_res: float = 0.15
    v_th: float = 2.0
    steepness_p: float = 3.0

    def __post_init__(self):
        if not (self.gamma_max > self.gamma_res >= 0):
            raise DataError("need gamma_max > gamma_res >= 0")
        if self.v_th <= 0 or self.steepness_p <= 0:
            raise DataError("v_th and steepness_p must be positive")


def _default_cells() -> tuple[CellParams, CellParams, CellParams]:
    return tuple(CellParams(orientation=theta) for theta in (0.0, math.pi / 4, math.pi / 2))


@dataclass(frozen=True)
class DeviceConfig:
    cells: tuple[CellParams, ...] = field(default_factory=_default_cells)
    depolarization: float = 0.002
    input_state: DensityMatrix = qstate.H

    def __post_init__(self):
        if len(self.cells) != 3:
            raise DataError("device needs exactly three cells")
        if not 0 <= self.depolarization < 1:
            raise DataError("depolarization must lie in [0, 1)")

    def replace(self, **changes) -> "DeviceConfig":
        data = {"cells": self.cells, "depolarization": self.depolarization, "input_state": self.input_state}
        data.update(changes)
        return DeviceConfig(**data)

    def to_dict(self) -> dict:
        return {
            "cells": [asdict(c) for c in self.cells],
            "depolarization": self.depolarization,
            "input_state": self.input_state.to_list(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DeviceConfig":
        defaults = cls()
        cells = tuple(CellParams(**c) for c in data.get("cells", [asdict(c) for c in defaults.cells]))
        input_state = data.get("input_state")
        return cls(
            cells=cells,
            depolarization=float(data.get("depolarization", defaults.depolarization)),
            input_state=DensityMatrix.from_list(input_state) if input_state is not None else qstate.H,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "DeviceConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def retardance_of_voltage(v, cell: CellParams):
    """Retardance in radians; accepts scalars or arrays of volts."""
    arr = np.asarray(v, dtype=float)
    if np.any((arr < V_MIN) | (arr > V_MAX)) or np.any(~np.isfinite(arr)):
        raise OutOfRange(f"voltage outside [{V_MIN}, {V_MAX}]")
    out = cell.gamma_res + (cell.gamma_max - cell.gamma_res) / (1.0 + (arr / cell.v_th) ** cell.steepness_p)
    return float(out) if arr.ndim == 0 else out


def rotation(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2).astype(complex)


def tn_jones(twist, gamma) -> np.ndarray:
    """Jones matrix of a twisted cell; broadcasts over array inputs."""
    twist = np.asarray(twist, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    twist, gamma = np.broadcast_arrays(twist, gamma)
    half = gamma / 2
    x = np.sqrt(twist**2 + half**2)
    sinc = np.sinc(x / np.pi)  # sin(x)/x with the x = 0 limit
    cos = np.cos(x)
    w = np.empty(twist.shape + (2, 2), dtype=complex)
    w[..., 0, 0] = cos - 1j * half * sinc
    w[..., 0, 1] = twist * sinc
    w[..., 1, 0] = -twist * sinc
    w[..., 1, 1] = cos + 1j * half * sinc
    return rotation(twist) @ w


def device_jones(volts, config: DeviceConfig) -> np.ndarray:
    """Total Jones matrix for an ``(N, 3)`` voltage array (or one triple)."""
    volts = np.asarray(volts, dtype=float)
    single = volts.ndim == 1
    volts = volts.reshape(-1, 3)
    total = np.broadcast_to(np.eye(2, dtype=complex), (len(volts), 2, 2))
    for k, cell in enumerate(config.cells):
        gamma = retardance_of_voltage(volts[:, k], cell)
        m = tn_jones(cell.twist, gamma)
        rot = rotation(cell.orientation)
        total = rot @ m @ rot.conj().T @ total
    return total[0] if single else total


def device_transform_batch(volts, config: DeviceConfig) -> np.ndarray:
    """Output density rows for an ``(N, 3)`` voltage array."""
    j = device_jones(np.asarray(volts, dtype=float).reshape(-1, 3), config)
    rho_in = config.input_state.matrix
    out = j @ rho_in @ np.conj(np.transpose(j, (0, 2, 1)))
    d = config.depolarization
    if d:
        out = (1 - d) * out + d * np.eye(2) / 2
    return qstate.matrices_to_rho4(out)


def device_transform(v: Voltages, config: DeviceConfig | None = None) -> DensityMatrix:
    config = config or DeviceConfig()
    return DensityMatrix.from_list(device_transform_batch(np.array(v.to_list()), config)[0])


class Twin:
    """Callable wrapper used wherever a voltages -> state predictor is expected."""

    def __init__(self, config: DeviceConfig | None = None):
        self.config = config or DeviceConfig()

    def predict(self, volts) -> np.ndarray:
        return device_transform_batch(volts, self.config)

    __call__ = predict
