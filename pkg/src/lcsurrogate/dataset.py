"""Calibration datasets of (voltages, state) pairs drawn from the digital twin."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lcsim, qstate, tomo
from .errors import BadGridSize, BadSize, DataError, SizeMismatch
from .lcsim import DeviceConfig, Voltages
from .qstate import DensityMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Record:
    voltages: Voltages
    state: DensityMatrix
    purity: float


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    n_test: int
    seed: int = 0


class Dataset:
    """Column store: ``voltages`` is ``(N, 3)`` volts, ``states`` is ``(N, 4)`` density rows."""

    def __init__(self, voltages, states, header: dict | None = None):
        self.voltages = np.asarray(voltages, dtype=float).reshape(-1, 3)
        self.states = np.asarray(states, dtype=float).reshape(-1, 4)
        if len(self.voltages) != len(self.states):
            raise SizeMismatch("voltages and states differ in length")
        self.header = dict(header or {})

    def __len__(self) -> int:
        return len(self.voltages)

    def __getitem__(self, i) -> Record:
        if isinstance(i, slice):
            raise TypeError("use take() for sub-datasets")
        state = DensityMatrix.from_list(self.states[i])
        return Record(Voltages(*self.voltages[i]), state, qstate.purity(state))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, idx) -> "Dataset":
        return Dataset(self.voltages[idx], self.states[idx], self.header)

    @property
    def purities(self) -> np.ndarray:
        return qstate.purity4(self.states)

    @property
    def taus(self) -> np.ndarray:
        return qstate.rho4_to_tau(self.states)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.voltages).tobytes())
        h.update(np.ascontiguousarray(self.states).tobytes())
        return h.hexdigest()[:16]

    @property
    def device(self) -> DeviceConfig | None:
        d = self.header.get("device")
        return DeviceConfig.from_dict(d) if d is not None else None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps(self.header) + "\n")
            for v, r in zip(self.voltages.tolist(), self.states.tolist()):
                # float repr is the shortest string that round-trips exactly
                fh.write(json.dumps({"v": v, "rho": r}) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        volts, states, header = [], [], {}
        with open(path) as fh:
            for k, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if "v" not in obj:
                    if k == 0:
                        header = obj
                        continue
                    raise DataError(f"{path}:{k + 1}: record without 'v'")
                volts.append(obj["v"])
                states.append(obj["rho"])
        return cls(np.array(volts).reshape(-1, 3), np.array(states).reshape(-1, 4), header)


def cube_root(n: int) -> int | None:
    m = int(round(n ** (1 / 3)))
    for c in (m - 1, m, m + 1):
        if c >= 1 and c**3 == n:
            return c
    return None


def nearest_cube(n: int) -> int:
    """Largest m with m**3 <= n."""
    m = int(n ** (1 / 3)) + 1
    while m**3 > n:
        m -= 1
    return m


def lattice(m: int) -> np.ndarray:
    axis = np.linspace(lcsim.V_MIN, lcsim.V_MAX, m)
    g = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


def parse_noise(noise) -> int | None:
    """``None``/"none" -> None, ``"tomo:100000"`` or an int -> shot count."""
    if noise is None or noise == "none":
        return None
    if isinstance(noise, int):
        return noise
    kind, _, shots = str(noise).partition(":")
    if kind not in ("tomo", "tomographic") or not shots:
        raise DataError(f"unknown noise spec {noise!r}")
    return int(float(shots))


def generate(n: int, mode: str = "random", noise=None, device: DeviceConfig | None = None, seed: int = 0) -> Dataset:
    device = device or DeviceConfig()
    shots = parse_noise(noise)
    if n < 1:
        raise DataError("n must be positive")
    volt_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    if mode == "random":
        volts = np.random.default_rng(volt_seed).uniform(lcsim.V_MIN, lcsim.V_MAX, size=(n, 3))
    elif mode == "grid":
        m = cube_root(n)
        if m is None:
            raise BadGridSize(f"grid mode needs a perfect cube, got {n}")
        volts = lattice(m)
    else:
        raise DataError(f"unknown mode {mode!r}")
    states = lcsim.device_transform_batch(volts, device)
    if shots is not None:
        rng = np.random.default_rng(noise_seed)
        counts = rng.binomial(shots, np.clip(tomo.projection_probs(states), 0.0, 1.0))
        failures = 0
        noisy = np.empty_like(states)
        for i, c in enumerate(counts):
            state, ok = tomo.reconstruct_lenient(tomo.CountVector(tuple(int(x) for x in c), max(shots, 1)))
            noisy[i] = state.as_array()
            failures += not ok
        if failures:
            log.warning("%d of %d reconstructions hit the iteration cap", failures, n)
        states = noisy
    header = {
        "device": device.to_dict(),
        "seed": seed,
        "mode": mode,
        "noise": "none" if shots is None else f"tomo:{shots}",
        "n": n,
    }
    return Dataset(volts, states, header)


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    sizes = (spec.n_train, spec.n_val, spec.n_test)
    if min(sizes) < 0 or sum(sizes) > len(data):
        raise SizeMismatch(f"split {sizes} does not fit {len(data)} records")
    order = np.random.default_rng(spec.seed).permutation(len(data))
    a, b = spec.n_train, spec.n_train + spec.n_val
    return data.take(order[:a]), data.take(order[a:b]), data.take(order[b : b + spec.n_test])


def disjoint_subsets(train: Dataset, subset_size: int) -> list[Dataset]:
    if subset_size <= 0:
        raise BadSize("subset size must be positive")
    if subset_size > len(train):
        raise BadSize(f"subset size {subset_size} exceeds {len(train)} records")
    count = len(train) // subset_size
    return [train.take(np.arange(k * subset_size, (k + 1) * subset_size)) for k in range(count)]
