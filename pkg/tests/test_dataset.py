from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcsurrogate import dataset, lcsim, qstate
from lcsurrogate.errors import BadGridSize, BadSize, DataError, SizeMismatch
from lcsurrogate.dataset import Dataset, SplitSpec


def test_random_generation_is_seeded_and_in_range():
    a = dataset.generate(200, seed=3)
    b = dataset.generate(200, seed=3)
    assert a.digest() == b.digest()
    assert dataset.generate(200, seed=4).digest() != a.digest()
    assert a.voltages.min() >= 0 and a.voltages.max() <= 10
    assert np.array_equal(a.states, lcsim.device_transform_batch(a.voltages, lcsim.DeviceConfig()))


def test_grid_generation():
    d = dataset.generate(27, "grid")
    assert sorted(set(d.voltages[:, 0])) == [0.0, 5.0, 10.0]
    assert len({tuple(v) for v in d.voltages}) == 27
    with pytest.raises(BadGridSize):
        dataset.generate(28, "grid")
    with pytest.raises(DataError):
        dataset.generate(8, "sobol")
    with pytest.raises(DataError):
        dataset.generate(0)


def test_noisy_generation_is_close_and_physical(noiseless_device):
    clean = dataset.generate(40, device=noiseless_device, seed=1)
    noisy = dataset.generate(40, noise="tomo:100000", device=noiseless_device, seed=1)
    assert np.array_equal(clean.voltages, noisy.voltages)
    inf = 1 - qstate.fidelity4(clean.states, noisy.states)
    # pure states lose fidelity to first order in the radial shot noise
    assert 0 < inf.mean() < 1e-3 and inf.max() < 5e-3
    assert np.all(qstate.purity4(noisy.states) <= 1 + 1e-12)
    assert noisy.header["noise"] == "tomo:100000"


def test_parse_noise():
    assert dataset.parse_noise(None) is None
    assert dataset.parse_noise("none") is None
    assert dataset.parse_noise("tomo:1e5") == 100000
    assert dataset.parse_noise(500) == 500
    with pytest.raises(DataError):
        dataset.parse_noise("gauss:1")


def test_save_load_roundtrip_is_exact(tmp_path, rng):
    d = dataset.generate(50, seed=2)
    path = tmp_path / "d.jsonl"
    d.save(path)
    back = Dataset.load(path)
    assert back.digest() == d.digest()
    assert back.header == d.header
    assert back.device == d.device


def test_load_without_header(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"v": [1, 2, 3], "rho": [1, 0, 0, 0]}\n\n{"v": [0, 0, 0], "rho": [0.5, 0, 0, 0.5]}\n')
    d = Dataset.load(path)
    assert len(d) == 2 and d.header == {}
    assert d[1].purity == 0.5


def test_load_rejects_headerless_middle_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"v": [1, 2, 3], "rho": [1, 0, 0, 0]}\n{"x": 1}\n')
    with pytest.raises(DataError):
        Dataset.load(path)


def test_record_access():
    d = dataset.generate(5, seed=0)
    r = d[2]
    assert r.voltages.to_list() == d.voltages[2].tolist()
    assert r.purity == pytest.approx(qstate.purity4(d.states[2]))
    assert len(list(d)) == 5
    with pytest.raises(SizeMismatch):
        Dataset(np.zeros((3, 3)), np.zeros((2, 4)))


def test_split_is_disjoint_and_seeded():
    d = dataset.generate(100, seed=0)
    tr, va, te = dataset.split(d, SplitSpec(60, 25, 15, seed=1))
    keys = [{tuple(v) for v in part.voltages} for part in (tr, va, te)]
    assert [len(k) for k in keys] == [60, 25, 15]
    assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])
    again = dataset.split(d, SplitSpec(60, 25, 15, seed=1))
    assert again[0].digest() == tr.digest()
    with pytest.raises(SizeMismatch):
        dataset.split(d, SplitSpec(60, 30, 15))


def test_disjoint_subsets():
    d = dataset.generate(100, seed=0)
    subs = dataset.disjoint_subsets(d, 30)
    assert len(subs) == 3
    seen = np.concatenate([s.voltages for s in subs])
    assert len({tuple(v) for v in seen}) == 90
    with pytest.raises(BadSize):
        dataset.disjoint_subsets(d, 0)
    with pytest.raises(BadSize):
        dataset.disjoint_subsets(d, 101)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10**7))
def test_nearest_cube_property(n):
    m = dataset.nearest_cube(n)
    assert m**3 <= n < (m + 1) ** 3


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300))
def test_cube_root_property(m):
    assert dataset.cube_root(m**3) == m
    if m > 1:
        assert dataset.cube_root(m**3 + 1) is None


def test_lattice_endpoints():
    g = dataset.lattice(16)
    assert g.shape == (4096, 3)
    assert g.min() == 0.0 and g.max() == 10.0
