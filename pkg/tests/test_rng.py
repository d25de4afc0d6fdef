import numpy as np
import pytest

from fnse import rng

# Random123 known-answer vectors for philox4x32-10
KAT = [
    ([0, 0, 0, 0], [0, 0], [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]),
    ([0xFFFFFFFF] * 4, [0xFFFFFFFF] * 2, [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]),
    ([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], [0xA4093822, 0x299F31D0],
     [0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1]),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = rng.philox4x32(np.array(ctr, dtype=np.uint32), key)
    assert [int(v) for v in out] == expected


def test_uniforms_open_interval_and_pure():
    u = rng.uniforms(5, np.arange(1000), 3, 0)
    assert u.shape == (1000, 2) and np.all((u > 0) & (u < 1))
    assert np.array_equal(u[10:20], rng.uniforms(5, np.arange(10, 20), 3, 0))
    assert not np.array_equal(u, rng.uniforms(6, np.arange(1000), 3, 0))
    assert abs(u.mean() - 0.5) < 0.02


def test_seed_key_range():
    assert rng.seed_key(2 ** 64 - 1) == (0xFFFFFFFF, 0xFFFFFFFF)
    with pytest.raises(ValueError):
        rng.seed_key(-1)
