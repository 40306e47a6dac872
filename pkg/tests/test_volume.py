import struct

import numpy as np
import pytest

from treepheno.errors import CorruptFile
from treepheno.volume import HEADER_SIZE, LabeledVolume, count_components, read_lvol, write_lvol


def _sample():
    data = np.zeros((5, 4, 3), dtype=np.uint8)
    data[1, 2, 0] = 1
    data[1, 2, 1] = 3
    data[4, 3, 2] = 17
    return LabeledVolume(data, (0.4668, 0.918, 0.5))


def test_lvol_roundtrip(tmp_path):
    vol = _sample()
    write_lvol(tmp_path / "a.lvol", vol)
    back = read_lvol(tmp_path / "a.lvol")
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == pytest.approx(vol.spacing, abs=0)


def test_lvol_layout_is_x_fastest(tmp_path):
    vol = _sample()
    write_lvol(tmp_path / "a.lvol", vol)
    raw = (tmp_path / "a.lvol").read_bytes()
    assert len(raw) == HEADER_SIZE + 5 * 4 * 3
    magic, nx, ny, nz = struct.unpack("<8s3I", raw[:20])
    assert (magic, nx, ny, nz) == (b"LVOL0001", 5, 4, 3)
    assert struct.unpack("<3d", raw[20:44]) == vol.spacing
    assert raw[44:64] == bytes(20)
    body = raw[HEADER_SIZE:]
    # voxel (x, y, z) lives at x + nx * (y + ny * z)
    assert body[1 + 5 * (2 + 4 * 1)] == 3
    assert body[4 + 5 * (3 + 4 * 2)] == 17


@pytest.mark.parametrize("mutate", [
    lambda raw: b"LVOLXXXX" + raw[8:],
    lambda raw: raw[:-1],
    lambda raw: raw[:HEADER_SIZE] + bytes([18]) + raw[HEADER_SIZE + 1:],
])
def test_corrupt_files_rejected(tmp_path, mutate):
    write_lvol(tmp_path / "a.lvol", _sample())
    (tmp_path / "b.lvol").write_bytes(mutate((tmp_path / "a.lvol").read_bytes()))
    with pytest.raises(CorruptFile):
        read_lvol(tmp_path / "b.lvol")


def test_generation_bookkeeping():
    vol = _sample()
    assert vol.foreground_count() == 3
    assert vol.max_generation() == 16
    counts = vol.generation_counts()
    assert counts[0] == 5 * 4 * 3 - 3
    assert counts[1] == counts[3] == counts[17] == 1


def test_component_count_uses_26_connectivity():
    m = np.zeros((3, 3, 3), dtype=bool)
    m[0, 0, 0] = m[1, 1, 1] = True  # corner-adjacent only
    assert count_components(m) == 1
    m[1, 1, 1] = False
    m[2, 2, 2] = True
    assert count_components(m) == 2
