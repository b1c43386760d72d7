import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from layertone.field import distance_to_empty
from layertone.grid import VoxelClass
from layertone.traverse import (FLOYD_STEINBERG, MATCH_RADIUS, Filter2D, TangentFrame, Winding,
                                builtin_filter, candidate_filter, is_birth, load_filters,
                                map_filter, next_voxel, select_start, serpentine_scan)


def test_candidate_kept_when_winding_agrees():
    assert candidate_filter((5, 5), [(6, 5)], (0, 1), Winding.CCW) == [(6, 5)]


def test_candidate_rejected_against_winding():
    assert candidate_filter((5, 5), [(4, 5)], (0, 1), Winding.CCW) == []
    assert candidate_filter((5, 5), [(4, 5)], (0, 1), Winding.CW) == [(4, 5)]


def test_zero_gradient_on_strip_keeps_every_neighbor():
    plane = np.zeros((3, 9), dtype=np.int8)
    plane[1, :] = VoxelClass.INTERIOR
    de = distance_to_empty(plane)
    assert np.all(de.phi[1] == 1)
    gx, gy = de.grad[1, 4]
    assert (gx, gy) == (0, 0)
    nbrs = [(3, 1), (5, 1)]
    for w in Winding:
        assert candidate_filter((4, 1), nbrs, (gx, gy), w) == nbrs


def test_next_voxel_down_facing_takes_largest_phi():
    cands = [(6, 5), (5, 6)]
    assert next_voxel((5, 5), cands, [2, 3], -0.5) == (5, 6)


def test_next_voxel_up_facing_takes_smallest_phi():
    cands = [(6, 5), (5, 6)]
    assert next_voxel((5, 5), cands, [2, 3], 0.5) == (6, 5)


def test_next_voxel_empty():
    assert next_voxel((5, 5), [], [], 1.0) is None


def test_next_voxel_ties_prefer_straight_then_scan_order():
    cands = [(6, 6), (6, 5), (5, 6)]
    assert next_voxel((5, 5), cands, [1, 1, 1], 1.0, prev_dir=(1, 0)) == (6, 5)
    assert next_voxel((5, 5), [(6, 5), (5, 6)], [1, 1], 1.0) == (6, 5)
    assert next_voxel((5, 5), [(6, 6), (4, 6)], [1, 1], 1.0) == (4, 6)


def test_select_start_filters_by_count_first():
    voxels = [(0, 0), (1, 0), (2, 0)]
    i, winding = select_start(voxels, [2, 2, 1], [4, 1, 9], [-1.0, -1.0, -1.0])
    assert i == 0
    assert winding == Winding.CCW


def test_select_start_up_facing_and_empty():
    voxels = [(0, 0), (1, 0), (2, 0)]
    assert select_start(voxels, [1, 1, 1], [4, 1, 9], [1.0] * 3)[0] == 1
    assert select_start([], [], [], []) is None


def test_select_start_winding_opposes_arrival():
    voxels = [(0, 0)]
    # error last arrived moving +x with the interior towards +y
    _, w = select_start(voxels, [1], [1], [1.0], last_dir=[(1.0, 0.0)], grad=[(0, 1)])
    assert w == Winding.CW
    _, w = select_start(voxels, [1], [1], [1.0], last_dir=[(-1.0, 0.0)], grad=[(0, 1)])
    assert w == Winding.CCW


def test_birth_detection():
    assert is_birth([0, 0, 0])
    assert not is_birth([0, 1, 0])


def test_serpentine_square():
    voxels = [(x, y) for y in range(3) for x in range(3)]
    assert serpentine_scan(voxels[::-1]) == [(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (0, 1),
                                             (0, 2), (1, 2), (2, 2)]


def test_serpentine_single_voxel():
    assert serpentine_scan([(4, 7)]) == [(4, 7)]


def test_serpentine_l_shape():
    voxels = [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2)]
    order = serpentine_scan(voxels)
    assert sorted(order) == sorted(voxels)
    assert order == [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2)]


def _window_offsets():
    return [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0)]


def test_flat_plate_maps_classic_stencil():
    frame = TangentFrame.from_forward((0, 0, 1), (1, 0, 0))
    # in-slice neighbors not yet visited on a serpentine row moving +x
    offsets = [o for o in _window_offsets() if o[2] == 0 and (o[1] > 0 or (o[1] == 0 and o[0] > 0))]
    got = {tuple(offsets[i]): w for i, w in map_filter(frame, FLOYD_STEINBERG, offsets)}
    assert got == pytest.approx({(1, 0, 0): 7 / 16, (-1, 1, 0): 3 / 16, (0, 1, 0): 5 / 16,
                                 (1, 1, 0): 1 / 16})


def test_isolated_voxel_maps_nothing():
    frame = TangentFrame.from_forward((0, 0, 1), (1, 0, 0))
    assert map_filter(frame, FLOYD_STEINBERG, []) == []


def test_cube_edge_weights_sum_to_one():
    # solid x <= 0, z >= 0; voxel on the bottom edge, walking +y
    surface = [o for o in _window_offsets()
               if o[0] <= 0 and o[2] >= 0 and (o[0] == 0 or o[2] == 0)]
    allowed = [o for o in surface if o[2] == 1 or o[1] > 0]
    n = np.array([1.0, 0.0, -1.0]) / np.sqrt(2)
    frame = TangentFrame.from_forward(n, (0, 1, 0))
    pairs = map_filter(frame, FLOYD_STEINBERG, allowed)
    assert pairs
    assert sum(w for _, w in pairs) == pytest.approx(1.0, abs=1e-12)
    idx = [i for i, _ in pairs]
    assert len(set(idx)) == len(idx)
    f = np.array(allowed, dtype=float) @ frame.f
    r = np.array(allowed, dtype=float) @ frame.r
    for i in idx:
        assert np.hypot(f[i], r[i]) < 1.5 + MATCH_RADIUS


@settings(max_examples=100)
@given(st.tuples(*[st.floats(-1, 1)] * 3), st.tuples(*[st.floats(-1, 1)] * 3),
       st.sampled_from(list(Winding)))
@example((0.0, 1e-9, 0.5), (0.0, 0.0, 0.0), Winding.CCW)
def test_frame_orthonormal(n, fwd, winding):
    n = np.array(n)
    if np.linalg.norm(n) < 1e-3:
        n = np.array([0.0, 0.0, 1.0])
    fr = TangentFrame.from_forward(n, fwd, winding)
    m = np.stack([fr.f, fr.r, fr.n])
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(m) == pytest.approx(float(int(winding)), abs=1e-9)


def test_filter_validation():
    with pytest.raises(ValueError):
        Filter2D("bad", [np.array([[1, 0, 0.5], [0, 1, 0.4]])])
    with pytest.raises(ValueError):
        Filter2D("neg", [np.array([[1, 0, 1.5], [0, 1, -0.5]])])
    f = Filter2D("ok", [np.array([[1, 0, 1.0], [0, 1, 0.0]])])
    assert f.levels[0].shape == (1, 3)


def test_load_filters_round_trip(tmp_path):
    path = tmp_path / "f.txt"
    path.write_text("# two-level test filter\nFILTER t 2\n1 1 0 1\n2 1 0 0.5 0 1 0.5\n"
                    "MODULATION 2\n0 0\n1 1\n")
    f = load_filters(path)["t"]
    assert len(f.levels) == 2
    assert f.level_of(0.2) == 0 and f.level_of(0.8) == 1
    assert f.modulation[0] == 0.0 and f.modulation[-1] == 1.0
    assert f.modulation[128] == pytest.approx(128 / 255)


def test_load_filters_rejects_truncation(tmp_path):
    path = tmp_path / "f.txt"
    path.write_text("FILTER t 2\n1 1 0 1\n")
    with pytest.raises(ValueError):
        load_filters(path)


@pytest.mark.parametrize("name", ["ostromoukhov", "zhoufang"])
def test_builtin_tables(name):
    f = builtin_filter(name)
    assert len(f.levels) == 256
    for lv in f.levels:
        assert lv[:, 2].sum() == pytest.approx(1.0, abs=1e-9)
    # the tone-adaptive table is symmetric about mid-gray
    for k in range(128):
        assert np.array_equal(f.levels[k], f.levels[255 - k])
    if name == "zhoufang":
        assert f.modulation.max() == 1.0 and f.modulation[0] == 0.0
    else:
        assert np.all(f.modulation == 0)


def test_unknown_builtin():
    with pytest.raises(KeyError):
        builtin_filter("nope")
