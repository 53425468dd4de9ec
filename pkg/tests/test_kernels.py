import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from o2proxy import kernels as K
from o2proxy.offload import LoopNest

EPS = np.finfo(np.float64).eps


def bits(a):
    return np.ascontiguousarray(a, dtype=np.float64).view(np.uint64)


def same_bits(a, b):
    return a.shape == b.shape and np.array_equal(bits(a), bits(b))


# -- binary format --------------------------------------------------------------

@given(arrays(np.float64, st.lists(st.integers(0, 5), min_size=0, max_size=4).map(tuple),
              elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_binary_round_trip(a):
    b = K.decode_array(K.encode_array(a))
    assert b.shape == a.shape and b.tobytes() == a.tobytes()


def test_binary_layout_is_little_endian():
    blob = K.encode_array(np.array([[1.0, 2.0]]))
    assert blob[:8] == (2).to_bytes(8, "little")
    assert blob[8:24] == (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
    assert np.frombuffer(blob[24:], "<f8").tolist() == [1.0, 2.0]


@pytest.mark.parametrize("blob", [b"", b"\x01", (1).to_bytes(8, "little") + (3).to_bytes(8, "little")])
def test_binary_rejects_truncated(blob):
    with pytest.raises(ValueError):
        K.decode_array(blob)


# -- physics ------------------------------------------------------------------------

def test_physics_identity_with_zero_coefficients():
    c = K.ChunkedColumns.random(rng=1)
    out = K.physics_step(c, 0.0, 0.0)
    assert same_bits(out.t, c.t)


def test_physics_fixed_point_at_top_level():
    c = K.ChunkedColumns.random(rng=2)
    c.t[:, :, 0] = 300.0
    out = K.physics_step(c, 0.5, 0.0)
    assert np.all(out.t[:, :, 0] == 300.0)


def test_physics_formula():
    rng = np.random.default_rng(3)
    c = K.ChunkedColumns.random((5, 2, 7), rng)
    teq = 300.0 - 50.0 * np.arange(7) / 6
    expect = c.t + (teq - c.t) * 0.1 + (c.q * c.q) * 1e-3
    np.testing.assert_allclose(K.physics_step(c).t, expect, rtol=1e-15)


def test_physics_single_level_profile():
    assert K.equilibrium_profile(1).tolist() == [300.0]
    assert K.equilibrium_profile(3).tolist() == [300.0, 275.0, 250.0]


def test_physics_rejects_nonfinite():
    c = K.ChunkedColumns.random(rng=4)
    c.t[0, 0, 0] = np.nan
    with pytest.raises(K.NonFiniteInput):
        K.physics_step(c)


def test_physics_parallel_matches_serial(group):
    c = K.ChunkedColumns.random(rng=5)
    assert same_bits(K.physics_step(c, group=group).t, K.physics_step(c, group=group, serial=True).t)


def test_physics_tiles_large_inputs(groups):
    # one chunk is 16 KB, so several tiles per worker on two workers
    c = K.ChunkedColumns.random((200, 4, 512), 6)
    g = groups(2)
    assert same_bits(K.physics_step(c, group=g).t, K.physics_step(c, group=g, serial=True).t)


# -- dynamics -----------------------------------------------------------------------

def test_dycore_constant_field_unchanged():
    f = K.ElementField(np.full(K.CAM_DYN_DIMS, 3.25))
    assert np.all(K.dycore_step(f).values == 3.25)


def test_dycore_shared_edges_become_mean():
    vals = np.zeros((2, 1, 3, 3))
    vals[1] = 1.0
    adj = np.array([[1, 1, 0, 0], [0, 0, 1, 1]])  # W, E, S, N; S/N self-periodic
    f = K.ElementField(vals, adj)
    out = K.dycore_step(f, nu=0.0).values
    assert np.all(out[0, 0, :, -1] == 0.5) and np.all(out[1, 0, :, 0] == 0.5)
    assert np.all(out[0, 0, :, 0] == 0.5) and np.all(out[1, 0, :, -1] == 0.5)
    assert out[0, 0, 1, 1] == 0.0 and out[1, 0, 1, 1] == 1.0


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4, 6, 9]))
def test_dycore_exchange_conserves_sum(seed, nelem):
    f = K.ElementField.random((nelem, 2, 4, 4), seed)
    out = K.dycore_step(f, nu=0.0).values
    bound = 4 * EPS * np.abs(f.values).sum()
    assert abs(out.sum() - f.values.sum()) <= bound


def test_dycore_rejects_asymmetric_adjacency():
    adj = K.periodic_adjacency(4)
    adj[0, K.E] = 0
    with pytest.raises(K.AdjacencyError):
        K.dycore_step(K.ElementField(np.zeros((4, 1, 2, 2)), adj))


def test_dycore_needs_two_points():
    with pytest.raises(K.KernelError):
        K.ElementField(np.zeros((4, 1, 1, 1)))


def test_dycore_parallel_matches_serial(group):
    f = K.ElementField.random(rng=7)
    assert same_bits(K.dycore_step(f, group=group).values, K.dycore_step(f, group=group, serial=True).values)


def test_periodic_adjacency_symmetric():
    for n in (1, 2, 4, 6, 7, 12, 64):
        K.check_adjacency(K.periodic_adjacency(n))


# -- prefix sum ----------------------------------------------------------------------

def test_prefix_sum_zeros():
    assert np.all(K.vertical_prefix_sum(np.zeros(100), np.ones(100)) == 0.0)


def test_prefix_sum_small_integers(groups):
    out = K.vertical_prefix_sum([1, 2, 3, 4], [1, 1, 1, 1], group=groups(8))
    assert out.tolist() == [1.0, 3.0, 6.0, 10.0]


def test_prefix_sum_length_mismatch():
    with pytest.raises(K.KernelError):
        K.vertical_prefix_sum(np.ones(3), np.ones(4))


def test_prefix_sum_serial_oracle_is_left_to_right():
    div = np.array([1e16, 1.0, -1e16, 1.0])
    assert K.prefix_sum_serial(div, np.ones(4)).tolist() == [1e16, 1e16, 0.0, 1.0]


def test_prefix_sum_random_tolerance(group):
    rng = np.random.default_rng(8)
    div, dp = rng.random(1024), rng.uniform(0.5, 1.5, 1024)
    ref = K.prefix_sum_serial(div, dp)
    out = K.vertical_prefix_sum(div, dp, group=group)
    assert np.max(np.abs(out - ref) / np.abs(ref)) <= 1e-12


@settings(max_examples=30)
@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=600), st.sampled_from([1, 3, 8, 64]))
def test_prefix_sum_integers_exact(groups, vals, w):
    div = np.array(vals, dtype=np.float64)
    dp = np.ones_like(div)
    out = K.vertical_prefix_sum(div, dp, group=groups(w))
    assert same_bits(out, K.prefix_sum_serial(div, dp))


def test_prefix_sum_tiled_column(groups):
    # 40000 elements do not fit one worker's scratchpad in three buffers
    rng = np.random.default_rng(9)
    div = rng.integers(-50, 50, 40000).astype(float)
    out = K.vertical_prefix_sum(div, np.ones_like(div), group=groups(1))
    assert same_bits(out, np.cumsum(div))


# -- POP ---------------------------------------------------------------------------

def test_vmix_uniform_column_unchanged():
    b = K.BlockField(np.full(K.POP_DIMS, 4.0))
    assert np.all(K.pop_vmix_step(b).values == 4.0)


def test_vmix_conserves_column_heat():
    b = K.BlockField.random((1, 12, 3, 5), 10)
    out = K.pop_vmix_step(b).values
    np.testing.assert_allclose(out.sum(axis=1), b.values.sum(axis=1), rtol=1e-13)


def test_vmix_matches_dense_solve():
    rng = np.random.default_rng(11)
    v = rng.standard_normal((1, 6, 1, 1))
    r = 0.2
    D = np.zeros((6, 6))
    for k in range(6):
        if k:
            D[k, k - 1] = 1
            D[k, k] -= 1
        if k < 5:
            D[k, k + 1] = 1
            D[k, k] -= 1
    col = v[0, :, 0, 0]
    expect = col + np.linalg.solve(np.eye(6) - r * D, r * D @ col)
    got = K.pop_vmix_step(K.BlockField(v), r).values[0, :, 0, 0]
    np.testing.assert_allclose(got, expect, rtol=1e-13)


def test_vmix_singular_system():
    with pytest.raises(K.SingularTridiagonal):
        K.pop_vmix_step(K.BlockField(np.ones((1, 2, 1, 1))), r=-0.5)


def test_hmix_single_layer_is_2d_laplacian():
    rng = np.random.default_rng(12)
    v = rng.standard_normal((1, 1, 5, 6))
    tile = v[0, 0]
    p = np.pad(tile, 1, mode="edge")
    p[1:-1, 0], p[1:-1, -1] = tile[:, -1], tile[:, 0]
    lap = p[1:-1, :-2] + p[1:-1, 2:] + p[:-2, 1:-1] + p[2:, 1:-1] - 4 * tile
    got = K.pop_hmix_step(K.BlockField(v), 0.1).values[0, 0]
    np.testing.assert_allclose(got, tile + 0.1 * lap, rtol=1e-14, atol=1e-15)


def test_halo_exchange_ring():
    tiles = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)
    p = K.exchange_halos(tiles)
    assert p[0, 1:-1, 0].tolist() == tiles[1, :, -1].tolist()
    assert p[1, 1:-1, -1].tolist() == tiles[0, :, 0].tolist()
    assert p[0, 0, 1:-1].tolist() == tiles[0, 0].tolist()


def test_pop_parallel_matches_serial(group):
    b = K.BlockField.random(rng=13)
    for step in (K.pop_vmix_step, K.pop_hmix_step):
        assert same_bits(step(b, group=group).values, step(b, group=group, serial=True).values)


def test_pop_rejects_ice_shape():
    with pytest.raises(K.KernelError):
        K.pop_vmix_step(K.BlockField(np.ones(K.CICE_DIMS)))


# -- CICE ----------------------------------------------------------------------------

def test_evp_zero_forcing_identity():
    b = K.BlockField.random(K.CICE_DIMS, 14)
    assert same_bits(K.cice_evp_step(b, n_subcycles=1).values, b.values)


def test_evp_needs_a_subcycle():
    with pytest.raises(K.KernelError):
        K.cice_evp_step(K.BlockField.random(K.CICE_DIMS, 15, forcing=True), n_subcycles=0)


def test_evp_block_schedule(groups):
    nest = LoopNest.of("mxblk", mxblk=32, ncat=5, nlayer=8, nyblk=4, nxblk=4)
    active = [len(nest.worker_span(w, 64)) for w in range(64)]
    assert active == [1] * 32 + [0] * 32


def test_evp_parallel_matches_serial_full_subcycles(groups):
    b = K.BlockField.random(K.CICE_DIMS, 16, forcing=True)
    g = groups(64)
    par = K.cice_evp_step(b, 120, group=g).values
    ser = K.cice_evp_step(b, 120, group=g, serial=True).values
    assert same_bits(par, ser)
    assert not np.array_equal(par, b.values)


@pytest.mark.parametrize("w", [2, 8])
def test_evp_parallel_matches_serial(groups, w):
    b = K.BlockField.random(K.CICE_DIMS, 17, forcing=True)
    g = groups(w)
    assert same_bits(K.cice_evp_step(b, 6, group=g).values, K.cice_evp_step(b, 6, group=g, serial=True).values)


# -- presets -------------------------------------------------------------------------

def test_preset_dims():
    assert K.preset_dims("cam-dyn", "ne30") == K.CAM_DYN_DIMS
    assert K.preset_dims("cam-phys", "ne120") == (144, 1, 32)
    assert K.preset_dims("pop-vmix", "ts003") == (5, 60, 56, 10)
    assert K.preset_dims("cice-evp", "ts010") == (48, 5, 8, 4, 4)
    assert K.preset_dims("prefix-sum", "ne480") == (16384,)
    with pytest.raises(K.KernelError):
        K.preset_dims("cam-dyn", "ts015")
