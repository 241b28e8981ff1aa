"""Agent graph construction, normalized Laplacian, and the map encoder."""

import numpy as np
import pytest

from oracles import env_encode_ref
from spectraj import tensor as T
from spectraj.errors import ConfigError, ContractError, DataError, ShapeError
from spectraj.graphs import (EnvEncoderParams, build_agent_graph,
                             encode_environment, inverse_distance_weights,
                             normalized_laplacian, normalized_laplacian_diff,
                             world_to_pixel)
from spectraj.spectral import jacobi_eigh


def _permute(mat, perm):
    p = np.asarray(perm)
    return mat[np.ix_(p, p)]


class TestAgentGraph:
    def test_three_four_five_distance(self):
        w = inverse_distance_weights(np.array([[0.0, 0.0], [3.0, 4.0]]))
        assert w[0, 1] == 0.2 and w[1, 0] == 0.2
        assert w[0, 0] == 0.0 and w[1, 1] == 0.0

    def test_coincident_agents_hit_floor(self):
        w = inverse_distance_weights(np.array([[1.0, 2.0], [1.0, 2.0]]), eps=1e-6)
        assert w[0, 1] == 1e6

    def test_single_agent(self):
        mats = build_agent_graph(np.zeros((4, 1, 2)))
        assert len(mats) == 4
        assert all(m.shape == (1, 1) and m[0, 0] == 0.0 for m in mats)

    def test_translation_invariance_bitwise(self):
        # dyadic coordinates so the shifted sums are exact floats
        rng = np.random.default_rng(11)
        history = rng.integers(-2000, 2000, size=(5, 4, 2)) / 64.0
        shifted = history + np.array([512.0, -1024.0])
        for a, b in zip(build_agent_graph(history), build_agent_graph(shifted)):
            assert np.array_equal(a, b)

    def test_permutation_conjugation_exact(self):
        rng = np.random.default_rng(12)
        pos = rng.normal(size=(6, 2))
        perm = [3, 0, 5, 1, 4, 2]
        direct = inverse_distance_weights(pos[perm])
        assert np.array_equal(direct, _permute(inverse_distance_weights(pos), perm))

    def test_nonfinite_names_agent_and_timestep(self):
        history = np.zeros((4, 3, 2))
        history[2, 1, 0] = np.nan
        with pytest.raises(DataError, match="beta.*timestep 2"):
            build_agent_graph(history, agent_ids=["alpha", "beta", "gamma"])

    def test_rejects_bad_shapes(self):
        with pytest.raises(ShapeError):
            inverse_distance_weights(np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            build_agent_graph(np.zeros((4, 2)))


class TestLaplacian:
    def test_two_node_unit_weight(self):
        lap, deg = normalized_laplacian(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.array_equal(lap, np.array([[1.0, -1.0], [-1.0, 1.0]]))
        assert np.array_equal(deg, np.array([1.0, 1.0]))
        lam, _ = jacobi_eigh(lap)
        assert np.allclose(lam.data, [2.0, 0.0], atol=1e-12)

    def test_isolated_nodes_give_identity(self):
        lap, deg = normalized_laplacian(np.zeros((3, 3)))
        assert np.array_equal(lap, np.eye(3))
        assert np.array_equal(deg, np.zeros(3))

    def test_triangle_spectrum(self):
        w = np.ones((3, 3)) - np.eye(3)
        lap, _ = normalized_laplacian(w)
        lam, _ = jacobi_eigh(lap)
        assert np.allclose(lam.data, [1.5, 1.5, 0.0], atol=1e-12)

    def test_zero_degree_row_is_identity_row(self):
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 0] = 2.0
        lap, _ = normalized_laplacian(w)
        assert np.array_equal(lap[2], np.array([0.0, 0.0, 1.0]))
        assert np.array_equal(lap[:, 2], np.array([0.0, 0.0, 1.0]))

    def test_output_symmetric_bitwise(self):
        rng = np.random.default_rng(13)
        for n in (2, 3, 5, 9):
            w = np.abs(rng.normal(size=(n, n)))
            w = (w + w.T) * (1 - np.eye(n))
            lap, _ = normalized_laplacian(w)
            assert np.array_equal(lap, lap.T)

    def test_spectral_radius_and_nullspace(self):
        # note: row sums of the normalized adjacency are NOT bounded by 1
        # (star graphs exceed it); the sound bound is on its spectrum
        rng = np.random.default_rng(14)
        for n in (2, 4, 7):
            w = np.abs(rng.normal(size=(n, n))) + 0.05
            w = (w + w.T) * (1 - np.eye(n))
            lap, deg = normalized_laplacian(w)
            lam, _ = jacobi_eigh(np.eye(n) - lap)
            assert np.all(np.abs(lam.data) <= 1 + 1e-9)
            # sqrt-degree-scaled constant vector spans the kernel when connected
            assert np.linalg.norm(lap @ np.sqrt(deg)) < 1e-9

    def test_rejects_invalid_weights(self):
        with pytest.raises(ContractError, match="negative"):
            normalized_laplacian(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        with pytest.raises(ContractError, match="asymmetric"):
            normalized_laplacian(np.array([[0.0, 1.0], [2.0, 0.0]]))
        with pytest.raises(ShapeError):
            normalized_laplacian(np.zeros((2, 3)))

    def test_differentiable_route_matches_numpy(self):
        rng = np.random.default_rng(15)
        w = np.abs(rng.normal(size=(5, 5))) + 0.1
        w = (w + w.T) * (1 - np.eye(5))
        lap_np, _ = normalized_laplacian(w)
        lap_dt = normalized_laplacian_diff(T.constant(w))
        assert np.allclose(lap_dt.data, lap_np, atol=1e-14)

    def test_differentiable_route_needs_positive_degrees(self):
        with pytest.raises(ContractError, match="positive degrees"):
            normalized_laplacian_diff(T.constant(np.zeros((3, 3))))

    def test_differentiable_route_gradcheck(self):
        rng = np.random.default_rng(16)
        base = np.abs(rng.normal(size=(4, 4))) + 0.5
        base = (base + base.T) * (1 - np.eye(4))
        probe = T.constant(rng.normal(size=(4, 4)))

        def f(x):
            return T.sum_(T.mul(normalized_laplacian_diff(x), probe))

        assert T.grad_check(f, T.parameter(base)) < 1e-6


class TestWorldToPixel:
    def test_affine_application(self):
        affine = np.array([[2.0, 0.0, 1.0], [0.0, 3.0, 2.0]])
        cols, rows = world_to_pixel(np.array([[1.0, 1.0], [0.0, -1.0]]), affine)
        assert np.array_equal(cols, [3.0, 1.0])
        assert np.array_equal(rows, [5.0, -1.0])

    def test_rejects_wrong_affine_shape(self):
        with pytest.raises(ShapeError):
            world_to_pixel(np.zeros((1, 2)), np.eye(3))


def _encoder_params(rng, channels=(2, 3, 3), embed_dim=4, bias=0.3,
                    zero_embed_bias=False, scale=0.4):
    conv_w, conv_b, conv_slope = [], [], []
    c_in = 1
    for c_out in channels:
        conv_w.append(T.parameter(rng.normal(0.0, scale, size=(3, 3, c_in, c_out))))
        conv_b.append(T.parameter(np.full(c_out, bias)))
        conv_slope.append(T.parameter(np.full(c_out, 0.25)))
        c_in = c_out
    embed_w = T.parameter(rng.normal(0.0, scale, size=(c_in, embed_dim)))
    embed_b = T.parameter(np.zeros(embed_dim) if zero_embed_bias
                          else rng.normal(0.0, 0.2, size=embed_dim))
    return EnvEncoderParams(conv_w, conv_b, conv_slope, embed_w, embed_b)


IDENTITY_AFFINE = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


class TestMapEncoder:
    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(21)
        image = rng.random((9, 9))
        params = _encoder_params(rng)
        positions = np.array([[1.3, 2.7], [6.1, 4.4], [4.0, 7.9]])
        got = encode_environment(image, IDENTITY_AFFINE, positions, params)
        want = env_encode_ref(image, IDENTITY_AFFINE, positions,
                              [w.data for w in params.conv_w],
                              [b.data for b in params.conv_b],
                              [s.data for s in params.conv_slope],
                              params.embed_w.data, params.embed_b.data)
        assert np.allclose(got.data, want, atol=1e-12)

    def test_featureless_image_gives_uniform_half(self):
        rng = np.random.default_rng(22)
        params = _encoder_params(rng, bias=0.0, zero_embed_bias=True)
        positions = np.array([[1.0, 1.0], [5.0, 2.0], [3.0, 6.0]])
        w = encode_environment(np.zeros((8, 8)), IDENTITY_AFFINE, positions, params)
        off = w.data[~np.eye(3, dtype=bool)]
        assert np.all(off == 0.5)
        assert np.all(np.diag(w.data) == 0.0)

    def test_single_agent_constant_zero(self):
        rng = np.random.default_rng(23)
        params = _encoder_params(rng)
        w = encode_environment(np.ones((6, 6)), IDENTITY_AFFINE,
                               np.array([[2.0, 2.0]]), params)
        assert w.shape == (1, 1) and w.data[0, 0] == 0.0
        assert not w.requires_grad

    def test_symmetry_range_and_zero_diag(self):
        rng = np.random.default_rng(24)
        params = _encoder_params(rng)
        positions = rng.random((5, 2)) * 7
        w = encode_environment(rng.random((8, 8)), IDENTITY_AFFINE, positions, params).data
        assert np.array_equal(w, w.T)
        assert np.all(np.diag(w) == 0.0)
        off = w[~np.eye(5, dtype=bool)]
        assert np.all((off > 0.0) & (off < 1.0))

    def test_permutation_conjugation_exact(self):
        rng = np.random.default_rng(25)
        params = _encoder_params(rng)
        image = rng.random((8, 8))
        positions = rng.random((4, 2)) * 7
        perm = [2, 0, 3, 1]
        base = encode_environment(image, IDENTITY_AFFINE, positions, params).data
        moved = encode_environment(image, IDENTITY_AFFINE, positions[perm], params).data
        assert np.array_equal(moved, _permute(base, perm))

    def test_position_outside_image(self):
        rng = np.random.default_rng(26)
        params = _encoder_params(rng)
        with pytest.raises(DataError, match="veh2"):
            encode_environment(np.ones((8, 8)), IDENTITY_AFFINE,
                               np.array([[1.0, 1.0], [9.5, 1.0]]), params,
                               agent_ids=["veh1", "veh2"])

    def test_missing_image(self):
        rng = np.random.default_rng(27)
        params = _encoder_params(rng)
        with pytest.raises(ConfigError, match="image"):
            encode_environment(None, IDENTITY_AFFINE, np.zeros((2, 2)), params)

    def test_gradcheck_through_encoder(self):
        rng = np.random.default_rng(28)
        params = _encoder_params(rng, channels=(2, 2), embed_dim=3, bias=0.5)
        image = rng.random((6, 6))
        positions = np.array([[1.2, 3.4], [4.1, 1.7]])
        probe = T.constant(rng.normal(size=(2, 2)))

        def run(p):
            return T.sum_(T.mul(
                encode_environment(image, IDENTITY_AFFINE, positions, p), probe))

        for leaf_name in ("conv0", "bias1", "embed"):
            if leaf_name == "conv0":
                leaf = params.conv_w[0]
                rebuild = lambda t: EnvEncoderParams(
                    [t, params.conv_w[1]], params.conv_b, params.conv_slope,
                    params.embed_w, params.embed_b)
            elif leaf_name == "bias1":
                leaf = params.conv_b[1]
                rebuild = lambda t: EnvEncoderParams(
                    params.conv_w, [params.conv_b[0], t], params.conv_slope,
                    params.embed_w, params.embed_b)
            else:
                leaf = params.embed_w
                rebuild = lambda t: EnvEncoderParams(
                    params.conv_w, params.conv_b, params.conv_slope,
                    t, params.embed_b)
            err = T.grad_check(lambda t: run(rebuild(t)), leaf)
            assert err < 1e-5, f"{leaf_name}: {err}"

    def test_golden_matrix_regression(self):
        # bilinear sampling is cross-checked against the scalar reference
        # above; this locks the full default-width encoder output in place
        rng = np.random.default_rng(2024)
        params = _encoder_params(rng, channels=(8, 16, 16), embed_dim=16, scale=0.05)
        image = rng.random((16, 16))
        positions = np.array([[2.5, 3.5], [11.25, 4.75], [7.0, 12.5]])
        w = encode_environment(image, IDENTITY_AFFINE, positions, params).data
        golden = np.array([
            [0.0, 0.5341191814287153, 0.5341686632206184],
            [0.5341191814287153, 0.0, 0.5342407120583857],
            [0.5341686632206184, 0.5342407120583857, 0.0],
        ])
        assert np.allclose(w, golden, atol=1e-12)
