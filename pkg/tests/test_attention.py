"""Temporal/spatial attention stages and their two-stage composition."""

import numpy as np
import pytest

from oracles import spatial_attention_ref, statt_ref, temporal_attention_ref
from spectraj import tensor as T
from spectraj.attention import (AttentionStageParams, spatial_attention,
                                statt, temporal_attention)
from spectraj.errors import ConfigError, ShapeError


def _stage_arrays(rng, c_in, d_k=5, d_out=5, heads=2):
    wq = [rng.normal(0, 0.5, size=(c_in, d_k)) for _ in range(heads)]
    wk = [rng.normal(0, 0.5, size=(c_in, d_k)) for _ in range(heads)]
    wv = [rng.normal(0, 0.5, size=(c_in, d_out)) for _ in range(heads)]
    wh = rng.normal(0, 0.5, size=(heads * d_out, heads * d_out))
    return wq, wk, wv, wh


def _wrap(arrays):
    wq, wk, wv, wh = arrays
    return AttentionStageParams([T.parameter(w) for w in wq],
                                [T.parameter(w) for w in wk],
                                [T.parameter(w) for w in wv],
                                T.parameter(wh))


class TestStages:
    def test_temporal_matches_scalar_oracle(self):
        rng = np.random.default_rng(31)
        y = rng.normal(size=(3, 2, 5))
        arrays = _stage_arrays(rng, 5)
        got = temporal_attention(T.constant(y), _wrap(arrays))
        assert got.shape == (3, 2, 10)
        assert np.allclose(got.data, temporal_attention_ref(y, *arrays), atol=1e-12)

    def test_spatial_matches_scalar_oracle(self):
        rng = np.random.default_rng(32)
        y = rng.normal(size=(4, 3, 5))
        arrays = _stage_arrays(rng, 5)
        got = spatial_attention(T.constant(y), _wrap(arrays))
        assert got.shape == (4, 3, 10)
        assert np.allclose(got.data, spatial_attention_ref(y, *arrays), atol=1e-12)

    def test_scores_row_stochastic(self):
        rng = np.random.default_rng(33)
        y = T.constant(rng.normal(size=(5, 4, 5)) * 3)
        params = _wrap(_stage_arrays(rng, 5))
        for fn in (temporal_attention, spatial_attention):
            _, weight_mats = fn(y, params, return_weights=True)
            for w in weight_mats:
                assert np.all(np.abs(w.data.sum(axis=-1) - 1.0) < 1e-9)
                assert np.all(w.data > 0)

    def test_single_timestep_is_projection_chain(self):
        rng = np.random.default_rng(34)
        y = rng.normal(size=(1, 3, 5))
        wq, wk, wv, wh = _stage_arrays(rng, 5)
        got = temporal_attention(T.constant(y), _wrap((wq, wk, wv, wh)))
        want = np.concatenate([y @ v for v in wv], axis=2) @ wh
        assert np.allclose(got.data, want, atol=1e-12)

    def test_single_agent_spatial_weight_is_one(self):
        rng = np.random.default_rng(35)
        y = rng.normal(size=(4, 1, 5))
        wq, wk, wv, wh = _stage_arrays(rng, 5)
        got, weights = spatial_attention(T.constant(y), _wrap((wq, wk, wv, wh)),
                                         return_weights=True)
        for w in weights:
            assert np.allclose(w.data, 1.0, atol=0)
        want = np.concatenate([y @ v for v in wv], axis=2) @ wh
        assert np.allclose(got.data, want, atol=1e-12)

    def test_identical_features_give_uniform_weights(self):
        rng = np.random.default_rng(36)
        row = rng.normal(size=5)
        y = np.broadcast_to(row, (6, 2, 5)).copy()
        params = _wrap(_stage_arrays(rng, 5))
        _, tw = temporal_attention(T.constant(y), params, return_weights=True)
        for w in tw:
            assert np.allclose(w.data, 1.0 / 6.0, atol=1e-12)
        _, sw = spatial_attention(T.constant(y), params, return_weights=True)
        for w in sw:
            assert np.allclose(w.data, 0.5, atol=1e-12)

    def test_channel_mismatch(self):
        rng = np.random.default_rng(37)
        params = _wrap(_stage_arrays(rng, 5))
        with pytest.raises(ShapeError, match="channels"):
            spatial_attention(T.constant(rng.normal(size=(2, 2, 4))), params)


class TestStatt:
    def _setup(self, rng, mode):
        temporal = _stage_arrays(rng, 5)
        spatial = _stage_arrays(rng, 10 if mode == "sequential" else 5)
        out_w = rng.normal(0, 0.5, size=(10, 5))
        return temporal, spatial, out_w

    @pytest.mark.parametrize("mode", ["sequential", "parallel"])
    def test_matches_scalar_oracle(self, mode):
        rng = np.random.default_rng(38)
        y = rng.normal(size=(4, 3, 5))
        temporal, spatial, out_w = self._setup(rng, mode)
        got = statt(T.constant(y), _wrap(temporal), _wrap(spatial),
                    T.parameter(out_w), mode=mode)
        assert got.shape == (4, 3, 5)
        assert np.allclose(got.data, statt_ref(y, temporal, spatial, out_w, mode),
                           atol=1e-12)

    def test_degenerate_case_is_linear_chain(self):
        # one agent, one timestep: every softmax collapses to weight 1
        rng = np.random.default_rng(39)
        y = rng.normal(size=(1, 1, 5))
        temporal, spatial, out_w = self._setup(rng, "sequential")
        got = statt(T.constant(y), _wrap(temporal), _wrap(spatial),
                    T.parameter(out_w), mode="sequential")
        mid = np.concatenate([y @ v for v in temporal[2]], axis=2) @ temporal[3]
        want = (np.concatenate([mid @ v for v in spatial[2]], axis=2)
                @ spatial[3] @ out_w)
        assert np.allclose(got.data, want, atol=1e-12)

    def test_zero_parameters_give_zero_output(self):
        rng = np.random.default_rng(40)
        y = rng.normal(size=(3, 2, 5))
        zero_stage = AttentionStageParams(
            [T.parameter(np.zeros((5, 5))) for _ in range(2)],
            [T.parameter(np.zeros((5, 5))) for _ in range(2)],
            [T.parameter(np.zeros((5, 5))) for _ in range(2)],
            T.parameter(np.zeros((10, 10))))
        zero_spatial = AttentionStageParams(
            [T.parameter(np.zeros((10, 5))) for _ in range(2)],
            [T.parameter(np.zeros((10, 5))) for _ in range(2)],
            [T.parameter(np.zeros((10, 5))) for _ in range(2)],
            T.parameter(np.zeros((10, 10))))
        got = statt(T.constant(y), zero_stage, zero_spatial,
                    T.parameter(np.zeros((10, 5))))
        assert np.array_equal(got.data, np.zeros((3, 2, 5)))

    def test_unknown_mode(self):
        rng = np.random.default_rng(41)
        temporal, spatial, out_w = self._setup(rng, "parallel")
        with pytest.raises(ConfigError, match="mode"):
            statt(T.constant(rng.normal(size=(2, 2, 5))), _wrap(temporal),
                  _wrap(spatial), T.parameter(out_w), mode="diagonal")

    def test_gradcheck_end_to_end(self):
        rng = np.random.default_rng(42)
        y = T.parameter(rng.normal(size=(3, 2, 5)))
        temporal, spatial, out_w = self._setup(rng, "sequential")
        t_params, s_params = _wrap(temporal), _wrap(spatial)
        out_param = T.parameter(out_w)
        probe = T.constant(rng.normal(size=(3, 2, 5)))

        def loss_wrt_input(x):
            return T.sum_(T.mul(statt(x, t_params, s_params, out_param), probe))

        assert T.grad_check(loss_wrt_input, y) < 1e-6

        def loss_wrt_wq(w):
            patched = AttentionStageParams([w, t_params.wq[1]], t_params.wk,
                                           t_params.wv, t_params.wh)
            return T.sum_(T.mul(statt(y, patched, s_params, out_param), probe))

        assert T.grad_check(loss_wrt_wq, t_params.wq[0]) < 1e-6

        def loss_wrt_out(w):
            return T.sum_(T.mul(statt(y, t_params, s_params, w), probe))

        assert T.grad_check(loss_wrt_out, out_param) < 1e-6
