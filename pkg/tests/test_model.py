import numpy as np
import pytest

from rawgat_st import ops
from rawgat_st.frontend import SincFrontend, build_filterbank
from rawgat_st.layers import Dense, count_parameters
from rawgat_st.model import (
    BONA,
    SPOOF,
    STANDARD_SHAPES,
    ConfigError,
    ModelConfig,
    RawGatST,
    expected_shapes,
    mask_rows,
    scores_from_logits,
    shape_trace,
    spectral_readout,
    temporal_readout,
)
from rawgat_st.pooling import pooled_count
from rawgat_st.tensor import Tensor, no_grad

SHORT = 2400


def small(**kw):
    kw.setdefault("segment_length", SHORT)
    kw.setdefault("dtype", "float64")
    return ModelConfig(**kw)


def hand_count(cfg: ModelConfig) -> int:
    """Trainable scalars, tallied layer by layer."""
    total = 2  # front-end BN
    c_in = 1
    for c_out, n in zip(cfg.res_channels, cfg.res_blocks):
        for _ in range(n):
            total += 2 * c_in + (6 * c_in * c_out + c_out) + 2 * c_out + (6 * c_out * c_out + c_out)
            if c_in != c_out:
                total += c_in * c_out + c_out
            c_in = c_out

    def gat(d, dp):
        return d + 2 * (d * dp + dp) + 2 * dp

    n_spec, n_temp = cfg.branch_nodes()
    for used, kept in ((cfg.use_spectral, n_spec), (cfg.use_temporal, n_temp)):
        if used:
            total += gat(c_in, cfg.gat_dim) + (cfg.gat_dim if cfg.use_pooling else 0) + kept * 12 + 12
    total += gat(cfg.st_in_dim, cfg.st_dim) + (cfg.st_dim if cfg.use_pooling else 0)
    total += cfg.st_dim + 1 + cfg.output_nodes * 2 + 2
    return total


class TestReadout:
    def test_shapes(self):
        S = Tensor(np.random.default_rng(0).standard_normal((64, 23, 29)))
        assert spectral_readout(S).shape == (23, 64)
        assert temporal_readout(S).shape == (29, 64)

    def test_constant_over_time(self):
        S = np.zeros((3, 4, 5))
        S[:] = -2.5
        np.testing.assert_array_equal(spectral_readout(Tensor(S)).data, 2.5)

    def test_single_entry(self):
        S = np.zeros((4, 3, 6))
        S[2, 1, 4] = -5.0
        g = spectral_readout(Tensor(S)).data
        expect = np.zeros((3, 4))
        expect[1, 2] = 5.0
        np.testing.assert_array_equal(g, expect)

    def test_abs_symmetry(self):
        S = np.random.default_rng(1).standard_normal((4, 3, 6))
        np.testing.assert_array_equal(temporal_readout(Tensor(S)).data, temporal_readout(Tensor(-S)).data)

    @pytest.mark.parametrize("seed", range(3))
    def test_loop_oracle(self, seed):
        S = np.random.default_rng(seed).standard_normal((5, 4, 6))
        C, F, T = S.shape
        spec = np.zeros((F, C))
        temp = np.zeros((T, C))
        for c in range(C):
            for f in range(F):
                for t in range(T):
                    spec[f, c] = max(spec[f, c], abs(S[c, f, t]))
                    temp[t, c] = max(temp[t, c], abs(S[c, f, t]))
        np.testing.assert_array_equal(spectral_readout(Tensor(S)).data, spec)
        np.testing.assert_array_equal(temporal_readout(Tensor(S)).data, temp)

    def test_bad_shape(self):
        with pytest.raises(ops.ShapeError):
            spectral_readout(Tensor(np.zeros((3, 4))))


class TestConfig:
    def test_defaults_valid(self):
        cfg = ModelConfig().validate()
        assert (cfg.frequency_rows, cfg.frontend_width, cfg.time_frames) == (23, 21490, 29)
        assert cfg.branch_nodes() == (14, 23)
        assert cfg.output_nodes == 7

    @pytest.mark.parametrize(
        "kw, field",
        [
            ({"k_spec": 2.0}, "k_spec"),
            ({"k_st": 0.0}, "k_st"),
            ({"fusion": "max"}, "fusion"),
            ({"use_spectral": False, "use_temporal": False}, "use_spectral"),
            ({"segment_length": 1000}, "segment_length"),
            ({"mask_limit": 24}, "mask_limit"),
            ({"kernel_length": 128}, "kernel_length"),
        ],
    )
    def test_rejects(self, kw, field):
        with pytest.raises(ConfigError, match=field):
            ModelConfig(**kw).validate()

    def test_dict_roundtrip(self):
        cfg = ModelConfig(fusion="concat", use_pooling=False)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError, match="bogus"):
            ModelConfig.from_dict({"bogus": 1})


class TestShapes:
    @pytest.mark.parametrize("mode", ["add", "mul", "concat"])
    def test_arithmetic_trace_matches_table(self, mode):
        assert expected_shapes(ModelConfig(fusion=mode)) == STANDARD_SHAPES[mode]

    @pytest.mark.parametrize("mode", ["add", "mul", "concat"])
    @pytest.mark.parametrize(
        "ablation", [{}, {"use_pooling": False}, {"use_spectral": False}, {"use_temporal": False}]
    )
    def test_trace_matches_arithmetic(self, mode, ablation):
        cfg = small(fusion=mode, **ablation)
        assert dict(shape_trace(RawGatST(cfg))) == expected_shapes(cfg)

    def test_no_pooling_wiring(self):
        cfg = ModelConfig(use_pooling=False)
        shapes = expected_shapes(cfg)
        assert cfg.branch_nodes() == (23, 29)
        assert shapes["projection"] == ((32, 12), (32, 12))
        assert shapes["st_pool"] is None
        assert shapes["st_projection"] == (1, 12)

    def test_wrong_length_names_stage(self):
        with pytest.raises(ValueError, match="front-end"):
            RawGatST(small())(np.zeros(SHORT - 1))


class TestParameters:
    def test_dense_count(self):
        assert count_parameters(Dense(2, 3, np.random.default_rng(0))) == 9

    def test_frontend_only(self):
        assert count_parameters(SincFrontend(build_filterbank(), 1000)) == 2

    @pytest.mark.parametrize("mode", ["add", "mul", "concat"])
    @pytest.mark.parametrize("ablation", [{}, {"use_pooling": False}, {"use_spectral": False}])
    def test_matches_hand_count(self, mode, ablation):
        cfg = small(fusion=mode, **ablation)
        assert RawGatST(cfg).num_parameters() == hand_count(cfg)

    def test_full_model_count(self):
        assert hand_count(ModelConfig()) == 217193
        assert hand_count(ModelConfig(fusion="concat")) == 218249

    def test_length_enters_through_temporal_projection(self):
        # graph node counts depend on length only through the temporal branch
        a = RawGatST(small(segment_length=4502)).num_parameters()
        b = RawGatST(small(segment_length=6689)).num_parameters()
        assert b - a == 12 * (pooled_count(3, 0.81) - pooled_count(2, 0.81))


class TestForward:
    def test_logits_and_determinism(self):
        x = np.random.default_rng(0).standard_normal((2, SHORT)) * 0.1
        m1, m2 = RawGatST(small(seed=3)), RawGatST(small(seed=3))
        m1.eval(), m2.eval()
        with no_grad():
            a, b = m1(x).data, m2(x).data
        assert a.shape == (2, 2)
        np.testing.assert_array_equal(a, b)

    def test_single_utterance(self):
        m = RawGatST(small()).eval()
        assert m(np.zeros(SHORT)).shape == (2,)

    @pytest.mark.parametrize("branch", ["use_spectral", "use_temporal"])
    def test_single_branch_runs(self, branch):
        m = RawGatST(small(**{branch: False}))
        out = m(np.random.default_rng(0).standard_normal((3, SHORT)))
        assert out.shape == (3, 2)
        out.sum().backward()
        assert all(p.grad is not None for p in m.parameters())

    def test_mask_ignored_in_eval(self):
        x = np.random.default_rng(0).standard_normal((2, SHORT))
        m = RawGatST(small()).eval()
        np.testing.assert_array_equal(m(x, mask=(3, 10)).data, m(x).data)

    def test_mask_applies_in_training(self):
        x = np.random.default_rng(0).standard_normal((4, SHORT))
        m = RawGatST(small())
        assert not np.array_equal(m(x, mask=(3, 10)).data, m(x).data)

    def test_mask_rows(self):
        x = Tensor(np.ones((2, 1, 5, 3)))
        y = mask_rows(x, 1, 2).data
        assert np.all(y[:, :, [1, 2]] == 0) and np.all(y[:, :, [0, 3, 4]] == 1)

    def test_scores(self):
        logits = np.array([[1.0, 3.0], [2.0, -1.0]])
        np.testing.assert_array_equal(scores_from_logits(logits), logits[:, BONA] - logits[:, SPOOF])
