"""Tests for the scoring head."""

import math

import numpy as np
import pytest
import scipy.optimize

from agrm import core
from agrm.head import (
    ABLATIONS,
    ACTIVATIONS,
    TELU_ARGMIN,
    TELU_MIN,
    FeaturePair,
    HeadConfig,
    HeadParams,
    ability_forward,
    difficulty_forward,
    grade_positions,
    head_forward,
    init_head,
    telu,
)


def random_pair(rng, d_img=8, d_txt=8):
    return FeaturePair(f_i=rng.standard_normal(d_img), f_t=rng.standard_normal(d_txt))


# ---------------------------------------------------------------------------
# telu activation
# ---------------------------------------------------------------------------


class TestTelu:
    def test_known_values(self):
        assert telu(0.0) == 0.0
        assert telu(1.0) == pytest.approx(math.tanh(math.e), abs=1e-15)

    def test_large_inputs_are_identity(self):
        assert telu(25.0) == 25.0
        assert telu(1000.0) == 1000.0

    def test_very_negative_vanishes(self):
        assert telu(-800.0) == 0.0
        assert telu(-40.0) == pytest.approx(0.0, abs=1e-15)

    def test_global_minimum_matches_numeric_oracle(self):
        """1-d minimization confirms the frozen minimum constant."""
        res = scipy.optimize.minimize_scalar(
            telu, bounds=(-5.0, 2.0), method="bounded", options={"xatol": 1e-13}
        )
        assert res.x == pytest.approx(TELU_ARGMIN, abs=1e-7)
        assert res.fun == pytest.approx(TELU_MIN, abs=1e-13)
        assert telu(TELU_ARGMIN) == pytest.approx(TELU_MIN, abs=1e-15)

    def test_never_below_frozen_minimum(self):
        xs = np.linspace(-30, 30, 20001)
        assert min(telu(float(x)) for x in xs) >= TELU_MIN - 1e-15


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


class TestConfig:
    def test_defaults_carry_guarantee_margin(self):
        cfg = HeadConfig()
        assert cfg.eta + TELU_MIN > core.gamma_threshold(cfg.d, cfg.alpha)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            HeadConfig(k=1)
        with pytest.raises(ValueError):
            HeadConfig(eta=0.0)
        with pytest.raises(ValueError):
            HeadConfig(activation="tanh")
        with pytest.raises(ValueError):
            HeadConfig(agg_mode="mean")
        with pytest.raises(ValueError):
            HeadConfig(ablation="both")


class TestFeaturePair:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            FeaturePair(f_i=[1.0, math.inf], f_t=[1.0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            FeaturePair(f_i=[], f_t=[1.0])


class TestHeadParams:
    def test_shape_validation(self):
        hp = init_head(4, 6)
        with pytest.raises(ValueError):
            HeadParams(
                config=hp.config,
                d_img=4,
                d_txt=6,
                agg_w=np.zeros(9),  # should be 10
                agg_b=np.zeros(()),
                phi_beta_w=np.zeros(6),
                phi_beta_b=np.zeros(()),
                phi_gamma_w=np.zeros(6),
                phi_gamma_b=np.zeros(()),
                phi_i_w=np.zeros(4),
                phi_i_b=np.zeros(()),
            )

    def test_copy_is_deep(self):
        hp = init_head(4, 6, seed=1)
        cp = hp.copy()
        cp.agg_w[0] += 1.0
        assert hp.agg_w[0] != cp.agg_w[0]

    def test_ablation_dims(self):
        img = init_head(4, 6, HeadConfig(ablation="image_only"))
        assert img.phi_beta_w.shape == (4,)
        assert img.phi_i_w.shape == (4,)
        txt = init_head(4, 6, HeadConfig(ablation="text_only"))
        assert txt.phi_beta_w.shape == (6,)
        assert txt.phi_i_w.shape == (6,)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


class TestInitHead:
    def test_deterministic_by_seed(self):
        a = init_head(8, 8, seed=42)
        b = init_head(8, 8, seed=42)
        for name in ("agg_w", "phi_beta_w", "phi_gamma_w", "phi_i_w"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        c = init_head(8, 8, seed=43)
        assert not np.array_equal(a.agg_w, c.agg_w)

    def test_fan_in_scaling(self):
        """Doubling the text width halves the squared weight scale."""
        rng = np.random.default_rng(0)
        small = [init_head(1, 8, seed=s).phi_beta_w for s in range(400)]
        big = [init_head(1, 16, seed=s).phi_beta_w for s in range(400)]
        var_small = np.var(np.concatenate(small))
        var_big = np.var(np.concatenate(big))
        # uniform(-s, s) has variance s^2 / 3 with s^2 = 1 / fan_in
        assert var_small == pytest.approx(1.0 / 8 / 3.0, rel=0.1)
        assert var_big == pytest.approx(1.0 / 16 / 3.0, rel=0.1)
        assert var_small / var_big == pytest.approx(2.0, rel=0.2)

    def test_biases_zero_except_spacing(self):
        hp = init_head(8, 8)
        assert float(hp.agg_b) == 0.0
        assert float(hp.phi_beta_b) == 0.0
        assert float(hp.phi_i_b) == 0.0
        # default eta already clears the threshold, so no bias lift needed
        assert float(hp.phi_gamma_b) == 0.0

    def test_small_eta_gets_bias_lift(self):
        for act in ACTIVATIONS:
            cfg = HeadConfig(eta=0.05, activation=act)
            hp = init_head(8, 8, cfg)
            bias = float(hp.phi_gamma_b)
            assert bias > 0.0
            # at zero input the spacing should clear the threshold
            _, gamma = difficulty_forward(
                hp, FeaturePair(f_i=np.zeros(8), f_t=np.zeros(8))
            )
            assert gamma > core.gamma_threshold()

    def test_fresh_heads_spacing_above_threshold(self):
        """Spot check: random heads on random inputs keep the guarantee."""
        thr = core.gamma_threshold()
        rng = np.random.default_rng(99)
        for seed in range(1000):
            hp = init_head(6, 6, seed=seed)
            _, gamma = difficulty_forward(hp, random_pair(rng, 6, 6))
            assert gamma > thr

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            init_head(0, 8)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


class TestAbilityForward:
    def test_linear_is_affine_in_features(self):
        rng = np.random.default_rng(7)
        hp = init_head(8, 8, seed=3)
        a = random_pair(rng)
        b = random_pair(rng)
        mid = FeaturePair(f_i=(a.f_i + b.f_i) / 2, f_t=(a.f_t + b.f_t) / 2)
        assert ability_forward(hp, mid) == pytest.approx(
            (ability_forward(hp, a) + ability_forward(hp, b)) / 2.0, abs=1e-12
        )

    def test_softmax_uniform_logits_center(self):
        """Zero weights give uniform grades, so ability = lambda_s / 2."""
        cfg = HeadConfig(agg_mode="softmax")
        hp = init_head(8, 8, cfg, seed=0)
        hp.agg_w[:] = 0.0
        pair = random_pair(np.random.default_rng(1))
        assert ability_forward(hp, pair) == pytest.approx(cfg.lambda_s / 2.0, abs=1e-12)

    def test_softmax_bounded_by_lambda_s(self):
        cfg = HeadConfig(agg_mode="softmax")
        rng = np.random.default_rng(11)
        for seed in range(50):
            hp = init_head(6, 6, cfg, seed=seed)
            th = ability_forward(hp, random_pair(rng, 6, 6))
            assert 0.0 <= th <= cfg.lambda_s

    def test_grade_positions(self):
        assert list(grade_positions(5)) == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])

    def test_independent_of_difficulty_weights(self):
        rng = np.random.default_rng(13)
        hp = init_head(8, 8, seed=5)
        pair = random_pair(rng)
        before = ability_forward(hp, pair)
        hp.phi_beta_w[:] = rng.standard_normal(8)
        hp.phi_gamma_w[:] = rng.standard_normal(8)
        hp.phi_i_w[:] = rng.standard_normal(8)
        assert ability_forward(hp, pair) == before


class TestDifficultyForward:
    def test_matches_manual_composition(self):
        rng = np.random.default_rng(17)
        hp = init_head(8, 8, seed=9)
        pair = random_pair(rng)
        b_prior = float(hp.phi_beta_w @ pair.f_t + hp.phi_beta_b)
        g_prior = float(hp.phi_gamma_w @ pair.f_t + hp.phi_gamma_b)
        tau = float(hp.phi_i_w @ pair.f_i + hp.phi_i_b)
        beta1, gamma = difficulty_forward(hp, pair)
        assert beta1 == pytest.approx(telu(b_prior + tau), abs=1e-15)
        assert gamma == pytest.approx(telu(g_prior + tau) + 1.2, abs=1e-15)

    def test_independent_of_ability_weights(self):
        rng = np.random.default_rng(19)
        hp = init_head(8, 8, seed=21)
        pair = random_pair(rng)
        before = difficulty_forward(hp, pair)
        hp.agg_w[:] = rng.standard_normal(16)
        assert difficulty_forward(hp, pair) == before

    def test_telu_spacing_floor(self):
        """gamma can never fall below eta + min(telu), whatever the input."""
        rng = np.random.default_rng(23)
        cfg = HeadConfig()
        lo = cfg.eta + TELU_MIN
        for seed in range(200):
            hp = init_head(5, 5, seed=seed)
            f = FeaturePair(f_i=rng.standard_normal(5) * 10, f_t=rng.standard_normal(5) * 10)
            _, gamma = difficulty_forward(hp, f)
            assert gamma >= lo - 1e-12

    def test_no_temperature_ablation_uses_priors_directly(self):
        cfg = HeadConfig(ablation="no_temperature")
        hp = init_head(8, 8, cfg, seed=31)
        pair = random_pair(np.random.default_rng(29))
        out = head_forward(hp, pair)
        assert out.tau == 0.0
        assert out.beta1 == pytest.approx(telu(out.beta1_prior), abs=1e-15)

    def test_image_only_ablation_ignores_text_in_priors(self):
        cfg = HeadConfig(ablation="image_only")
        hp = init_head(8, 8, cfg, seed=33)
        rng = np.random.default_rng(35)
        f_i = rng.standard_normal(8)
        a = FeaturePair(f_i=f_i, f_t=rng.standard_normal(8))
        b = FeaturePair(f_i=f_i, f_t=rng.standard_normal(8))
        assert difficulty_forward(hp, a) == difficulty_forward(hp, b)

    def test_text_only_ablation_ignores_image_in_temperature(self):
        cfg = HeadConfig(ablation="text_only")
        hp = init_head(8, 8, cfg, seed=37)
        rng = np.random.default_rng(39)
        f_t = rng.standard_normal(8)
        a = FeaturePair(f_i=rng.standard_normal(8), f_t=f_t)
        b = FeaturePair(f_i=rng.standard_normal(8), f_t=f_t)
        assert difficulty_forward(hp, a) == difficulty_forward(hp, b)


class TestHeadForward:
    def test_output_is_consistent(self):
        rng = np.random.default_rng(41)
        hp = init_head(8, 8, seed=43)
        pair = random_pair(rng)
        out = head_forward(hp, pair)
        assert out.theta == ability_forward(hp, pair)
        assert (out.beta1, out.gamma) == difficulty_forward(hp, pair)
        assert out.q == pytest.approx(core.expected_score(out.probs), abs=1e-15)
        assert out.q_rescaled == pytest.approx(core.rescale_score(out.q, 5), abs=1e-15)

    def test_probs_normalized_and_score_in_range(self):
        rng = np.random.default_rng(47)
        for seed in range(300):
            hp = init_head(6, 6, seed=seed)
            out = head_forward(hp, random_pair(rng, 6, 6))
            assert math.fsum(out.probs) == pytest.approx(1.0, abs=1e-12)
            assert 0.0 <= out.q_rescaled <= 5.0

    def test_default_outputs_unimodal(self):
        rng = np.random.default_rng(53)
        for seed in range(300):
            hp = init_head(6, 6, seed=seed)
            out = head_forward(hp, random_pair(rng, 6, 6))
            assert out.gamma > core.gamma_threshold()
            assert core.is_unimodal(out.probs)

    def test_all_scale_sizes(self):
        rng = np.random.default_rng(59)
        for k in (3, 5, 7, 9):
            hp = init_head(6, 6, HeadConfig(k=k), seed=k)
            out = head_forward(hp, random_pair(rng, 6, 6))
            assert len(out.probs) == k
            assert 0.0 <= out.q_rescaled <= 5.0

    def test_sub_threshold_spacing_warns_not_raises(self):
        """Ablation activations may dip below the threshold; that's a warning."""
        cfg = HeadConfig(activation="relu", eta=0.2)
        hp = init_head(8, 8, cfg, seed=61)
        hp.phi_gamma_b[()] = 0.0
        hp.phi_gamma_w[:] = 0.0
        hp.phi_i_w[:] = 0.0  # gamma = relu(0) + 0.2 = 0.2 < threshold
        pair = random_pair(np.random.default_rng(67))
        with pytest.warns(RuntimeWarning, match="unimodality threshold"):
            out = head_forward(hp, pair)
        assert out.gamma == pytest.approx(0.2)

    def test_mismatched_features_rejected(self):
        hp = init_head(8, 8)
        with pytest.raises(ValueError):
            head_forward(hp, FeaturePair(f_i=np.zeros(4), f_t=np.zeros(8)))

    def test_softmax_mode_end_to_end(self):
        cfg = HeadConfig(agg_mode="softmax")
        hp = init_head(8, 8, cfg, seed=71)
        out = head_forward(hp, random_pair(np.random.default_rng(73)))
        assert math.fsum(out.probs) == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= out.theta <= cfg.lambda_s

    def test_every_ablation_and_activation_runs(self):
        rng = np.random.default_rng(79)
        for act in ACTIVATIONS:
            for abl in ABLATIONS:
                cfg = HeadConfig(activation=act, ablation=abl)
                hp = init_head(5, 7, cfg, seed=hash((act, abl)) % 2**31)
                out = head_forward(
                    hp, FeaturePair(f_i=rng.standard_normal(5), f_t=rng.standard_normal(7))
                )
                assert math.isfinite(out.q_rescaled)
