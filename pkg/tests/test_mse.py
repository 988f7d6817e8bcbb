import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mldfm.errors import DegeneracyError, ParameterError
from mldfm.mse import (
    AvarEstimate,
    GammaEstimate,
    SubsampleConfig,
    ThresholdConfig,
    avar,
    avar_to_csv,
    avar_to_json,
    base_avar_path,
    block_starts,
    chi_square_quantile,
    confidence_region_contains,
    gamma_fpr,
    gamma_hr,
    gamma_hr_path,
    gamma_true,
    omega_nt,
    quadratic_form,
    sample_idio_cov,
    select_delta_cv,
    subsample_correction,
    subsample_dispersion,
    threshold_idio_cov,
)
from mldfm.panel import GroupStructure, simulate_design
from mldfm.pc import pc_extract, residuals


def is_sym_psd(A):
    return np.abs(A - A.T).max() <= 1e-12 and np.linalg.eigvalsh(A)[0] >= -1e-10


class TestGammaTrue:
    def test_identity(self):
        np.testing.assert_allclose(gamma_true(np.eye(2), 0.3 * np.eye(2)).value, 0.15 * np.eye(2))

    def test_hand_double_sum(self):
        rho = 0.4
        g = gamma_true(np.ones((2, 1)), np.array([[1, rho], [rho, 1]]))
        np.testing.assert_allclose(g.value, [[1 + rho]])

    def test_homoscedastic_reduction(self):
        Lam = np.random.default_rng(0).standard_normal((20, 3))
        s2 = 0.25
        np.testing.assert_allclose(gamma_true(Lam, s2 * np.eye(20)).value, s2 * Lam.T @ Lam / 20, atol=1e-14)

    def test_shape_check(self):
        with pytest.raises(ParameterError):
            gamma_true(np.ones((3, 1)), np.eye(2))


class TestAvar:
    def test_trivial(self):
        Lam = np.sqrt(100) * np.linalg.qr(np.random.default_rng(1).standard_normal((100, 2)))[0]
        np.testing.assert_allclose(avar(Lam, np.eye(2)).value, 0.01 * np.eye(2), atol=1e-14)

    def test_homoscedastic_form(self):
        d = simulate_design(GroupStructure.dfm(40, 3), 30, seed=1)
        Lam = d.loadings.Lambda
        A = avar(Lam, gamma_true(Lam, d.sigma_eps)).value
        expected = 0.25 / 40 * np.linalg.inv(Lam.T @ Lam / 40)
        np.testing.assert_allclose(A, expected, rtol=1e-12, atol=1e-14)
        assert np.abs(A - np.diag(np.diag(A))).max() < 1e-12 * A.max()

    def test_two_by_two_oracle(self):
        rng = np.random.default_rng(2)
        Lam = rng.standard_normal((7, 2))
        Gm = rng.standard_normal((2, 2))
        Gm = Gm @ Gm.T
        N = 7
        a, b, c = (Lam.T @ Lam / N)[0, 0], (Lam.T @ Lam / N)[0, 1], (Lam.T @ Lam / N)[1, 1]
        det = a * c - b * b
        inv = np.array([[c, -b], [-b, a]]) / det
        oracle = inv @ Gm @ inv / N
        np.testing.assert_allclose(avar(Lam, Gm).value, oracle, atol=1e-12)

    def test_stack(self):
        rng = np.random.default_rng(3)
        Lam = rng.standard_normal((9, 2))
        stack = np.stack([np.eye(2), 2 * np.eye(2)])
        out = avar(Lam, stack).value
        np.testing.assert_allclose(out[1], 2 * out[0], rtol=1e-12)

    def test_singular(self):
        with pytest.raises(DegeneracyError):
            avar(np.ones((5, 2)), np.eye(2))

    def test_variant_tag(self):
        assert avar(np.eye(2), GammaEstimate(np.eye(2), "HR", 3)).variant == "HR"


class TestHR:
    def test_zero_residuals(self):
        np.testing.assert_array_equal(gamma_hr(np.ones((3, 2)), np.zeros(3)).value, np.zeros((2, 2)))

    def test_hand_case(self):
        g = gamma_hr(np.array([[1.0], [2.0]]), np.array([1.0, -1.0]))
        np.testing.assert_allclose(g.value, [[2.5]])

    @given(st.integers(2, 10), st.integers(1, 3), st.integers(0, 2**31))
    def test_psd_and_path(self, N, r, seed):
        rng = np.random.default_rng(seed)
        Lam = rng.standard_normal((N, r))
        E = rng.standard_normal((4, N))
        path = gamma_hr_path(Lam, E)
        for t in range(4):
            g = gamma_hr(Lam, E[t]).value
            np.testing.assert_allclose(path[t], g, atol=1e-12)
            assert is_sym_psd(g)

    def test_direct_loop_oracle(self):
        rng = np.random.default_rng(4)
        Lam = rng.standard_normal((6, 2))
        e = rng.standard_normal(6)
        oracle = sum(np.outer(Lam[i], Lam[i]) * e[i] ** 2 for i in range(6)) / 6
        np.testing.assert_allclose(gamma_hr(Lam, e).value, oracle, atol=1e-12)

    def test_length_check(self):
        with pytest.raises(ParameterError):
            gamma_hr(np.ones((3, 1)), np.ones(2))


class TestThreshold:
    def test_sample_cov_ones(self):
        assert sample_idio_cov(np.ones((5, 2)), 0, 0) == 1.0

    def test_sample_cov_orthogonal(self):
        E = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert sample_idio_cov(E, 0, 1) == 0.0

    def test_sample_cov_loop(self):
        E = np.random.default_rng(5).standard_normal((10, 2))
        loop = 0.0
        for t in range(10):
            loop += E[t, 0] * E[t, 1]
        assert abs(sample_idio_cov(E, 0, 1) - loop / 10) < 1e-14

    def test_delta_zero_is_sample_cov(self):
        E = np.random.default_rng(6).standard_normal((12, 5))
        np.testing.assert_allclose(threshold_idio_cov(E, ThresholdConfig(0.0)), E.T @ E / 12, atol=1e-14)

    def test_omega(self):
        assert abs(omega_nt(100, 100) - 0.31460) < 1e-5

    def test_direct_loop_oracle(self):
        rng = np.random.default_rng(7)
        E = rng.standard_normal((10, 6))
        E[:, 1] += 0.9 * E[:, 0]
        delta = 0.8
        T, N = E.shape
        w = 1 / np.sqrt(N) + np.sqrt(np.log(N) / T)
        out = np.zeros((N, N))
        for i in range(N):
            for j in range(N):
                s = sum(E[t, i] * E[t, j] for t in range(T)) / T
                theta = sum((E[t, i] * E[t, j] - s) ** 2 for t in range(T)) / T
                if i == j or abs(s) >= delta * w * np.sqrt(theta):
                    out[i, j] = s
        np.testing.assert_allclose(threshold_idio_cov(E, ThresholdConfig(delta)), out, atol=1e-10)

    def test_large_delta_kills_off_diagonals(self):
        d = simulate_design(GroupStructure.dfm(30, 3), 200, seed=8)
        p = d.draw_panel(0)
        E = residuals(p, pc_extract(p, 3))
        S = threshold_idio_cov(E, ThresholdConfig(50.0))
        assert np.count_nonzero(S - np.diag(np.diag(S))) == 0
        np.testing.assert_allclose(np.diag(S), np.mean(E**2, axis=0), atol=1e-14)

    @given(st.floats(0, 3), st.floats(0, 3), st.integers(0, 2**31))
    def test_monotone_in_delta(self, d1, d2, seed):
        lo, hi = sorted((d1, d2))
        E = np.random.default_rng(seed).standard_normal((15, 6))
        a = threshold_idio_cov(E, ThresholdConfig(lo)) != 0
        b = threshold_idio_cov(E, ThresholdConfig(hi)) != 0
        assert np.all(a | ~b)

    def test_negative_delta(self):
        with pytest.raises(ParameterError):
            ThresholdConfig(-1.0)

    def test_cv_picks_grid_value(self):
        E = np.random.default_rng(9).standard_normal((40, 8))
        grid = (0.0, 1.0, 2.0)
        assert select_delta_cv(E, grid) in grid


class TestFPR:
    def test_diagonal_matches_hr_average(self):
        rng = np.random.default_rng(10)
        Lam = rng.standard_normal((8, 2))
        E = rng.standard_normal((20, 8))
        S = np.diag(np.mean(E**2, axis=0))
        hr = gamma_hr_path(Lam, E).mean(axis=0)
        np.testing.assert_allclose(gamma_fpr(Lam, S).value, hr, atol=1e-12)

    def test_zero(self):
        np.testing.assert_array_equal(gamma_fpr(np.ones((3, 2)), np.zeros((3, 3))).value, np.zeros((2, 2)))

    def test_triple_product(self):
        rng = np.random.default_rng(11)
        Lam = rng.standard_normal((3, 2))
        S = rng.standard_normal((3, 3))
        S = S @ S.T
        oracle = np.zeros((2, 2))
        for i in range(3):
            for j in range(3):
                oracle += np.outer(Lam[i], Lam[j]) * S[i, j]
        np.testing.assert_allclose(gamma_fpr(Lam, S).value, oracle / 3, atol=1e-13)

    def test_hr_fpr_close_when_uncorrelated(self):
        d = simulate_design(GroupStructure.dfm(100, 3), 100, seed=12)
        p = d.draw_panel(1)
        est = pc_extract(p, 3)
        E = residuals(p, est)
        hr = np.diag(base_avar_path(est.Lambda_hat, E, "HR").mean(axis=0))
        fpr = np.diag(base_avar_path(est.Lambda_hat, E, "FPR")[0])
        np.testing.assert_allclose(fpr, hr, rtol=0.10)


class TestSubsampling:
    def setup_method(self):
        self.design = simulate_design(GroupStructure.dfm(40, 2), 60, seed=13)
        self.panel = self.design.draw_panel(0)

    def test_single_full_block_is_base(self):
        est = pc_extract(self.panel, 2)
        E = residuals(self.panel, est)
        out = subsample_correction(self.panel, "PC", "HR", SubsampleConfig(1, 1.0), est.Lambda_hat, E)
        base = base_avar_path(est.Lambda_hat, E, "HR")
        np.testing.assert_array_equal(np.stack([a.value for a in out]), base)
        assert out[0].variant == "HRS" and out[0].t == 1

    @pytest.mark.parametrize("base_variant", ["HR", "FPR"])
    def test_correction_is_psd(self, base_variant):
        est = pc_extract(self.panel, 2)
        E = residuals(self.panel, est)
        cfg = SubsampleConfig(10, 0.75, 3)
        out = subsample_correction(self.panel, "PC", base_variant, cfg, est.Lambda_hat, E)
        base = base_avar_path(est.Lambda_hat, E, base_variant)
        for t, a in enumerate(out):
            diff = a.value - base[t]
            assert is_sym_psd(diff)
            assert np.all(np.diag(a.value) >= np.diag(base[t]))

    def test_sls_subsampling(self, noisy_ml):
        p = noisy_ml.draw_panel(0)
        out = subsample_correction(p, "SLS", "FPR", SubsampleConfig(4, 0.8, 1))
        assert len(out) == p.T and out[0].variant == "FPRS"
        assert np.all(np.isfinite(out[0].value))

    def test_block_starts_in_range(self):
        cfg = SubsampleConfig(200, 0.75, 5)
        s = block_starts(60, cfg)
        assert s.min() >= 0 and s.max() <= 60 - 45

    def test_block_too_short(self):
        with pytest.raises(ParameterError):
            subsample_dispersion(self.panel, np.ones((40, 2)), "PC", SubsampleConfig(2, 0.03))

    def test_bad_configs(self):
        with pytest.raises(ParameterError):
            SubsampleConfig(0)
        with pytest.raises(ParameterError):
            SubsampleConfig(5, 1.5)
        with pytest.raises(ParameterError):
            subsample_correction(self.panel, "PC", "TRUE", SubsampleConfig())


class TestRegions:
    def test_quantiles(self):
        assert abs(chi_square_quantile(1, 0.95) - 3.8414588) < 1e-6
        assert abs(chi_square_quantile(2, 0.95) - (-2 * np.log(0.05))) < 1e-9

    @pytest.mark.parametrize("r", range(1, 8))
    def test_median_below_mean(self, r):
        assert chi_square_quantile(r, 0.5) < r

    def test_at_truth(self):
        for alpha in (0.01, 0.05, 0.5):
            assert confidence_region_contains(np.ones(2), np.eye(2), np.ones(2), alpha)

    def test_scalar_boundary(self):
        A = np.array([[0.04]])
        half = np.sqrt(0.04 * chi_square_quantile(1, 0.95))
        assert abs(half - 0.392) < 1e-3
        assert confidence_region_contains(np.zeros(1), A, np.array([half - 1e-9]))
        assert not confidence_region_contains(np.zeros(1), A, np.array([half + 1e-9]))

    @given(st.floats(-3, 3), st.floats(0.01, 0.5))
    def test_monotone_in_alpha(self, f, alpha):
        A = np.array([[0.5]])
        inside_wide = confidence_region_contains(np.zeros(1), A, np.array([f]), alpha / 5)
        inside_narrow = confidence_region_contains(np.zeros(1), A, np.array([f]), alpha)
        assert inside_wide or not inside_narrow

    def test_quadratic_form_broadcast(self):
        d = np.array([[1.0, 0.0], [0.0, 2.0]])
        q = quadratic_form(np.zeros((2, 2)), np.stack([np.eye(2), np.eye(2)]), d)
        np.testing.assert_allclose(q, [1.0, 4.0])

    def test_singular_region(self):
        with pytest.raises(DegeneracyError):
            quadratic_form(np.zeros(2), np.zeros((2, 2)), np.ones(2))


def test_export_formats():
    a = [AvarEstimate(np.array([[0.1, 0.2], [0.2, 1 / 3]]), "HR", 10, 1)]
    text = avar_to_csv(a)
    lines = text.splitlines()
    assert lines[0] == "variant,t,i,j,value"
    assert len(lines) == 5
    assert float(lines[4].split(",")[-1]) == 1 / 3
    rec = json.loads(avar_to_json(a))
    assert rec[0]["variant"] == "HR" and rec[0]["matrix"][3] == 1 / 3
