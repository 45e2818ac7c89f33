import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volscan.errors import DegenerateObservationError, InvalidParameterError
from volscan.kernel import Kernel, half_level_radius
from volscan.model import ObservationIncrements, VolatilityFunction, simulate_batch
from volscan.statistic import (
    DetectionSet,
    Scale,
    ScaleGrid,
    c_hat_sq,
    canonical_ratios,
    capital_lambda,
    detection_set,
    lambda_k,
    lambda_vector,
    local_stat,
    multiscale_stat,
    penalty,
    scan_plan,
)

PSI1 = Kernel.psi_beta(1.0)
PSI_HALF = Kernel.psi_beta(0.5)


def obs_from(x):
    return ObservationIncrements(n=len(x), increments=np.asarray(x))


def null_obs(n, seed):
    return obs_from(simulate_batch(VolatilityFunction.constant(1.0), n, seed, 1)[0])


class TestWeights:
    def test_hand_values(self):
        s = Scale(0.5, 0.25)
        assert lambda_k(PSI1, 4, s, 2) == pytest.approx(0.25, abs=1e-15)
        assert lambda_k(PSI1, 4, s, 1) == 0.0
        assert lambda_k(PSI1, 4, s, 3) == pytest.approx(0.25, abs=1e-15)

    def test_index_error(self):
        with pytest.raises(IndexError):
            lambda_k(PSI1, 4, Scale(0.5, 0.25), 5)

    def test_capital_lambda(self):
        assert capital_lambda(PSI1, 4, Scale(0.5, 0.25)) == pytest.approx(0.25 * math.sqrt(2), rel=1e-14)

    def test_plan_matches_direct_weights(self):
        grid = ScaleGrid.build(256, PSI_HALF)
        plan = scan_plan(PSI_HALF, grid)
        for i in (0, len(grid) // 3, len(grid) - 1):
            s = grid.scales[i]
            lam = lambda_vector(PSI_HALF, 256, s)
            big = math.sqrt(np.sum(lam**2))
            assert plan.lambda_n[i] == pytest.approx(big, rel=1e-13)
            row = plan.weights.getrow(i).toarray().ravel()
            assert np.allclose(row, lam / (math.sqrt(2) * big), atol=1e-15)


class TestGrid:
    @pytest.mark.parametrize("n", [64, 256, 1024])
    @pytest.mark.parametrize("kernel", [PSI1, PSI_HALF])
    def test_scale_invariants(self, n, kernel):
        grid = ScaleGrid.build(n, kernel)
        k = 3 / half_level_radius(kernel)
        assert len(grid) > 0
        assert len(set(grid.scales)) == len(grid)
        for s in grid.scales:
            assert k / n <= s.h * (1 + 1e-12) and s.h < 0.5
            assert s.h - 1e-12 <= s.t <= 1 - s.h + 1e-12
        keys = [s.sort_key() for s in grid.scales]
        assert keys == sorted(keys)

    def test_empty_when_bandwidth_too_large(self):
        assert len(ScaleGrid.build(4, PSI1)) == 0

    def test_refine_is_finer(self):
        g = ScaleGrid.build(512, PSI1)
        r = g.refine()
        assert r.ratio == pytest.approx(2**0.25)
        assert len(r) > 2 * len(g)
        assert g.content_hash != r.content_hash
        assert ScaleGrid.build(512, PSI1).content_hash == g.content_hash

    @pytest.mark.parametrize("n", [256, 1024])
    @pytest.mark.parametrize("kernel", [PSI1, PSI_HALF])
    def test_lambda_bounds(self, n, kernel):
        plan = scan_plan(kernel, ScaleGrid.build(n, kernel))
        c = half_level_radius(kernel)
        assert np.all(plan.lambda_n <= 1.0)
        assert np.all(plan.lambda_n**2 >= (c / 3) * plan.h)
        assert np.all(plan.lambda_n >= 1.0 / n)


class TestEstimator:
    def test_sum_of_squares(self):
        assert c_hat_sq(obs_from([0.5, 0.5, 0.5, 0.5])) == 1.0

    def test_zero(self):
        assert c_hat_sq(obs_from([0.0, 0.0])) == 0.0

    def test_mc_mean(self):
        n, reps, c = 256, 10_000, 1.7
        x = simulate_batch(VolatilityFunction.constant(c), n, 4, reps)
        est = np.sum(x * x, axis=1)
        assert abs(est.mean() - c * c) <= 3 * math.sqrt(2 * c**4 / (n * reps))


class TestLocalStat:
    def test_centred_terms_vanish(self):
        n = 16
        x = np.full(n, math.sqrt(2.0 / n))
        assert local_stat(obs_from(x), PSI1, Scale(0.5, 0.25), 2.0) == pytest.approx(0.0, abs=1e-14)

    def test_hand_value(self):
        x = np.sqrt(np.array([1.0, 3.0, 1.0, 1.0]) / 4)
        assert local_stat(obs_from(x), PSI1, Scale(0.5, 0.25), 1.0) == pytest.approx(1.0, rel=1e-14)

    @given(st.floats(0.01, 100), st.integers(0, 10_000))
    def test_equivariance(self, c, seed):
        obs = null_obs(64, seed)
        s = Scale(0.4, 0.2)
        a = local_stat(obs, PSI1, s, 1.3)
        b = local_stat(obs_from(c * obs.increments), PSI1, s, c * c * 1.3)
        assert b == pytest.approx(a, rel=1e-12, abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidParameterError):
            local_stat(null_obs(8, 1), PSI1, Scale(0.5, 0.25), 0.0)

    def test_reflection_symmetry(self):
        n = 128
        obs = null_obs(n, 8)
        rev = obs_from(obs.increments[::-1])
        c = c_hat_sq(obs)
        for kt, kh in [(40, 16), (64, 32), (20, 10)]:
            t, h = kt / n, kh / n
            a = local_stat(obs, PSI_HALF, Scale(t, h), c)
            b = local_stat(rev, PSI_HALF, Scale(1 - t, h), c)
            assert abs(a) == pytest.approx(abs(b), rel=1e-12)


class TestPenalty:
    def test_unit_lambda(self):
        assert penalty(4, 1.0) == 0.0

    def test_small_n(self):
        assert penalty(4, math.exp(-1)) == pytest.approx(6.0, rel=1e-14)

    def test_large_n(self):
        assert penalty(10**6, math.exp(-1)) == pytest.approx(2 + 4 / (1000 * math.exp(-1)), rel=1e-14)
        assert penalty(10**6, math.exp(-1)) == pytest.approx(2.0109, abs=1e-4)

    @pytest.mark.parametrize("lam", [0.0, -0.1, 1.5])
    def test_domain(self, lam):
        with pytest.raises(InvalidParameterError):
            penalty(4, lam)


class TestMultiscale:
    def test_single_scale_grid(self):
        n = 64
        s = Scale(0.5, 0.25)
        grid = ScaleGrid.single(n, 6.0, s)
        obs = null_obs(n, 2)
        res = multiscale_stat(obs, PSI1, grid)
        direct = abs(local_stat(obs, PSI1, s, c_hat_sq(obs))) - penalty(n, capital_lambda(PSI1, n, s))
        # ratios are quantised to 20 significant bits before the scan
        assert res.sup_value == pytest.approx(direct, rel=1e-5, abs=1e-5)
        assert res.argmax == s

    def test_matches_direct_local_stats(self):
        n = 256
        grid = ScaleGrid.build(n, PSI1)
        obs = null_obs(n, 3)
        res = multiscale_stat(obs, PSI1, grid)
        c = c_hat_sq(obs)
        for i in range(0, len(grid), 97):
            s = grid.scales[i]
            assert res.raw[i] == pytest.approx(local_stat(obs, PSI1, s, c), abs=1e-5)
        assert res.sup_value == float(np.max(res.penalized))
        assert res.penalized[grid.scales.index(res.argmax)] == res.sup_value

    @given(st.sampled_from([2.0, 7.0, 100.0, 0.3, 1e-3, 12345.678]), st.integers(0, 2**31))
    def test_exact_scale_invariance(self, c, seed):
        n = 256
        grid = ScaleGrid.build(n, PSI1)
        obs = null_obs(n, seed)
        a = multiscale_stat(obs, PSI1, grid)
        b = multiscale_stat(obs_from(c * obs.increments), PSI1, grid)
        assert a.sup_value == b.sup_value
        assert a.argmax == b.argmax
        assert np.array_equal(a.raw, b.raw)

    def test_canonical_ratios_are_coarse(self):
        r = canonical_ratios(np.array([[0.1, 0.2, 0.3]]))
        m, _ = np.frexp(r)
        assert np.all(m * 2**20 == np.round(m * 2**20))

    def test_degenerate(self):
        grid = ScaleGrid.build(64, PSI1)
        with pytest.raises(DegenerateObservationError):
            multiscale_stat(obs_from(np.zeros(64)), PSI1, grid)

    def test_wrong_length(self):
        with pytest.raises(InvalidParameterError):
            multiscale_stat(null_obs(32, 1), PSI1, ScaleGrid.build(64, PSI1))

    def test_partition_independent(self):
        n = 256
        grid = ScaleGrid.build(n, PSI1)
        x = simulate_batch(VolatilityFunction.constant(1.0), n, 5, 700)
        plan = scan_plan(PSI1, grid)
        s1, i1 = plan.sups(x, workers=1)
        s4, i4 = plan.sups(x, workers=4)
        assert np.array_equal(s1, s4) and np.array_equal(i1, i4)
        single = multiscale_stat(obs_from(x[17]), PSI1, grid)
        assert single.sup_value == s1[17]

    def test_argmax_tie_breaks_by_order(self):
        n = 64
        grid = ScaleGrid.build(n, PSI1)
        x = np.full(n, 1.0 / math.sqrt(n))
        res = multiscale_stat(obs_from(x), PSI1, grid)
        # all raw statistics vanish so the first scale with the smallest penalty wins
        assert np.all(res.raw == 0)
        best = np.flatnonzero(res.penalized == res.sup_value)
        assert res.argmax == grid.scales[best[0]]

    def test_null_tight(self):
        n = 512
        grid = ScaleGrid.build(n, PSI1)
        x = simulate_batch(VolatilityFunction.constant(1.0), n, 6, 500)
        s, _ = scan_plan(PSI1, grid).sups(x)
        assert np.isfinite(np.quantile(s, 0.95))

    def test_csv_export(self, tmp_path):
        n = 128
        grid = ScaleGrid.build(n, PSI1)
        res = multiscale_stat(null_obs(n, 9), PSI1, grid)
        path = tmp_path / "scales.csv"
        res.to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["t", "h", "lambda_n", "raw", "penalty", "penalized"]
        assert len(rows) == len(grid) + 1
        assert float(rows[1][5]) == res.penalized[0]


class TestDetectionSet:
    def setup_method(self):
        n = 128
        self.grid = ScaleGrid.build(n, PSI1)
        self.res = multiscale_stat(null_obs(n, 10), PSI1, self.grid)

    def test_infinite_kappa(self):
        assert len(detection_set(self.res, math.inf)) == 0

    def test_contains_argmax(self):
        d = detection_set(self.res, self.res.sup_value - 1e-9)
        assert self.res.argmax in d.scales

    def test_members_exceed(self):
        kappa = self.res.sup_value - 0.5
        d = detection_set(self.res, kappa, alpha=0.05)
        table = self.res.per_scale
        for s in d.scales:
            raw, _, pen = table[s]
            assert abs(raw) > kappa + pen

    def test_json_round_trip(self):
        d = detection_set(self.res, self.res.sup_value - 0.3, alpha=0.1)
        obj = json.loads(d.to_json())
        assert obj["scales"] == [[s.t, s.h] for s in d.scales]
        back = DetectionSet.from_json(d.to_json())
        assert back.scales == d.scales and back.kappa == d.kappa

    def test_null_frequency(self, table512):
        n = 512
        grid = ScaleGrid.build(n, PSI1)
        x = simulate_batch(VolatilityFunction.constant(1.0), n, 20240601, 1000, offset=1 << 33)
        s, _ = scan_plan(PSI1, grid).sups(x)
        freq = np.mean(s > table512.kappa)
        assert freq <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 1000)
