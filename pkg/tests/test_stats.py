"""Statistical tests and verdict classification against scipy oracles."""

import numpy as np
import pytest
from scipy import stats as sps

from hairbench import stats as S
from hairbench.errors import ContractViolation, DegenerateSampleError


class TestShapiroWilk:
    def test_normal_quantile_fixture_high_p(self):
        # standard normal quantiles at (i-0.5)/20: as normal as n=20 gets
        q = sps.norm.ppf((np.arange(1, 21) - 0.5) / 20)
        _, p = S.shapiro_wilk(q)
        assert p > 0.9

    def test_skewed_cubes_fixture_matches_reference(self):
        x = np.arange(1.0, 11.0) ** 3
        w, p = S.shapiro_wilk(x)
        ref_w, ref_p = sps.shapiro(x)
        # the reference implementation puts this fixture at p ~ 0.0625
        assert abs(p - ref_p) < 1e-4 and abs(w - ref_w) < 1e-4
        assert p < 0.07

    def test_constant_vector_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            S.shapiro_wilk(np.full(10, 3.3))

    def test_size_bounds(self):
        with pytest.raises(ContractViolation):
            S.shapiro_wilk([1.0, 2.0])

    def test_agreement_with_reference_over_fixtures(self):
        rng = np.random.default_rng(11)
        for i in range(20):
            n = int(rng.integers(3, 500))
            kind = i % 4
            if kind == 0:
                x = rng.normal(0, 1, n)
            elif kind == 1:
                x = rng.exponential(2.0, n)
            elif kind == 2:
                x = rng.uniform(-1, 1, n) ** 3
            else:
                x = rng.standard_t(3, n)
            w, p = S.shapiro_wilk(x)
            ref_w, ref_p = sps.shapiro(x)
            assert abs(p - ref_p) < 0.01, f"fixture {i} (n={n}): {p} vs {ref_p}"
            assert abs(w - ref_w) < 1e-3


class TestPairedT:
    def test_fixture_123(self):
        p = S.paired_t_test(np.array([1.0, 2.0, 3.0]), np.zeros(3))
        assert abs(p - 0.0742) < 1e-3
        # exact closed form for df=2: p = 1 - t/sqrt(2+t^2), t = 2*sqrt(3)
        t = 2.0 * np.sqrt(3.0)
        assert abs(p - (1.0 - t / np.sqrt(2.0 + t * t))) < 1e-12

    def test_equal_vectors_degenerate(self):
        x = np.array([1.0, 2.0, 3.0])
        with pytest.raises(DegenerateSampleError):
            S.paired_t_test(x, x)

    def test_sign_flip_leaves_p(self):
        rng = np.random.default_rng(12)
        a = rng.normal(0.4, 1.0, 12)
        b = rng.normal(0.0, 1.0, 12)
        assert abs(S.paired_t_test(a, b) - S.paired_t_test(b, a)) < 1e-14

    def test_matches_scipy(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            n = int(rng.integers(4, 60))
            a = rng.normal(0.2, 1.0, n)
            b = rng.normal(0.0, 1.0, n)
            assert abs(S.paired_t_test(a, b) - sps.ttest_rel(a, b).pvalue) < 1e-12


class TestWilcoxon:
    def test_all_positive_n5_exact(self):
        p = S.wilcoxon_signed_rank(np.array([1.0, 2, 3, 4, 5]), np.zeros(5))
        assert p == 0.0625  # 2 / 2^5

    def test_antisymmetric_p_one(self):
        p = S.wilcoxon_signed_rank(np.array([-2.0, -1.0, 1.0, 2.0]), np.zeros(4))
        assert p == 1.0

    def test_all_zero_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            S.wilcoxon_signed_rank(np.ones(6), np.ones(6))

    def test_tie_free_p_is_dyadic(self):
        rng = np.random.default_rng(14)
        d = rng.normal(0.5, 1.0, 12)
        p = S.wilcoxon_signed_rank(d, np.zeros(12))
        assert abs(p * 2 ** 12 / 2 - round(p * 2 ** 12 / 2)) < 1e-9

    def test_matches_scipy_exact(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            n = int(rng.integers(6, 24))
            d = rng.normal(0.3, 1.0, n)
            mine = S.wilcoxon_signed_rank(d, np.zeros(n))
            ref = sps.wilcoxon(d, mode="exact").pvalue
            assert abs(mine - ref) < 1e-12

    def test_exact_and_approx_agree_at_cutoff(self):
        rng = np.random.default_rng(16)
        for _ in range(10):
            d = rng.normal(0.25, 1.0, 25)
            pe = S.wilcoxon_signed_rank(d, np.zeros(25), force_branch="exact")
            pa = S.wilcoxon_signed_rank(d, np.zeros(25), force_branch="approx")
            assert abs(pe - pa) < 0.01

    def test_ties_share_average_ranks(self):
        # tied |d| values: check against literal enumeration of all 2^8
        # sign patterns over the observed average ranks (scipy's "exact"
        # mode assumes tie-free ranks, so it is not an oracle here)
        import itertools

        d = np.array([3.0, -3.0, 5.0, 5.0, -1.0, 2.0, 2.0, 7.0])
        ranks = S._average_ranks(np.abs(d))
        w_obs = min(ranks[d > 0].sum(), ranks[d < 0].sum())
        count = sum(ranks[np.array(signs) > 0].sum() <= w_obs
                    for signs in itertools.product([1, -1], repeat=8))
        assert S.wilcoxon_signed_rank(d, np.zeros(8)) == 2 * count / 256


class TestVerdicts:
    def _set(self, a, b, metric="PSNR", higher=True):
        return S.PairedSampleSet("A", "B", metric, tuple(a), tuple(b), higher)

    def test_identical_vectors_incomparable(self):
        rng = np.random.default_rng(17)
        v = rng.normal(30, 2, 12)
        verdict = S.verdict_for(self._set(v, v))
        assert verdict.classification == S.INCOMPARABLE

    def test_clear_improvement_double_check(self):
        rng = np.random.default_rng(18)
        b = rng.normal(30.0, 1.0, 30)
        a = b + 1.0 + rng.normal(0, 0.05, 30)
        verdict = S.verdict_for(self._set(a, b, higher=True))
        assert verdict.classification == S.BETTER_STRONG
        assert verdict.p_value < 0.05

    def test_lower_is_better_orientation(self):
        rng = np.random.default_rng(19)
        b = rng.normal(100.0, 5.0, 30)
        a = b - 20.0 + rng.normal(0, 0.5, 30)
        verdict = S.verdict_for(self._set(a, b, metric="MSE", higher=False))
        assert verdict.classification == S.BETTER_STRONG

    def test_swap_symmetry_on_random_sets(self):
        rng = np.random.default_rng(20)
        flip = {S.BETTER_STRONG: S.WORSE_STRONG, S.WORSE_STRONG: S.BETTER_STRONG,
                S.BETTER_WEAK: S.WORSE_WEAK, S.WORSE_WEAK: S.BETTER_WEAK}
        for i in range(100):
            n = int(rng.integers(5, 40))
            a = rng.normal(rng.uniform(-1, 1), 1.0, n)
            b = a + rng.normal(rng.uniform(-0.5, 0.5), rng.uniform(0.1, 1.0), n)
            fwd = S.verdict_for(self._set(a, b))
            rev = S.verdict_for(S.PairedSampleSet("B", "A", "PSNR",
                                                  tuple(b), tuple(a), True))
            assert rev.classification == flip[fwd.classification], i
            if not np.isnan(fwd.p_value):
                assert abs(fwd.p_value - rev.p_value) < 1e-12

    def test_scale_invariance_of_side(self):
        rng = np.random.default_rng(21)
        b = rng.normal(10.0, 1.0, 20)
        a = b + 0.8
        v1 = S.verdict_for(self._set(a, b))
        v2 = S.verdict_for(self._set(a * 50.0, b * 50.0))
        assert v1.classification == v2.classification

    def test_p_values_in_unit_interval(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            n = int(rng.integers(4, 30))
            a = rng.normal(0, 1, n)
            b = a + rng.normal(0, rng.uniform(0.01, 2.0), n)
            v = S.verdict_for(self._set(a, b))
            if not np.isnan(v.p_value):
                assert 0.0 <= v.p_value <= 1.0

    def test_gate_determinism(self):
        rng = np.random.default_rng(23)
        a = rng.exponential(1.0, 25)
        b = a + rng.normal(0.3, 0.7, 25)
        s = self._set(a, b)
        assert S.verdict_for(s).test == S.verdict_for(s).test


class TestCompareMethods:
    def test_table_shape_and_cells(self):
        rng = np.random.default_rng(24)
        per_method = {}
        base = {f"f{k}.png": None for k in range(10)}
        for m in ("alpha", "beta", "gamma"):
            per_method[m] = {
                name: {"MSE": float(rng.normal(50, 5)), "PSNR": float(rng.normal(30, 2))}
                for name in base
            }
        sets = S.build_sample_sets(per_method, ("MSE", "PSNR"),
                                   {"MSE": False, "PSNR": True})
        assert len(sets) == 3 * 2  # C(3,2) pairs x 2 metrics
        table = S.compare_methods(sets)
        assert len(table.pairs) == 3 and len(table.metrics) == 2
        csv_text = table.to_csv_text()
        assert csv_text.splitlines()[0] == "pair,MSE,PSNR"
        assert "p=" in csv_text
        text = table.to_text()
        assert "alpha vs beta" in text

    def test_self_comparison_incomparable(self):
        rng = np.random.default_rng(25)
        rows = {f"f{k}": {"MSE": float(rng.normal(40, 3))} for k in range(8)}
        sets = S.build_sample_sets({"m1": rows, "m2": dict(rows)},
                                   ("MSE",), {"MSE": False})
        table = S.compare_methods(sets)
        assert table.verdict("m1", "m2", "MSE").classification == S.INCOMPARABLE
