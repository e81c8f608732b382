"""Benchmark-harness tests: noise rule, datasets, truth detection, deltas."""

import math

import numpy as np
import pytest

from eqprior.bench import (
    BENCHMARKS,
    BenchHarness,
    aggregate_rows,
    is_truth_equivalent,
    make_dataset,
    noise_sigma,
    skeleton_generalizes,
    truth_delta,
)
from eqprior.exprtree import parse_canonical, resolve_basis
from eqprior.fit import FitConfig
from eqprior.metrics import Method, MetricValue, RankEntry, Ranking


class TestRegistry:
    def test_complexities_match_reference_table(self):
        expected = {"nguyen8": 2, "korns1": 5, "korns4": 6, "korns6": 6, "korns7": 7}
        for name, k in expected.items():
            tree, _ = BENCHMARKS[name].truth()
            assert tree.complexity == k

    def test_korns7_uses_power_form(self):
        tree, theta = BENCHMARKS["korns7"].truth()
        assert "pow" in {n.symbol for n in tree.nodes}
        # 213.81 (1 - e^(-0.547 x)) at x = 2
        from eqprior.exprtree import evaluate

        got = evaluate(tree, theta, np.array([2.0]))[0]
        assert got == pytest.approx(213.81 * (1 - math.exp(-0.547 * 2)), rel=1e-10)


class TestNoiseSigma:
    def test_nguyen8_analytic_moments(self):
        # E[y] = 4/3, E[y^2] = 2 over U(0,4): sigma = sqrt(2/9)/... = 0.2357
        tree, theta = BENCHMARKS["nguyen8"].truth()
        sigma = noise_sigma(tree, theta, (0.0, 4.0), seed=3)
        assert sigma == pytest.approx(0.5 * math.sqrt(2.0 - 16.0 / 9.0), abs=0.003)

    def test_korns1_uniform_variance_identity(self):
        tree, theta = BENCHMARKS["korns1"].truth()
        sigma = noise_sigma(tree, theta, (-50.0, 50.0), seed=3)
        assert sigma == pytest.approx(0.5 * 2.43 * 100.0 / math.sqrt(12.0), rel=5e-3)

    def test_constant_truth_rejected(self):
        tree = parse_canonical("a")
        with pytest.raises(ValueError):
            noise_sigma(tree, [2.0], (0.0, 1.0), seed=0)

    def test_mostly_nonfinite_truth_rejected(self):
        tree = parse_canonical("log(x)")
        with pytest.raises(ValueError):
            noise_sigma(tree, [], (-2.0, -1.0), seed=0)


class TestMakeDataset:
    def test_reproducible_per_seed(self):
        tree, theta = BENCHMARKS["nguyen8"].truth()
        d1 = make_dataset(tree, theta, (0.0, 4.0), 0.23, 50, seed=7)
        d2 = make_dataset(tree, theta, (0.0, 4.0), 0.23, 50, seed=7)
        assert d1.x.tobytes() == d2.x.tobytes()
        assert d1.y.tobytes() == d2.y.tobytes()

    def test_distinct_seeds_differ(self):
        tree, theta = BENCHMARKS["nguyen8"].truth()
        d1 = make_dataset(tree, theta, (0.0, 4.0), 0.23, 50, seed=7)
        d2 = make_dataset(tree, theta, (0.0, 4.0), 0.23, 50, seed=8)
        assert d1.y.tobytes() != d2.y.tobytes()

    def test_zero_size_rejected(self):
        tree, theta = BENCHMARKS["nguyen8"].truth()
        with pytest.raises(ValueError):
            make_dataset(tree, theta, (0.0, 4.0), 0.23, 0, seed=7)

    def test_residual_std_matches_sigma(self):
        tree, theta = BENCHMARKS["korns1"].truth()
        sigma = 35.0
        data = make_dataset(tree, theta, (-50.0, 50.0), sigma, 100_000, seed=9)
        from eqprior.exprtree import evaluate

        resid = data.y - evaluate(tree, theta, data.x)
        assert float(np.std(resid)) == pytest.approx(sigma, rel=0.02)


class TestTruthEquivalence:
    def test_reflexive(self):
        for spec in BENCHMARKS.values():
            tree, theta = spec.truth()
            assert is_truth_equivalent(tree, tree, theta, spec.domain)

    def test_sqrt_family_membership(self):
        tree, theta = BENCHMARKS["nguyen8"].truth()
        for expr in ["sqrt(x)", "pow(x, 0.5)", "pow(x, a)", "square(sqrt(sqrt(x)))"]:
            assert is_truth_equivalent(parse_canonical(expr), tree, theta, (0.0, 4.0))

    def test_structural_generalizations_rejected(self):
        tree, theta = BENCHMARKS["nguyen8"].truth()
        for expr in ["*(a, sqrt(x))", "+(a, sqrt(x))", "+(a, *(a, pow(x, a)))"]:
            assert not is_truth_equivalent(parse_canonical(expr), tree, theta, (0.0, 4.0))

    def test_wrong_curves_rejected(self):
        tree, theta = BENCHMARKS["nguyen8"].truth()
        for expr in ["x", "*(a, x)", "pow(x, 2)", "sqrt(sqrt(x))"]:
            assert not is_truth_equivalent(parse_canonical(expr), tree, theta, (0.0, 4.0))

    def test_korns4_sign_absorbed_variants(self):
        tree, theta = BENCHMARKS["korns4"].truth()
        for expr in ["-(*(a, sin(x)), a)", "+(a, *(a, sin(x)))"]:
            assert is_truth_equivalent(parse_canonical(expr), tree, theta, (-50.0, 50.0))
        for expr in ["*(a, sin(x))", "+(a, sin(x))", "+(a, *(a, cos(x)))"]:
            assert not is_truth_equivalent(parse_canonical(expr), tree, theta,
                                           (-50.0, 50.0))

    def test_skeleton_check_is_cheap_filter(self):
        tree, _ = BENCHMARKS["korns6"].truth()
        assert skeleton_generalizes(parse_canonical("+(a, *(a, sqrt(x)))"), tree)
        assert not skeleton_generalizes(parse_canonical("+(a, *(a, x))"), tree)


def _ranking(values_by_fn: dict[str, float], truth_fns: set[str]):
    entries, flags = [], []
    for i, (canon, val) in enumerate(values_by_fn.items()):
        mv = (MetricValue(Method.MDL, val) if val is not None
              else MetricValue.invalid(Method.MDL, "unscored"))
        entries.append(RankEntry(canon, 3, 1, -val if val is not None else math.nan,
                                 "ok", {Method.MDL: mv}))
        flags.append(canon in truth_fns)
    ranked = sorted((i for i, e in enumerate(entries)
                     if e.values[Method.MDL].valid),
                    key=lambda i: entries[i].values[Method.MDL].value)
    unranked = [(i, "unscored") for i, e in enumerate(entries)
                if not e.values[Method.MDL].valid]
    ranking = Ranking([Method.MDL], entries, {Method.MDL: ranked},
                      {Method.MDL: unranked})
    return ranking, flags


class TestTruthDelta:
    def test_truth_on_top_positive_margin(self):
        ranking, flags = _ranking({"truth": 1.0, "rival": 3.3}, {"truth"})
        td = truth_delta(ranking, flags)[Method.MDL]
        assert td.delta == pytest.approx(2.3)
        assert td.truth_rank == 1 and td.truth_in_top2

    def test_truth_trailing_negative_margin(self):
        ranking, flags = _ranking({"w1": 1.0, "w2": 1.9, "truth": 2.4}, {"truth"})
        td = truth_delta(ranking, flags)[Method.MDL]
        assert td.delta == pytest.approx(-1.4)
        assert td.truth_rank == 3 and not td.truth_in_top2

    def test_unranked_truth_flagged(self):
        ranking, flags = _ranking({"w1": 1.0, "truth": None}, {"truth"})
        td = truth_delta(ranking, flags)[Method.MDL]
        assert td.delta is None and td.truth_rank is None
        assert "unranked" in td.note

    def test_best_truth_variant_used(self):
        ranking, flags = _ranking(
            {"t-good": 2.0, "rival": 2.5, "t-bad": 9.0}, {"t-good", "t-bad"})
        td = truth_delta(ranking, flags)[Method.MDL]
        assert td.delta == pytest.approx(0.5)
        assert td.truth_rank == 1


class TestHarness:
    def test_nguyen8_small_run_shapes(self):
        harness = BenchHarness(resolve_basis("sr"), 3,
                               methods=[Method.LIKELIHOOD, Method.MDL, Method.SCORE],
                               fit_config=FitConfig(restarts=4), seed=0)
        ranking, deltas = harness.run(BENCHMARKS["nguyen8"], 60, seed=1)
        assert set(deltas) == {Method.LIKELIHOOD, Method.MDL, Method.SCORE}
        assert len(ranking.entries) == len(harness.candidates)
        assert any(e.truth for e in ranking.entries)

    def test_aggregate_rows(self):
        rows = [
            {"function": "f", "method": "mdl", "N": 10, "seed": 0, "delta": 1.0,
             "truth_rank": 1, "truth_top1": True, "truth_top2": True,
             "truth_ranked": True, "note": ""},
            {"function": "f", "method": "mdl", "N": 10, "seed": 1, "delta": -1.0,
             "truth_rank": 3, "truth_top1": False, "truth_top2": False,
             "truth_ranked": True, "note": ""},
        ]
        agg = aggregate_rows(rows)
        assert len(agg) == 1
        assert agg[0]["mean_delta"] == pytest.approx(0.0)
        assert agg[0]["top1_rate"] == pytest.approx(0.5)
