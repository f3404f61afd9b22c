import itertools
import math
from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mad_compress.theory import (
    ERASED,
    K_GRID,
    P_GRID,
    BottleneckModel,
    DomainError,
    TheoryParams,
    bound_table,
    entropy,
    exact_bottleneck,
    exact_majority,
    hoeffding_bound,
    hoeffding_failure,
    mc_sigma,
    mi_sigma,
    miller_bias_bound,
    plugin_mi,
    rows_to_csv,
    sample_complexity,
    simulate_bottleneck,
    simulate_majority,
    verify_all,
)


class TestHoeffding:
    def test_k5_p099(self):
        assert hoeffding_bound(5, 0.99) == pytest.approx(0.9094, abs=5e-5)

    @pytest.mark.parametrize("K", [1, 5, 100])
    def test_half(self, K):
        assert hoeffding_bound(K, 0.5) == 0.0

    def test_k10(self):
        assert hoeffding_bound(10, 0.7) == pytest.approx(1 - math.exp(-0.8), abs=1e-15)
        assert hoeffding_bound(10, 0.7) == pytest.approx(0.550671, abs=1e-6)

    def test_domain(self):
        with pytest.raises(DomainError):
            hoeffding_bound(5, 0.49)
        with pytest.raises(DomainError):
            hoeffding_bound(0, 0.9)

    @pytest.mark.parametrize("p", P_GRID)
    def test_log_failure_linear(self, p):
        logs = [math.log(hoeffding_failure(K, p)) for K in K_GRID]
        for K, lf in zip(K_GRID, logs):
            assert lf == pytest.approx(-2 * K * (p - 0.5) ** 2, abs=1e-12)
        slopes = np.diff(logs)
        np.testing.assert_allclose(slopes, -2 * (p - 0.5) ** 2, atol=1e-12)

    def test_monotone_in_K(self):
        for p in P_GRID:
            b = [hoeffding_bound(K, p) for K in K_GRID]
            assert all(x <= y for x, y in zip(b, b[1:]))

    def test_exact_dominates(self):
        for K in K_GRID:
            for p in P_GRID:
                assert exact_majority(K, p) >= hoeffding_bound(K, p)


class TestSampleComplexity:
    def test_examples(self):
        assert sample_complexity(0.99, 0.1) == 5
        assert sample_complexity(0.7, 0.05) == 38
        assert sample_complexity(0.9, 0.999999) == 1

    def test_domain(self):
        with pytest.raises(DomainError):
            sample_complexity(0.5, 0.1)
        with pytest.raises(DomainError):
            sample_complexity(0.9, 1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.501, 1.0), st.floats(1e-9, 0.999))
    def test_guarantee_and_minimal(self, p, delta):
        k = sample_complexity(p, delta)
        assert hoeffding_bound(k, p) >= 1 - delta
        assert k == 1 or hoeffding_bound(k - 1, p) < 1 - delta


class TestSimulateMajority:
    def test_certain(self):
        assert simulate_majority(TheoryParams(K=5, p=1.0, trials=1000)) == 1.0

    def test_high_p(self):
        emp = simulate_majority(TheoryParams(K=5, p=0.99))
        exact = exact_majority(5, 0.99)
        assert exact == pytest.approx(1 - 9.85e-6, abs=1e-8)
        assert emp >= hoeffding_bound(5, 0.99)
        assert abs(emp - exact) <= 3 * math.sqrt(exact * (1 - exact) / 100_000) + 1e-5

    def test_k3(self):
        emp = simulate_majority(TheoryParams(K=3, p=0.6))
        assert exact_majority(3, 0.6) == pytest.approx(0.648, abs=1e-12)
        assert emp == pytest.approx(0.648, abs=0.005)
        assert emp >= hoeffding_bound(3, 0.6)
        assert hoeffding_bound(3, 0.6) == pytest.approx(0.0582, abs=1e-4)

    def test_tie_counts(self):
        # K=2: a 1-1 split is S_K = 1/2 and counts as success
        assert exact_majority(2, 0.6) == pytest.approx(1 - 0.16)
        emp = simulate_majority(TheoryParams(K=2, p=0.6, trials=200_000))
        assert abs(emp - 0.84) <= 3 * mc_sigma(0.84, 200_000)

    def test_seeded(self):
        a = simulate_majority(TheoryParams(K=7, p=0.6, trials=70_000, seed=3))
        assert a == simulate_majority(TheoryParams(K=7, p=0.6, trials=70_000, seed=3))
        assert a != simulate_majority(TheoryParams(K=7, p=0.6, trials=70_000, seed=4))

    @pytest.mark.parametrize("kw", [dict(p=0.5), dict(gamma=1.0), dict(delta=0.0), dict(trials=0),
                                    dict(K=0), dict(epsilon=-1)])
    def test_params_domain(self, kw):
        with pytest.raises(DomainError):
            TheoryParams(**kw)


class TestPluginMI:
    def test_independent(self):
        assert plugin_mi([[25, 25], [25, 25]]) == 0.0

    def test_copy(self):
        assert plugin_mi([[50, 0], [0, 50]]) == pytest.approx(1.0, abs=1e-15)

    def test_hand(self):
        hand = (2 / 3) * math.log2(4 / 3) + (1 / 3) * math.log2(2 / 3)
        assert plugin_mi([[2, 1], [1, 2]]) == pytest.approx(hand, abs=1e-15)
        assert plugin_mi([[2, 1], [1, 2]]) == pytest.approx(0.081704, abs=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            plugin_mi([[0, 0], [0, 0]])
        with pytest.raises(ValueError):
            plugin_mi([[-1, 2], [1, 1]])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6))
    def test_bounds_and_symmetry(self, seed, nx, ny):
        t = np.random.default_rng(seed).integers(0, 20, (nx, ny))
        t[0, 0] += 1
        mi = plugin_mi(t)
        assert 0.0 <= mi <= min(entropy(t.sum(axis=1)), entropy(t.sum(axis=0))) + 1e-12
        assert mi == pytest.approx(plugin_mi(t.T), abs=1e-12)

    def test_sigma(self):
        assert mi_sigma([[25, 25], [25, 25]]) == 0.0
        assert mi_sigma([[2000, 1000], [1000, 2000]]) > 0


def brute_force(model, keep, pass_prob):
    """Independent oracle: enumerate every latent draw with exact rational weights."""
    K = model.K
    eta = Fraction(model.signal_flip).limit_denominator(10**6)
    vis = Fraction(model.artifact_visibility).limit_denominator(10**6)
    keep = Fraction(keep).limit_denominator(10**6)
    pp = Fraction(pass_prob).limit_denominator(10**6)
    fy = defaultdict(Fraction)
    fv = [defaultdict(Fraction) for _ in range(K)]
    per_agent = list(itertools.product((0, 1), repeat=5))  # flip, v, seen, kept, passed
    for y in (0, 1):
        for draw in itertools.product(per_agent, repeat=K):
            w = Fraction(1, 2)
            sig, art, vs = [], [], []
            for flip, v, seen, kept, passed in draw:
                w *= (eta if flip else 1 - eta) * Fraction(1, 2) * (vis if seen else 1 - vis)
                w *= (keep if kept else 1 - keep) * (pp if passed else 1 - pp)
                sig.append((y ^ flip) if kept else ERASED)
                art.append(v if seen and passed else ERASED)
                vs.append(v)
            if w == 0:
                continue
            ones, zeros = sig.count(1), sig.count(0)
            if ones != zeros:
                yhat = int(ones > zeros)
            else:
                yhat = next((s for s in sig if s != ERASED), 0)
            f = (yhat, tuple(art)) if model.artifact_coupled else (yhat,)
            fy[(f, y)] += w
            for i in range(K):
                fv[i][(f, vs[i])] += w

    def mi(joint):
        fs = sorted({k[0] for k in joint})
        table = np.array([[float(joint.get((f, b), 0)) for b in (0, 1)] for f in fs])
        return plugin_mi(table)

    return mi(fy), sum(mi(d) for d in fv)


class TestBottleneckExact:
    @pytest.mark.parametrize("model,keep,pp", [
        (BottleneckModel(K=2), 0.9, 0.1),
        (BottleneckModel(K=3, signal_flip=0.2, artifact_visibility=0.7), 0.8, 0.3),
        (BottleneckModel(K=3, artifact_coupled=False), 0.9, 0.5),
        (BottleneckModel(K=3), 1.0, 1.0),
    ])
    def test_matches_brute_force(self, model, keep, pp):
        rep = exact_bottleneck(model, TheoryParams(K=model.K, p=keep, gamma=min(pp, 0.99)))
        if keep == 1.0 and pp == 1.0:
            fy, fv = rep.I_fY_uncompressed, rep.I_fV_uncompressed
        else:
            fy, fv = rep.I_fY_compressed, rep.I_fV_compressed
        bf_y, bf_v = brute_force(model, keep, pp)
        assert fy == pytest.approx(bf_y, abs=1e-12)
        assert fv == pytest.approx(bf_v, abs=1e-12)

    def test_headline(self):
        rep = exact_bottleneck(BottleneckModel(), TheoryParams(K=5, p=0.9, gamma=0.1))
        assert rep.mean_artifact_info == 0.5
        assert rep.D_compressed < rep.D_uncompressed
        assert rep.artifact_margin == pytest.approx(0.25)
        assert rep.D_uncompressed - rep.D_compressed >= rep.artifact_margin
        assert rep.margin_holds
        assert rep.I_fV_uncompressed == pytest.approx(5 * 0.5)
        assert all(v >= 0 for k, v in rep.to_dict().items() if k.startswith("I_"))

    def test_bottleneck_is_uncompressed_majority(self):
        rep = exact_bottleneck(BottleneckModel(), TheoryParams(K=5, p=0.9, gamma=0.1))
        assert rep.I_bottleneck_estimate == pytest.approx(rep.I_fY_uncompressed, abs=1e-12)

    def test_gamma_sweep_monotone(self):
        vals = [exact_bottleneck(BottleneckModel(), TheoryParams(p=0.9, gamma=g)).I_fV_compressed
                for g in (0.9, 0.7, 0.5, 0.3, 0.1, 0.01, 0.0)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] == 0.0

    def test_distance_whenever_margin_positive(self):
        for gamma in (0.0, 0.05, 0.1, 0.15):
            for p in (0.8, 0.9, 1.0):
                params = TheoryParams(K=5, p=p, gamma=gamma)
                rep = exact_bottleneck(BottleneckModel(), params)
                assert rep.artifact_margin > 0
                assert rep.D_compressed < rep.D_uncompressed

    def test_uncoupled_aggregation(self):
        # f ignores artifacts entirely, so there is nothing for compression to remove
        rep = exact_bottleneck(BottleneckModel(artifact_coupled=False), TheoryParams(p=0.9, gamma=0.1))
        assert rep.I_fV_uncompressed == rep.I_fV_compressed == 0.0
        assert not rep.margin_holds

    def test_degenerate(self):
        with pytest.raises(DomainError):
            BottleneckModel(signal_flip=0.5)
        with pytest.raises(DomainError):
            exact_bottleneck(BottleneckModel(K=3), TheoryParams(K=5))


class TestBottleneckSampled:
    def test_gamma_zero(self):
        rep = simulate_bottleneck(BottleneckModel(), TheoryParams(gamma=0.0, trials=100_000))
        assert rep.I_fV_compressed <= rep.bias_bound
        assert rep.bias_bound == pytest.approx(miller_bias_bound(2 * 3**5, 2, 100_000) * 6)

    def test_lossless(self):
        params = TheoryParams(p=1.0, gamma=0.1, trials=100_000, seed=1)
        model = BottleneckModel()
        rep = simulate_bottleneck(model, params)
        exact = exact_bottleneck(model, params)
        assert exact.I_fY_compressed == pytest.approx(exact.I_fY_uncompressed, abs=1e-12)
        n = 100_000
        # plug-in bias differs between the two alphabets, so the bound is added to the noise band
        sigma = math.hypot(mi_sigma(np.array([[0.45, 0.05], [0.05, 0.45]]) * n),
                           mi_sigma(np.array([[0.45, 0.05], [0.05, 0.45]]) * n))
        assert abs(rep.I_fY_compressed - rep.I_fY_uncompressed) <= 3 * sigma + rep.bias_bound

    def test_agrees_with_exact(self):
        params = TheoryParams(p=0.9, gamma=0.1, trials=100_000, seed=2)
        rep = simulate_bottleneck(BottleneckModel(), params)
        exact = exact_bottleneck(BottleneckModel(), params)
        assert rep.D_compressed < rep.D_uncompressed
        assert abs(rep.I_fV_uncompressed - exact.I_fV_uncompressed) <= 0.02 + rep.bias_bound
        assert abs(rep.I_fY_uncompressed - exact.I_fY_uncompressed) <= 0.02 + rep.bias_bound
        assert rep.margin_holds

    def test_paired_sweep(self):
        vals = [simulate_bottleneck(BottleneckModel(K=3), TheoryParams(K=3, gamma=g, trials=50_000, seed=5))
                .I_fV_compressed for g in (0.8, 0.5, 0.2, 0.0)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_seeded(self):
        params = TheoryParams(K=3, trials=20_000, seed=9)
        assert simulate_bottleneck(BottleneckModel(K=3), params) == simulate_bottleneck(BottleneckModel(K=3), params)


class TestBoundTable:
    def test_single_cell(self):
        (row,) = bound_table([0.99], [5], trials=10_000)
        assert row.bound == pytest.approx(0.9094, abs=5e-5)
        assert row.dominates and row.sample_complexity_consistent

    def test_five_by_five(self):
        rows = bound_table([0.55, 0.65, 0.75, 0.85, 0.95], [1, 3, 5, 9, 15])
        assert len(rows) == 25
        assert all(r.empirical >= r.bound for r in rows)

    def test_csv(self):
        text = rows_to_csv(bound_table([0.9], [1, 2], trials=100))
        lines = text.splitlines()
        assert lines[0] == "K,p,bound,empirical,sigma,sample_complexity_consistent"
        assert len(lines) == 3

    def test_errors(self):
        with pytest.raises(ValueError):
            bound_table([], [1])
        with pytest.raises(DomainError):
            bound_table([0.5], [1])


def test_verify_all_small():
    out = verify_all(trials=20_000, K_grid=(1, 2, 5, 10))
    assert out["checks"] and all(out["checks"].values()), out["checks"]
