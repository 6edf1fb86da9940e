import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialdnn import theory
from spatialdnn.errors import DomainError, InvalidInputError, PreconditionError
from spatialdnn.theory import INFINITE, BoundInputs, CsSpec

# ---------------------------------------------------------------------------
# straight-line oracles, written independently of the library code
# ---------------------------------------------------------------------------


def brute_intrinsic(beta, rt):
    """Enumerate every layer, multiply out the tail products, take the argmin."""
    best = None
    stars = []
    for i in range(len(beta)):
        prod = 1.0
        for s in range(i + 1, len(beta)):
            prod = prod * min(beta[s], 1.0)
        stars.append(beta[i] * prod)
    for i in range(len(beta)):
        ratio = stars[i] / rt[i]
        if best is None or ratio < best[0]:
            best = (ratio, i)
    i = best[1]
    return stars, i, stars[i], rt[i]


def oracle_covering(L, tau, d, delta):
    return (1 + tau) * math.log(2 ** (5 + 2 * L) / delta * (L + 1) * tau ** (2 * L) * d ** 2)


def oracle_zeta(n, tau, L, delta, eps, sigma, trg, trg2):
    a = delta * (trg / n + 2 * math.sqrt(trg2 / n) + 3 * sigma)
    b = tau / n * (math.log(L / delta) + L * math.log(tau)) * (trg2 / n + sigma * sigma + 1)
    return (a + b) / eps


def oracle_varsigma(n, L, N, trg2, bstar, rstar, prod, delta):
    return ((N * 2.0 ** (-L)) ** (2 * prod) + N ** (-2 * bstar / rstar)
            + (trg2 + n) * (L * N * math.log(L * n * n) + L * L * N * math.log(L * N)) / n ** 2
            + delta)


def oracle_approx(beta, rt, r, C, a, b, N, m):
    Ls = len(beta) - 1
    ratios = [C[k] * (b[k] - a[k]) / (b[k + 1] - a[k + 1]) for k in range(Ls + 1)]
    ct = []
    for i in range(Ls + 1):
        s = 0.0
        for k in range(i + 1):
            s += ratios[k]
        if i == Ls:
            s += b[Ls] - a[Ls]
        ct.append(s)
    pre = C[Ls]
    for l in range(Ls):
        pre *= (2 * C[l]) ** beta[l + 1]
    total = 0.0
    for i in range(Ls + 1):
        e = 1.0
        for l in range(i + 1, Ls + 1):
            e *= min(beta[l], 1.0)
        inner = ((2 * ct[i] + 1) * (1 + rt[i] ** 2 + beta[i] ** 2) * 6 ** rt[i] * N * 2.0 ** (-m)
                 + ct[i] * 3 ** beta[i] * N ** (-beta[i] / rt[i]))
        total += inner ** e
    return pre * total, ct


def random_spec(rng, finite=True, max_depth=3):
    L = int(rng.integers(0, max_depth + 1))
    r = [int(x) for x in rng.integers(1, 5, L + 1)] + [1]
    rt = [int(rng.integers(1, r[i] + 1)) for i in range(L + 1)]
    beta = [float(x) for x in rng.uniform(0.2, 3.0, L + 1)]
    if not finite:
        beta = [INFINITE if rng.uniform() < 0.3 else x for x in beta]
    C = [float(x) for x in rng.uniform(1.5, 3.0, L + 1)]
    a = [float(-rng.uniform(0, 1)) for _ in range(L + 2)]
    b = [float(rng.uniform(0.5, 1.4)) for _ in range(L + 2)]
    return CsSpec(L, r, rt, beta, a, b, C)


# ---------------------------------------------------------------------------


class TestIntrinsic:
    def test_single_layer(self):
        s = theory.intrinsic(CsSpec(0, (3, 1), (2,), (1.7,)))
        assert (s.beta_star, s.r_star, s.argmin) == (1.7, 2, 0)

    def test_example1(self):
        s = theory.intrinsic(theory.example1_spec(5, 2.0, 1.0))
        assert s.beta_star_per_layer == (2.0, INFINITE, 1.0)
        assert (s.argmin, s.beta_star, s.r_star) == (0, 2.0, 5)

    def test_all_infinite_is_degenerate(self):
        s = theory.intrinsic(CsSpec(1, (2, 2, 1), (2, 1), (INFINITE, "inf")))
        assert s.degenerate and s.argmin == 0 and math.isinf(s.beta_star)

    def test_tie_goes_to_earliest(self):
        s = theory.intrinsic(CsSpec(1, (2, 2, 1), (2, 1), (2.0, 1.0)))
        # ratios 1.0 and 1.0
        assert s.argmin == 0

    def test_rough_deep_layer_lowers_upstream(self):
        s = theory.intrinsic(CsSpec(1, (2, 2, 1), (2, 1), (3.0, 0.5)))
        assert s.beta_star_per_layer[0] == pytest.approx(1.5)

    def test_agrees_with_brute_force_on_random_specs(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            spec = random_spec(rng)
            s = theory.intrinsic(spec)
            stars, i, bs, rs = brute_intrinsic(spec.beta, spec.r_tilde)
            np.testing.assert_allclose(s.beta_star_per_layer, stars, rtol=1e-12)
            assert (s.argmin, s.r_star) == (i, rs)
            assert s.beta_star == pytest.approx(bs, rel=1e-12)

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            CsSpec(0, (2, 1), (3,), (1.0,))
        with pytest.raises(InvalidInputError):
            CsSpec(0, (2, 1), (1,), (1.0,), C=(0.5,))
        with pytest.raises(InvalidInputError):
            CsSpec(0, (2, 1), (1,), (1.0,), a=(1.0, 0.0), b=(0.0, 1.0))


class TestEvalCs:
    def test_identity_layers(self):
        spec = CsSpec(1, (2, 2, 1), (2, 1), (1.0, 1.0),
                      layers=(lambda z: z, lambda z: z[:1]))
        assert theory.eval_cs(spec, [0.25, 0.5]) == 0.25

    def test_example1_sum(self):
        spec = theory.example1_spec(2, 2.0, 1.0, a=(0, 0, 0, 0), b=(1, 1, 2, 2), C=(2, 2, 3),
                                    layers=(lambda z: z, lambda z: np.array([z.sum()]), lambda z: z))
        assert theory.eval_cs(spec, [0.2, 0.3]) == pytest.approx(0.5, abs=1e-15)

    def test_domain_violation_names_layer(self):
        spec = CsSpec(1, (1, 1, 1), (1, 1), (1.0, 1.0),
                      layers=(lambda z: 2 * z, lambda z: z))
        with pytest.raises(DomainError) as err:
            theory.eval_cs(spec, [0.9])
        assert err.value.layer == 0

    def test_random_monotone_layers_match_nesting(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            k = rng.uniform(0.5, 3.0, 3)
            g0 = lambda z, k=k: np.array([np.tanh(k[0] * z[0]) * 0.5 + 0.5])
            g1 = lambda z, k=k: np.array([z[0] ** k[1]])
            g2 = lambda z, k=k: np.array([np.sin(z[0]) / (1 + k[2])])
            spec = CsSpec(2, (1, 1, 1, 1), (1, 1, 1), (1.0, 1.0, 1.0),
                          a=(0, 0, 0, 0), b=(1, 1, 1, 1), layers=(g0, g1, g2))
            z = rng.uniform(0, 1)
            direct = math.sin((math.tanh(k[0] * z) * 0.5 + 0.5) ** k[1]) / (1 + k[2])
            assert theory.eval_cs(spec, [z]) == pytest.approx(direct, abs=1e-12)


class TestCoveringBound:
    def test_hand_value(self):
        assert theory.covering_bound(1, 1, 1, 1.0) == pytest.approx(2 * math.log(256), abs=1e-12)
        assert theory.covering_bound(1, 1, 1, 1.0) == pytest.approx(11.090, abs=5e-4)

    def test_reimplementation(self):
        v = theory.covering_bound(3, 50, 5, 100.0 ** -2)
        assert math.isfinite(v)
        assert v == pytest.approx(oracle_covering(3, 50, 5, 1e-4), rel=1e-9)

    def test_monotone_sweeps(self):
        taus = np.linspace(1, 500, 100)
        vals = [theory.covering_bound(3, t, 4, 0.1) for t in taus]
        assert np.all(np.diff(vals) >= 0)
        vals = [theory.covering_bound(L, 20, 4, 0.1) for L in range(100)]
        assert np.all(np.diff(vals) >= 0)
        deltas = np.linspace(1e-6, 1, 100)
        vals = [theory.covering_bound(3, 20, 4, dl) for dl in deltas]
        assert np.all(np.diff(vals) <= 0)

    def test_no_overflow_at_extremes(self):
        v = theory.covering_bound(1000, 1e6, 50, 1e-12)
        assert math.isfinite(v) and v > 0


class TestZeta:
    base = dict(n=100, tr_gamma=100.0, tr_gamma_sq=150.0, sigma=1.0, delta=1e-4, eps=1.0, tau=50, L=3)

    def test_worked_value(self):
        assert theory.zeta_bound(BoundInputs(**self.base)) == pytest.approx(38.6, abs=0.05)

    def test_reimplementation(self):
        b = self.base
        expect = oracle_zeta(b["n"], b["tau"], b["L"], b["delta"], b["eps"], b["sigma"],
                             b["tr_gamma"], b["tr_gamma_sq"])
        assert theory.zeta_bound(BoundInputs(**b)) == pytest.approx(expect, rel=1e-12)

    def test_small_delta_leaves_second_term(self):
        b = dict(self.base, delta=1e-300)
        second = 50 / 100 * (math.log(3 / 1e-300) + 3 * math.log(50)) * (1.5 + 1 + 1)
        assert theory.zeta_bound(BoundInputs(**b)) == pytest.approx(second, rel=1e-12)

    def test_eps_scaling(self):
        a = theory.zeta_bound(BoundInputs(**dict(self.base, eps=0.5)))
        b = theory.zeta_bound(BoundInputs(**dict(self.base, eps=1.0)))
        assert a == 2 * b

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            BoundInputs(n=10, delta=0.0)
        with pytest.raises(InvalidInputError):
            BoundInputs(n=10, eps=1.5)


class TestVarsigma:
    def test_limits(self):
        t1, t2, t3, _ = theory.varsigma_terms(100, 200, 1, 100.0, 2.0, 5, 1.0)
        assert t1 < 1e-100
        assert t2 == 1.0

    def test_schedule_value(self):
        n, bstar, rstar = 10**4, 2.0, 5
        L, N = theory.rate_schedule(n, bstar, rstar)
        assert (L, N) == (math.ceil(math.log(n)), math.ceil(n ** (5 / 9)))
        summary = theory.intrinsic(theory.example1_spec(5, 2.0, 1.0))
        got = theory.varsigma_rate(BoundInputs(n=n, L=L, N=N, tr_gamma_sq=float(n)), summary)
        assert got == pytest.approx(oracle_varsigma(n, L, N, n, bstar, rstar, 1.0, 0.0), rel=1e-9)

    def test_decreasing_along_schedule(self):
        summary = theory.intrinsic(theory.example1_spec(5, 2.0, 1.0))
        rows = theory.rate_sweep([100, 1000, 10_000], summary)
        totals = [r[-1] for r in rows]
        assert totals[0] > totals[1] > totals[2]

    def test_proxy_added(self):
        summary = theory.intrinsic(theory.example1_spec(5, 2.0, 1.0))
        inp = BoundInputs(n=500, L=4, N=10)
        assert theory.varsigma_rate(inp, summary, 0.25) == pytest.approx(
            theory.varsigma_rate(inp, summary) + 0.25, rel=1e-14)


class TestApproxBound:
    def single(self):
        return CsSpec(0, (1, 1), (1,), (1.0,), a=(0, 0), b=(1, 1), C=(2.0,))

    def test_single_layer_sizing(self):
        m, N = 4, 20
        res = theory.approx_bound(self.single(), N, m)
        assert res.sizing.layer_depths == (8 + (m + 5),)
        assert res.sizing.eta == 2
        assert res.sizing.width == 12 * N
        assert res.sizing.L == 8 + (m + 5)
        assert res.sizing.C_tilde == (3.0,)
        assert res.sizing.tau_cap == pytest.approx(141 * 3**4 * N * (m + 6) + 4)

    def test_single_layer_value(self):
        expect, _ = oracle_approx([1.0], [1], [1, 1], [2.0], [0, 0], [1, 1], 20, 4)
        assert theory.approx_bound(self.single(), 20, 4).bound == pytest.approx(expect, rel=1e-12)

    def test_precondition(self):
        with pytest.raises(PreconditionError, match="layer 0"):
            theory.approx_bound(self.single(), 5, 3)

    def test_infinite_beta_rejected(self):
        with pytest.raises(PreconditionError):
            theory.approx_bound(theory.example1_spec(2, 2.0, 1.0), 1e6, 3)

    def test_large_m_limit(self):
        res = theory.approx_bound(self.single(), 20, 200)
        assert res.bound == pytest.approx(res.limit_bound, rel=1e-12)

    def test_monotone_on_random_specs(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            spec = random_spec(rng, max_depth=2)
            N0 = 1.01 * max(max((spec.beta[i] + 1) ** spec.r_tilde[i],
                                (theory.c_tilde(spec)[i] + 1) * math.exp(spec.r_tilde[i]))
                            for i in range(spec.depth + 1))
            ms = [theory.approx_bound(spec, N0, m).log_bound for m in range(1, 30)]
            assert np.all(np.diff(ms) <= 1e-12)
            lim = [theory.approx_bound(spec, N0 * f, 5).limit_bound for f in (1, 2, 4, 8, 16)]
            assert np.all(np.diff(lim) <= 0)


def test_calculators_match_reimplementation_on_random_inputs():
    rng = np.random.default_rng(11)
    for _ in range(100):
        L = int(rng.integers(1, 12))
        tau = float(rng.uniform(1, 5000))
        d = int(rng.integers(1, 20))
        delta = float(rng.uniform(1e-6, 1))
        assert theory.covering_bound(L, tau, d, delta) == pytest.approx(
            oracle_covering(L, tau, d, delta), rel=1e-9)

        n = int(rng.integers(10, 10**5))
        eps = float(rng.uniform(0.01, 1))
        sigma = float(rng.uniform(0, 3))
        trg = float(n * rng.uniform(0.5, 2))
        trg2 = float(n * rng.uniform(1, 50))
        inp = BoundInputs(n=n, tau=tau, L=L, delta=delta, eps=eps, sigma=sigma,
                          tr_gamma=trg, tr_gamma_sq=trg2, N=float(rng.integers(1, 500)))
        assert theory.zeta_bound(inp) == pytest.approx(
            oracle_zeta(n, tau, L, delta, eps, sigma, trg, trg2), rel=1e-9)

        spec = random_spec(rng)
        s = theory.intrinsic(spec)
        got = theory.varsigma_rate(inp, s, 0.01)
        expect = oracle_varsigma(n, L, inp.N, trg2, s.beta_star, s.r_star, s.smoothness_product, 0.01)
        assert got == pytest.approx(expect, rel=1e-9)

        spec = random_spec(rng, max_depth=2)
        ct = theory.c_tilde(spec)
        N = 1.5 * max(max((spec.beta[i] + 1) ** spec.r_tilde[i], (ct[i] + 1) * math.exp(spec.r_tilde[i]))
                      for i in range(spec.depth + 1))
        m = int(rng.integers(1, 20))
        expect, ct_oracle = oracle_approx(spec.beta, spec.r_tilde, spec.r, spec.C, spec.a, spec.b, N, m)
        res = theory.approx_bound(spec, N, m)
        np.testing.assert_allclose(res.sizing.C_tilde, ct_oracle, rtol=1e-12)
        assert res.bound == pytest.approx(expect, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(L=st.integers(0, 1000), tau=st.floats(1, 1e6), d=st.integers(1, 100),
       delta=st.floats(1e-12, 1.0))
def test_covering_bound_finite_positive(L, tau, d, delta):
    v = theory.covering_bound(L, tau, d, delta)
    assert math.isfinite(v) and v > 0


def test_dominant_term_slope_matches_rate_exponent():
    s = theory.intrinsic(theory.example1_spec(5, 2.0, 1.0))
    ns = np.logspace(2, 6, 41)
    rows = theory.rate_sweep(ns, s)
    n = np.array([r[0] for r in rows], dtype=float)
    terms = np.array([r[3:6] for r in rows])
    assert np.all(np.argmax(terms, axis=1) == 2)
    # the rate carries a (log n)^3 factor on top of the polynomial part
    slope = np.polyfit(np.log(n), np.log(terms[:, 2] / np.log(n) ** 3), 1)[0]
    target = -2 * s.beta_star / (2 * s.beta_star + s.r_star)
    assert abs(slope - target) <= 0.15
