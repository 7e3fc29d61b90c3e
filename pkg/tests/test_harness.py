import math

import numpy as np
import pytest
from scipy.optimize import brentq

from jumpcalc import bounds as bc
from jumpcalc import harness as hs
from jumpcalc import models
from jumpcalc.core import DiscreteKernel, ProcessSpec
from jumpcalc.engine import SimConfig
from jumpcalc.errors import DomainError
from jumpcalc.report import McReport, QueryResult, Z95, reports_to_csv, wilson

from conftest import rk4_flow_time


def ens(n, T, seed=1, **kw):
    return hs.EnsembleConfig(n, SimConfig(T=T, seed=seed, **kw))


def zero_rate_flow(D):
    return ProcessSpec(DiscreteKernel(lambda x: np.zeros((x.shape[0], 1)), [[1.0]]), c_delta=1.0, derivative=D,
                       name="flow")


# Wilson intervals and verdicts

def wilson_oracle(k, n):
    """Endpoints solve ``|p_hat - p| = z sqrt(p (1 - p) / n)``."""
    ph = k / n
    f = lambda p: (ph - p) ** 2 - Z95**2 * p * (1 - p) / n
    lo = 0.0 if k == 0 else brentq(f, 1e-300, ph if k < n else 1 - 1e-16)
    hi = 1.0 if k == n else brentq(f, ph if k > 0 else 1e-300, 1 - 1e-16)
    return lo, hi


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (10, 10), (17, 1000), (500, 1000), (1, 100000)])
def test_wilson_matches_score_equation(k, n):
    p, lo, hi = wilson(k, n)
    olo, ohi = wilson_oracle(k, n)
    assert p == k / n
    assert lo == pytest.approx(olo, abs=1e-12)
    assert hi == pytest.approx(ohi, abs=1e-12)
    assert lo <= p <= hi


def test_wilson_half_width_scaling():
    for p in (0.01, 0.2, 0.5):
        n = 20000
        _, lo1, hi1 = wilson(round(p * n), n)
        _, lo2, hi2 = wilson(round(p * 2 * n), 2 * n)
        ratio = (hi2 - lo2) / (hi1 - lo1)
        assert ratio == pytest.approx(1 / math.sqrt(2), rel=0.1)


def test_verdict_rules():
    assert hs.bound_verdict(0.1, 0.01, 0.2, 100, 0) == "respected"
    assert hs.bound_verdict(0.25, 0.01, 0.2, 100, 0) == "violated"
    assert hs.bound_verdict(0.22, 0.01, 0.2, 100, 0) == "respected"
    assert hs.bound_verdict(0.1, 0.01, 0.2, 100, 3) == "invalid"
    assert hs.bound_verdict(1.0, 0.0, 0.2, 0, 0) == "inconclusive"


def test_censored_paths_count_as_exceedances():
    # a Yule process truncated by the rate cap before the horizon
    rep = hs.verify_sample_path(models.yule(1.0), 1.0, ens(200, 20.0, q_max=5.0), [1.0], [50.0], [1])
    r = rep.results[0]
    assert r.censored_fraction == 1.0
    assert r.count == 200
    assert r.verdict == "inconclusive"


# sample-path estimate

def test_sample_path_poisson_example():
    rep = hs.verify_sample_path(models.poisson_counter(1.0), 0.0, ens(100_000, 10.0, seed=2024), [1.0], [5.0],
                                [1, -1])
    assert rep.passed
    assert rep.results[0].bound == pytest.approx(math.exp(-5))


def test_sample_path_huge_offset_never_exceeded():
    rep = hs.verify_sample_path(models.poisson_counter(1.0), 0.0, ens(2000, 10.0), [1.0], [1e6], [1, -1])
    assert all(r.count == 0 for r in rep.results)


def test_sample_path_grid_validation():
    with pytest.raises(DomainError):
        hs.verify_sample_path(models.poisson_counter(1.0), 0.0, ens(10, 1.0), [], [1.0])
    with pytest.raises(DomainError):
        hs.verify_sample_path(models.poisson_counter(1.0), 0.0, ens(10, 1.0), [1.0], [-1.0])


def test_sample_path_observer_matches_direct_path_check():
    # exceedance computed from recorded paths agrees with the observer
    from jumpcalc.engine import compensated_path, simulate
    spec = models.birth_death(2.0, 1.0)
    lam, a = 1.0, 1.0
    n = 60
    rep = hs.verify_sample_path(spec, 0.0, ens(n, 3.0, seed=5), [lam], [a], [1, -1])
    hits_plus = hits_minus = 0
    for i in range(n):
        p = simulate(spec, 0.0, SimConfig(T=3.0, seed=5, path_index=i))
        st = compensated_path(spec, p)
        W = bc.envelope(lam, a, spec.c_delta, st.qvar[:, 0])
        hits_plus += bool(np.any(st.M[:, 0] >= W))
        hits_minus += bool(np.any(-st.M[:, 0] >= W))
    assert rep.results[0].count == hits_plus
    assert rep.results[1].count == hits_minus


# martingale checks

def test_exponential_lambda_zero_is_exactly_one():
    rep = hs.exponential_martingale_check(models.poisson_counter(1.0), 0.0, ens(1000, 1.0), 0.0)
    assert rep.results[0].mean == 1.0 and rep.results[0].stderr == 0.0


def test_exponential_poisson_closed_form():
    rep = hs.exponential_martingale_check(models.poisson_counter(1.0), 0.0, ens(100_000, 1.0, seed=3), 1.0)
    assert rep.passed
    # E_T = exp(N_T - (e - 1) T) path by path
    from jumpcalc.engine import run_ensemble
    res = run_ensemble(models.poisson_counter(1.0), 0.0, SimConfig(T=1.0, seed=3), 100_000)
    E = np.exp(res.x_end[:, 0] - (math.e - 1))
    assert rep.results[0].mean == pytest.approx(E.mean(), rel=1e-12)


def test_exponential_integrand_fast_path_matches_transform():
    spec = models.sis(models.SisParams(50, 2.0))
    lam = 0.7
    fast = hs._exp_integrand(spec, lam)
    assert getattr(fast, "uses_local_data", False)
    slow_spec = ProcessSpec(DiscreteKernel(spec.kernel.weights, lambda x: np.tile([[1 / 50], [-1 / 50]],
                                                                                  (x.shape[0], 1, 1))),
                            c_delta=1 / 50)
    slow = hs._exp_integrand(slow_spec, lam)
    assert not getattr(slow, "uses_local_data", False)
    xs = np.linspace(0, 1, 101)[:, None]
    np.testing.assert_allclose(fast(xs), slow(xs), rtol=1e-9, atol=1e-13)


def test_exponential_flow_is_one():
    rep = hs.exponential_martingale_check(zero_rate_flow(lambda x: -x), 1.0, ens(20, 1.0, dt_grid=0.01), 0.8)
    assert np.allclose(rep.results[0].mean, 1.0, atol=1e-10)


def test_quadratic_examples():
    rep = hs.ensemble_checks(models.poisson_counter(1.0), 0.0, ens(100_000, 10.0, seed=4))
    assert rep["quadratic"].results[0].extra["mean_M2"] == pytest.approx(10, rel=0.03)
    assert rep["quadratic"].passed and rep["martingale"].passed
    rep = hs.ensemble_checks(models.birth_death(2.0, 1.0), 0.0, ens(100_000, 1.0, seed=4))
    assert rep["quadratic"].results[0].extra["mean_M2"] == pytest.approx(3, rel=0.03)
    rep = hs.quadratic_martingale_check(zero_rate_flow(lambda x: -x), 1.0, ens(10, 1.0, dt_grid=0.01))
    assert abs(rep.results[0].mean) < 1e-20


def test_upper_mode_is_one_sided():
    r = hs._mean_result("E", {}, np.array([0.5, 0.6, 0.4, 0.5]), 1.0, "upper")
    assert r.verdict == "respected"
    r = hs._mean_result("E", {}, np.array([0.5, 0.6, 0.4, 0.5]), 1.0, "two_sided")
    assert r.verdict == "violated"


# lemmas

def test_lemma_linear_drift_random_x0():
    rng = np.random.default_rng(0)
    x0 = rng.integers(1, 5, 5000).astype(float)
    rep = hs.verify_lemma(models.yule(1.0), x0, ens(5000, 3.0), bc.LinearDrift(6.0, 1.0, 1.0), ell=1.0)
    r = rep.results[0]
    expect = np.mean([math.exp(-(6 - 2) * v / 4) for v in x0])
    assert r.raw_bound == pytest.approx(expect, rel=1e-12)
    assert rep.passed and r.audit_failures == 0


def test_lemma_hypothesis_violation_marks_invalid():
    # positive drift breaks the drift barrier hypothesis
    q = bc.DriftBarrier(1.0, 0.05, 0.1, 1.0, 0.2)
    rep = hs.verify_lemma(models.birth_death(3.0, 1.0, 0.05), 0.2, ens(200, 1.0), q)
    assert rep.results[0].verdict == "invalid"
    assert rep.audits[0]["failures"] > 0
    assert rep.audits[0]["example"] is not None


def test_lemma_near_vacuous_bound_respected():
    q = bc.DiffusiveBarrier(0.5, 10.0, 0.1)
    rep = hs.verify_lemma(models.birth_death(1.0, 1.0, 0.1), 0.0, ens(2000, 1.0), q)
    r = rep.results[0]
    assert 0.9 < r.bound <= 1.0
    assert r.verdict == "respected"


def test_lemma_preconditions():
    with pytest.raises(DomainError):
        hs.verify_lemma(models.birth_death(1, 3, 0.05), 0.9, ens(10, 1.0), bc.DriftBarrier(1, 0.05, 0.1, 0.1, 0.01))
    with pytest.raises(DomainError):
        hs.verify_lemma(models.yule(1.0), 1.0, ens(10, 1.0), bc.LinearDrift(6, 1, 1))


def test_diffusive_barrier_audits_realized_qvar():
    # diffusivity is 0.02, so <X>_10 is about 0.2 on paths that never reach the barrier
    q = bc.DiffusiveBarrier(1.0, 0.05, 0.1)
    rep = hs.verify_lemma(models.birth_death(1.0, 1.0, 0.1), 0.0, ens(500, 10.0), q)
    assert rep.results[0].verdict == "invalid"
    assert any(a["hypothesis"] == "<X>_T <= qvar_T" and a["failures"] for a in rep.audits)


# flows and the logistic model

def test_solve_flow_matches_exact():
    sol = hs.solve_flow(lambda x: -x, 1.0, 2.0, 0.01)
    ts = np.linspace(0, 2, 37)
    np.testing.assert_allclose(sol(ts)[:, 0], np.exp(-ts), rtol=1e-8)


def test_ode_approx_deterministic_spec_has_zero_deviation():
    spec = hs.deterministic_spec(lambda x: -x)
    with pytest.raises(DomainError):
        hs.verify_ode_approx(spec, 1.0, ens(5, 1.0), 0.1, 1.0, 0.01, lambda x: -x)


def test_ode_approx_small_sis():
    n, lam = 400, 2.0
    spec = models.sis(models.SisParams(n, lam))
    c_rho = 1.125 / n
    rep = hs.verify_ode_approx(spec, 0.1, ens(500, 1.0), 0.05, 3.0, c_rho, lambda v: models.sis_drift(v, lam))
    r = rep.results[0]
    assert r.extra["radius"] == pytest.approx(0.05 * math.exp(3))
    assert rep.passed


def test_flow_time_examples():
    assert hs.flow_time(0.3, 0.3, 1.0, 0.2) == 0.0
    t = hs.flow_time(0.1, 0.05, 1.0, 0.1)
    assert t == pytest.approx(10 * (math.log(2) - math.log(4 / 3)), rel=1e-14)
    assert t == pytest.approx(4.054651, abs=1e-6)
    assert t == pytest.approx(rk4_flow_time(0.1, 0.05, 1.0, 0.1), rel=1e-9)
    assert hs.flow_time(0.4, 0.1, 0.0, 0.5) == pytest.approx(math.log(4) / 0.5, rel=1e-14)
    with pytest.raises(DomainError):
        hs.flow_time(0.1, 0.2, 1.0, 0.1)
    with pytest.raises(DomainError):
        hs.flow_time(0.1, 0.05, 1.0, 0.0)


def test_flow_time_three_ways_agree():
    x0, x, lam, d = 0.03, 0.004, 0.9, 0.1
    t = hs.flow_time(x0, x, lam, d)
    assert hs.flow_time_rk4(x0, x, lam, d) == pytest.approx(t, rel=1e-12)
    assert hs.flow_time_engine(x0, x, lam, d) == pytest.approx(t, rel=1e-9)


def test_intermediate_phase_params():
    n, lam = 10**6, 0.95
    p = models.SisParams(n, lam)
    x0 = p.delta0**0.75 / math.sqrt(n)
    ip = hs.intermediate_phase_params(n, lam, x0)
    assert ip.x_star == pytest.approx(p.delta0**0.25 / math.sqrt(n))
    # eps = delta0^{-5/6} delta / 2
    assert ip.eps == pytest.approx(p.delta0 ** (-5 / 6) * p.delta / 2, rel=1e-12)
    assert ip.raw_bound == pytest.approx(6 / math.sqrt(ip.kappa), rel=1e-12)
    with pytest.raises(DomainError):
        hs.intermediate_phase_params(n, lam, 0.5)
    with pytest.raises(DomainError):
        hs.intermediate_phase_params(n, 1.0, x0)


def test_intermediate_phase_kappa_asymptotics():
    d0, lam_lim = 50.0, None
    vals = []
    for n in [1e8, 1e10, 1e12]:
        lam = 1 - d0 / math.sqrt(n)
        x0 = d0**0.75 / math.sqrt(n)
        ip = hs.intermediate_phase_params(int(n), lam, x0)
        vals.append(ip.log_kappa / (d0 ** (1 / 3) * lam / (4 * (1 + lam))))
    assert abs(vals[-1] - 1) < abs(vals[0] - 1) or abs(vals[0] - 1) < 1e-6
    assert vals[-1] == pytest.approx(1.0, rel=1e-4)


@pytest.mark.slow
def test_intermediate_phase_large_population():
    n, lam = 10**6, 0.95
    rep = hs.logistic_intermediate_phase(n, lam, ens(64, 1.0, seed=5))
    r = rep.results[0]
    assert r.verdict == "respected"
    assert r.extra["t_star"] == pytest.approx(rk4_flow_time(r.params["x0"], r.extra["x_star"], lam, 1 - lam),
                                              rel=1e-8)


# serialization

def test_report_json_round_trip():
    rep = hs.ensemble_checks(models.birth_death(2.0, 1.0), 0.0, ens(500, 1.0), exp_lambda=0.5,
                             sample_path={"lams": [1.0], "a_vals": [1.0, 2.0], "signs": [1, -1]})
    for r in rep.values():
        back = McReport.from_json(r.to_json())
        assert back.to_json() == r.to_json()
        assert back.fingerprint() == r.fingerprint()
    csv_text = reports_to_csv(list(rep.values()))
    assert csv_text.count("\n") == 1 + sum(len(r.results) for r in rep.values())


def test_report_handles_infinite_values():
    q = QueryResult("x", {"a": math.inf}, 1, 0, 0.0, 0.0, 1.0, 0.5, 1.0, math.inf, "respected", 0.0)
    rep = McReport("t", [q], 0.1)
    back = McReport.from_json(rep.to_json())
    assert back.results[0].raw_bound == math.inf
    assert back.results[0].params["a"] == math.inf
