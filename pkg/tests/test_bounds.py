import math

import numpy as np
import pytest

from ifslearn.bounds import (
    BoundParams,
    coeff_product,
    coeff_sum,
    coefficient_grid,
    e_init,
    e_samp_constants,
    grad_sum_bound,
    markov_self_test,
    total_bound,
    validate_bounds,
)
from ifslearn.copula_core import ValidationError
from ifslearn.mcsgd import IterateTrace
from ifslearn.rkhs import GaussianKernel, KernelExpansion


def params(**kw):
    base = dict(theta=0.75, lam=0.1, C_k=1.0, M=1.0, t_mix=1, T=5000, delta=0.2, beta=0.5, g_norm=1.0, dist0_sq=0.4)
    base.update(kw)
    return BoundParams(**base)


def test_product_spot_values():
    r = coeff_product(1.0, 1.0, 1, 3)
    assert math.isclose(r.exact, 1 / 3, rel_tol=1e-15) and r.bound == 0.5 and r.holds
    assert coeff_product(0.5, 0.75, 7, 7).exact == 1.0
    with pytest.raises(ValidationError):
        coeff_product(1.0, 0.75, 0, 5)


def test_sum_spot_values():
    assert coeff_sum(1.0, 1.0, 10) == (pytest.approx(1.0), 3.0)
    assert coeff_sum(0.4, 0.6, 1).exact == 1.0


def test_theta_one_grid_has_no_violations():
    g = coefficient_grid([0.1, 0.5, 1.0], [1.0], [10, 100, 1000])
    assert g["product_violations"] == 0 and g["sum_violations"] == 0


def test_integral_form_of_the_product_bound_holds():
    # with factor 1 in the exponent the theta < 1 bound is what the integral comparison gives
    g = coefficient_grid([0.1, 0.5, 1.0], [0.55, 0.75, 0.95], [10, 1000], factor=1.0)
    assert g["product_violations"] == 0


def test_grad_sum_constants():
    g = grad_sum_bound(1.0, 1.0, 1)
    assert (g.proof, g.statement, g.simplified) == (26.0, 46.0, 30.0)
    assert grad_sum_bound(1.0, 0.75, 1).proof == pytest.approx(2 * grad_sum_bound(0.5, 0.75, 1).proof)
    with pytest.raises(ValidationError):
        grad_sum_bound(1.0, 0.5, 1)


def test_e_init():
    assert e_init(0.75, 0.3, 10, 0.0) == 0.0
    assert e_init(1.0, 1.0, 2, 1.0) == pytest.approx(2.0)
    assert e_init(0.75, 0.09, 1000, 1.0) < e_init(0.75, 0.09, 100, 1.0)
    with pytest.raises(ValidationError):
        e_init(0.75, 0.1, 1, 1.0)


def test_sampling_constants():
    p = params()
    assert p.c_one**2 == pytest.approx(p.c_prime)
    C, B = e_samp_constants(p)
    assert C > 0 and B >= math.sqrt(C)
    Cinf, _ = e_samp_constants(params(T=10**9))
    assert Cinf == pytest.approx(3 * p.c_prime * 0.75 / (0.01 * 0.5), rel=1e-6)
    C1, B1 = e_samp_constants(params(theta=1.0))
    k2 = p.kappa**2
    assert C1 == pytest.approx(p.c_prime / 0.01 * (3 + k2 * 2 ** (k2 + 1) / 5000**k2))


def test_total_bound():
    p = params(g_norm=0.0, dist0_sq=0.0)
    _, B = e_samp_constants(p)
    assert total_bound(p) == pytest.approx(B / math.sqrt(0.2))
    # lambda^beta g shrinks with lambda while B grows like 1/lambda
    hi, lo = params(lam=0.5, beta=1.0), params(lam=0.01, beta=1.0)
    assert lo.lam * lo.g_norm < hi.lam * hi.g_norm and e_samp_constants(lo)[1] > e_samp_constants(hi)[1]


def test_params_validation():
    with pytest.raises(ValidationError):
        params(delta=1.0)
    with pytest.raises(ValidationError):
        params(t_mix=0)
    assert params().sigma_sq == pytest.approx((2 * 1.1 / 0.1) ** 2)


def test_markov_self_test(rng):
    assert markov_self_test(rng.exponential(size=500))
    assert markov_self_test(np.zeros(10))
    with pytest.raises(ValidationError):
        markov_self_test([-1.0, 2.0])


def _trace(errors):
    T = len(errors)
    return IterateTrace(
        t=np.arange(1, T + 1), gamma=np.ones(T), x=np.zeros((T, 2)), y=np.zeros(T), fx=np.zeros(T),
        residual=np.zeros(T), l2_error=np.asarray(errors, float), rkhs_norm=np.zeros(T),
        final=KernelExpansion.zero(GaussianKernel(0.5)),
    )


def test_validate_bounds_identical_replicates():
    traces = [_trace(np.linspace(0.3, 0.1, 20)) for _ in range(30)]
    rep = validate_bounds(traces, params(T=20))
    assert rep.passed
    assert rep.empirical["variance_final_sq_error"] == pytest.approx(0.0, abs=1e-30)
    assert rep.checks["jensen"]["margin"] == pytest.approx(0.0, abs=1e-15)
    assert rep.theory["quantile_threshold"] == pytest.approx(rep.theory["C_theta_lambda"] / 0.2)


def test_validate_bounds_needs_replicates():
    with pytest.raises(ValidationError):
        validate_bounds([_trace([0.2, 0.1])] * 5, params(T=2))


def test_report_serialization(tmp_path, rng):
    traces = [_trace(rng.uniform(0, 0.2, 50)) for _ in range(30)]
    rep = validate_bounds(traces, params(T=50))
    rep.to_json(tmp_path / "r.json")
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("t,empirical_mean_sq_error")
    assert all(np.isfinite(v) and v >= 0 for k, v in rep.theory.items() if isinstance(v, float))
