import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emitqec import threshold as T

BETA0 = np.array([0.8, -50, -300, 0.1, 0.0025, 1.0, 1.0])
PS = np.linspace(0.0022, 0.0028, 13)
DS = (2, 3, 4, 6, 8, 10)


def test_data_point_sigma():
    pt = T.DataPoint(0.001, 4, 900, 1000)
    assert pt.r == 0.9
    assert pt.sigma == pytest.approx(math.sqrt(0.9 * 0.1 / 1000), rel=1e-14)
    assert T.DataPoint.from_failures(0.001, 4, 100, 1000) == pt
    with pytest.raises(ValueError):
        T.DataPoint(0.001, 4, 1001, 1000)


def test_partial_derivatives_closed_form():
    p, L = np.array([0.0021, 0.0031]), np.array([4.0, 8.0])
    J = T.jacobian_arrays(BETA0, p, L)
    a, b, c, e, pth, kappa, zeta = BETA0
    assert (J[:, 0] == 1).all()
    assert np.allclose(J[:, 4], -b * L ** (1 / kappa) - 2 * c * (p - pth) * L ** (2 / kappa))


@settings(max_examples=25)
@given(st.integers(0, 2**31))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    beta = BETA0 * rng.uniform(0.7, 1.3, size=7)
    p = rng.uniform(0.001, 0.004, 20)
    L = rng.choice([4.0, 6.0, 8.0, 10.0], 20)
    J = T.jacobian_arrays(beta, p, L)
    for k in range(7):
        h = 1e-6 * max(abs(beta[k]), 1e-3)
        bp, bm = beta.copy(), beta.copy()
        bp[k] += h
        bm[k] -= h
        fd = (T.model(bp, p, L) - T.model(bm, p, L)) / (2 * h)
        # cancellation makes single entries near zero, so compare on the column scale
        assert np.max(np.abs(fd - J[:, k])) < 1e-6 * np.max(np.abs(J[:, k]))


def test_reduced_chi2_trivial_cases():
    pts = T.synthetic_points(BETA0, PS[:4], DS[:3], 50_000)
    assert T.reduced_chi2(pts, BETA0) == pytest.approx(0, abs=1e-20)
    _, _, _, s = T._arrays(pts)
    n = len(pts)
    # a constant offset delta gives chi2 = sum (delta / sigma)^2
    delta = 1e-4
    beta = BETA0.copy()
    beta[0] += delta
    assert T.reduced_chi2(pts, beta) == pytest.approx(np.sum((delta / s) ** 2) / (n - 7), rel=1e-9)
    with pytest.raises(T.FitError):
        T.reduced_chi2(pts[:7], BETA0)


def test_t_factor():
    assert T.t_factor(5) == pytest.approx(2.5706, abs=1e-4)
    assert T.t_factor(1000) == 1.96


def test_noiseless_recovery():
    fr = T.fit_threshold(T.synthetic_points(BETA0, PS, DS, 50_000))
    assert np.max(np.abs(fr.beta - BETA0) / np.abs(BETA0)) < 1e-8
    assert fr.converged
    assert fr.ci95[0] < fr.p_th < fr.ci95[1]
    assert fr.p_th - fr.ci95[0] == pytest.approx(fr.ci95[1] - fr.p_th)
    cov = fr.covariance
    assert np.allclose(cov, cov.T) and np.linalg.eigvalsh(cov).min() > -1e-12 * np.abs(cov).max()


def test_accepted_steps_decrease_q():
    rng = np.random.default_rng(5)
    fr = T.fit_threshold(T.synthetic_points(BETA0, PS, DS, 50_000, rng))
    qs = [e["Q"] for e in fr.log]
    assert all(b <= a for a, b in zip(qs, qs[1:]))


def test_ci_width_scales_with_shots():
    widths = {}
    for n in (10_000, 160_000):
        rng = np.random.default_rng(11)
        w = [np.diff(T.fit_threshold(T.synthetic_points(BETA0, PS, DS, n, rng)).ci95)[0] for _ in range(8)]
        widths[n] = np.median(w)
    assert widths[10_000] / widths[160_000] == pytest.approx(4, rel=0.35)


def test_fit_preconditions():
    pts = T.synthetic_points(BETA0, PS[:3], DS, 50_000)
    with pytest.raises(T.FitError):
        T.fit_threshold(pts)
    with pytest.raises(ValueError):
        T.synthetic_points(BETA0, [0.0015], [10], 100)


def test_optimize_cutoff_monotone_profile_picks_boundary():
    rng = np.random.default_rng(2)
    beta_lo = BETA0.copy()

    def evaluate(x):
        beta = beta_lo.copy()
        beta[4] = 0.0025 + 0.0004 * (x - 0.95)  # rises with x
        return T.synthetic_points(beta, PS, DS, 50_000)

    scan = T.optimize_cutoff(evaluate, (0.95, 0.99), budget=5)
    assert scan.optimum == 0.99
    assert len(scan.entries) <= 5


def test_optimize_cutoff_unimodal_and_rejection():
    def evaluate(x):
        if x < 0.955:
            # every logical success rate below 0.2: discarded without a fit
            return [T.DataPoint(0.002, d, 10, 100) for d in DS for _ in range(2)]
        beta = BETA0.copy()
        beta[4] = 0.0025 - 0.02 * (x - 0.975) ** 2
        return T.synthetic_points(beta, PS, DS, 50_000)

    scan = T.optimize_cutoff(evaluate, (0.95, 0.99), budget=7)
    assert abs(scan.optimum - 0.975) <= 0.0101
    assert any(e[1] is None for e in scan.entries)


def test_no_fit_reports_no_threshold():
    scan = T.optimize_cutoff(lambda x: [T.DataPoint(0.002, 4, 0, 10)], (0.9, 0.99), budget=3)
    assert scan.optimum is None


@pytest.mark.slow
def test_ci_coverage():
    # 100 binomial replicates of a known model; the 95% interval should hold
    # the true crossing point in roughly 95 of them
    rng = np.random.default_rng(12345)
    hits = 0
    for _ in range(100):
        lo, hi = T.fit_threshold(T.synthetic_points(BETA0, PS, DS, 50_000, rng)).ci95
        hits += lo <= BETA0[4] <= hi
    assert 88 <= hits <= 100
