"""Finite-size-scaling fit of logical success rates and cut-off optimization.

Model, with L the code distance:

    r(p, L) = a + b (p - p_th) L^(1/kappa) + c (p - p_th)^2 L^(2/kappa) + e L^(-1/zeta)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

PARAMS = ("a", "b", "c", "e", "p_th", "kappa", "zeta")
N_PARAMS = len(PARAMS)


class FitError(RuntimeError):
    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class DataPoint:
    p: float
    d: int
    successes: int
    shots: int
    rate: float | None = None  # exact success rate for synthetic data

    def __post_init__(self):
        if self.shots < 1 or not 0 <= self.successes <= self.shots:
            raise ValueError("need 0 <= successes <= shots and shots >= 1")

    @property
    def r(self) -> float:
        return self.successes / self.shots if self.rate is None else self.rate

    @property
    def sigma(self) -> float:
        r = self.r
        return math.sqrt(r * (1 - r) / self.shots)

    @classmethod
    def from_failures(cls, p, d, failures, shots):
        return cls(float(p), int(d), int(shots - failures), int(shots))


@dataclass
class FitResult:
    beta: np.ndarray
    covariance: np.ndarray
    chi2_nu: float
    ci95: tuple
    iterations: int
    log: list = field(default_factory=list)
    converged: bool = True

    @property
    def p_th(self) -> float:
        return float(self.beta[4])

    @property
    def p_th_err(self) -> float:
        return float(math.sqrt(max(self.covariance[4, 4], 0.0)))

    def to_dict(self) -> dict:
        return {
            "beta": dict(zip(PARAMS, map(float, self.beta))),
            "covariance": self.covariance.tolist(),
            "chi2_nu": self.chi2_nu,
            "p_th": self.p_th,
            "p_th_err": self.p_th_err,
            "ci95": list(self.ci95),
            "iterations": self.iterations,
            "converged": self.converged,
            "log": self.log,
        }


def _arrays(points: Sequence[DataPoint], sigma_floor: bool = True):
    p = np.array([pt.p for pt in points], dtype=float)
    L = np.array([pt.d for pt in points], dtype=float)
    r = np.array([pt.r for pt in points], dtype=float)
    s = np.array([pt.sigma for pt in points], dtype=float)
    if sigma_floor:
        # r = 0 or 1 would get infinite weight; use the one-count resolution instead
        n = np.array([pt.shots for pt in points], dtype=float)
        s = np.maximum(s, 1.0 / n)
    return p, L, r, s


def model(beta, p, L) -> np.ndarray:
    a, b, c, e, pth, kappa, zeta = beta
    x = np.asarray(p) - pth
    s = np.asarray(L, dtype=float) ** (1.0 / kappa)
    return a + b * x * s + c * x**2 * s**2 + e * np.asarray(L, dtype=float) ** (-1.0 / zeta)


def jacobian_arrays(beta, p, L) -> np.ndarray:
    a, b, c, e, pth, kappa, zeta = beta
    L = np.asarray(L, dtype=float)
    x = np.asarray(p) - pth
    lnL = np.log(L)
    s = L ** (1.0 / kappa)
    ds = -s * lnL / kappa**2
    u = L ** (-1.0 / zeta)
    J = np.empty((len(x), N_PARAMS))
    J[:, 0] = 1.0
    J[:, 1] = x * s
    J[:, 2] = x**2 * s**2
    J[:, 3] = u
    J[:, 4] = -b * s - 2 * c * x * s**2
    J[:, 5] = b * x * ds + 2 * c * x**2 * s * ds
    J[:, 6] = e * u * lnL / zeta**2
    return J


def jacobian(beta, points: Sequence[DataPoint]) -> np.ndarray:
    p, L, _, _ = _arrays(points)
    return jacobian_arrays(beta, p, L)


def weighted_q(beta, points: Sequence[DataPoint]) -> float:
    p, L, r, s = _arrays(points)
    return float(np.sum(((r - model(beta, p, L)) / s) ** 2))


def reduced_chi2(points: Sequence[DataPoint], beta) -> float:
    nu = len(points) - N_PARAMS
    if nu <= 0:
        raise FitError(f"need more than {N_PARAMS} points for a reduced chi-squared")
    return weighted_q(beta, points) / nu


def t_factor(nu: int) -> float:
    if nu > 200:
        return 1.96
    return float(stats.t.ppf(0.975, nu))


def crossing_guess(points: Sequence[DataPoint]) -> float:
    """Crossing of the two largest-distance curves by linear interpolation."""
    ds = sorted({pt.d for pt in points})
    if len(ds) < 2:
        raise FitError("need at least two distances")
    curves = []
    for d in ds[-2:]:
        pts = sorted((pt.p, pt.r) for pt in points if pt.d == d)
        curves.append(pts)
    ps = sorted({pt.p for pt in points if pt.d in ds[-2:]})
    diff = np.array([np.interp(x, *zip(*curves[1])) - np.interp(x, *zip(*curves[0])) for x in ps])
    for i in range(len(ps) - 1):
        if diff[i] == 0:
            return ps[i]
        if diff[i] * diff[i + 1] < 0:
            t = diff[i] / (diff[i] - diff[i + 1])
            return ps[i] + t * (ps[i + 1] - ps[i])
    return float(np.median(ps))


def initial_guess(points: Sequence[DataPoint]) -> np.ndarray:
    """p_th from the crossing, kappa = zeta = 1, then a, b, c, e by linear least squares."""
    p, L, r, s = _arrays(points)
    pth = crossing_guess(points)
    beta = np.array([0, 0, 0, 0, pth, 1.0, 1.0], dtype=float)
    J = jacobian_arrays(beta, p, L)[:, :4]
    coef, *_ = np.linalg.lstsq(J / s[:, None], r / s, rcond=None)
    beta[:4] = coef
    return beta


def _scaled(J, w, beta):
    Jw = J * np.sqrt(w)[:, None]
    scale = np.linalg.norm(Jw, axis=0)
    if np.any(scale == 0) or not np.all(np.isfinite(scale)):
        raise FitError("singular normal matrix: a parameter has no influence on the model", beta)
    return Jw / scale, scale


def _gn_step(J, eps, w, beta) -> np.ndarray:
    """Solve (J^T W J) step = J^T W eps via least squares on the column-scaled system."""
    Js, scale = _scaled(J, w, beta)
    # directions with tiny singular values are dropped, which keeps poor iterates stable
    y, *_ = np.linalg.lstsq(Js, eps * np.sqrt(w), rcond=1e-10)
    return y / scale


def _covariance(J, w, beta) -> np.ndarray:
    Js, scale = _scaled(J, w, beta)
    cond = np.linalg.cond(Js)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise FitError(f"singular normal matrix: scaled condition number {cond:.3g}", beta)
    inv = np.linalg.pinv(Js.T @ Js)
    return inv / np.outer(scale, scale)


SETTLED = 1e-2  # largest per-step change of a fitted rate, in units of sigma, at the iteration cap
MAX_COND = 1e7  # on the column-scaled Jacobian, so 1e14 on the normal matrix


def fit_threshold(
    points: Sequence[DataPoint],
    init=None,
    tol: float = 1e-9,
    max_iter: int = 200,
    halving: int = 30,
) -> FitResult:
    """Weighted Gauss-Newton with step halving.

    Stops when the relative parameter step falls below tol. Reaching max_iter
    returns the last iterate with converged=False provided the fitted rates
    have settled (this happens when e and zeta drift along a direction the
    data do not constrain); otherwise FitError is raised.
    """
    points = list(points)
    if len({pt.d for pt in points}) < 3 or len({pt.p for pt in points}) < 4:
        raise FitError("need at least 3 distances and 4 error rates")
    n = len(points)
    if n <= N_PARAMS:
        raise FitError("need more points than parameters")
    p, L, r, s = _arrays(points)
    w = 1.0 / s**2
    beta = np.array(initial_guess(points) if init is None else init, dtype=float)
    q = weighted_q(beta, points)
    log = [{"iter": 0, "Q": q, "beta": beta.tolist()}]
    converged = False
    moved = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        J = jacobian_arrays(beta, p, L)
        eps = r - model(beta, p, L)
        step = _gn_step(J, eps, w, beta)
        lam = 1.0
        for _ in range(halving):
            trial = beta + lam * step
            if trial[5] > 0 and trial[6] > 0:
                qt = weighted_q(trial, points)
                if np.isfinite(qt) and qt <= q:
                    break
            lam /= 2
        else:
            # no decrease along the Gauss-Newton direction: at a minimum to numerical precision
            converged = True
            break
        rel = np.max(np.abs(lam * step) / np.maximum(np.abs(beta), 1e-12))
        moved = np.max(np.abs(model(trial, p, L) - model(beta, p, L)) / s)
        beta, q = trial, qt
        log.append({"iter": it, "Q": q, "lambda": lam, "moved": float(moved), "beta": beta.tolist()})
        if rel < tol:
            converged = True
            break
    if not converged and not moved < SETTLED:
        raise FitError("Gauss-Newton did not converge", beta)
    J = jacobian_arrays(beta, p, L)
    cov = _covariance(J, w, beta)
    chi2 = q / (n - N_PARAMS)
    if chi2 > 1:
        cov = cov * chi2
    cov = (cov + cov.T) / 2
    half = t_factor(n - N_PARAMS) * math.sqrt(max(cov[4, 4], 0.0))
    return FitResult(beta, cov, chi2, (beta[4] - half, beta[4] + half), it, log, converged)


def synthetic_points(beta, ps, ds, shots: int, rng=None) -> list:
    """Points from the model; binomial draws when rng is given, exact rates otherwise."""
    out = []
    for d in ds:
        for p in ps:
            rate = float(model(beta, p, d))
            if not 0 <= rate <= 1:
                raise ValueError(f"model rate {rate} outside [0, 1] at p={p}, d={d}")
            if rng is None:
                out.append(DataPoint(float(p), int(d), int(round(rate * shots)), shots, rate))
            else:
                out.append(DataPoint(float(p), int(d), int(rng.binomial(shots, rate)), shots))
    return out


# Cut-off optimization


@dataclass
class CutoffScan:
    entries: list  # (x, p_th or None, ci or None)
    optimum: float | None

    def to_dict(self) -> dict:
        return {"entries": [list(e) for e in self.entries], "optimum": self.optimum}


def optimize_cutoff(evaluate: Callable[[float], list], x_range=(0.95, 0.999), budget: int = 7,
                    min_success: float = 0.2) -> CutoffScan:
    """Search the cut-off percentile that maximizes the fitted threshold.

    ``evaluate(x)`` returns the DataPoints for percentile x. A percentile whose
    points all have success below min_success (p_L > 0.8) is discarded without
    fitting. The search starts from the two ends and the midpoint and then
    bisects on the side of the best value, assuming a unimodal profile.
    """
    lo, hi = x_range
    if not (0 < lo < hi <= 1):
        raise ValueError("x_range must lie in (0, 1] with lo < hi")
    if budget < 3:
        raise ValueError("budget must allow at least 3 evaluations")
    cache: dict = {}

    def score(x):
        if x not in cache:
            pts = evaluate(x)
            if all(pt.r < min_success for pt in pts):
                cache[x] = (None, None)
            else:
                try:
                    fr = fit_threshold(pts)
                    cache[x] = (fr.p_th, fr.ci95)
                except FitError:
                    cache[x] = (None, None)
        v = cache[x][0]
        return -math.inf if v is None else v

    xs = [lo, (lo + hi) / 2, hi]
    for x in xs:
        score(x)
    a, b = lo, hi
    while len(cache) < budget:
        best = max(cache, key=lambda x: (score(x), -x))
        width = (b - a) / 4
        cands = [c for c in (best - width, best + width) if a <= c <= b and c not in cache]
        if not cands:
            break
        for c in cands:
            if len(cache) >= budget:
                break
            score(c)
        a, b = max(a, best - 2 * width), min(b, best + 2 * width)
    entries = sorted((x, *cache[x]) for x in cache)
    valid = [e for e in entries if e[1] is not None]
    opt = max(valid, key=lambda e: e[1])[0] if valid else None
    return CutoffScan(entries, opt)
