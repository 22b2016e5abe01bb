"""Numerical verification of the similarity metric's statistical properties.

The discriminability claims about the rank-product similarity rest on three
facts about 1-D patch distributions, all phrased through the quadratic
surrogate ``phi(x) = 1 - x/sigma1 + x^2/(2*sigma1^2)`` of ``exp(-x/sigma1)``,
where ``x`` is the product of the two neighbor counts

    c1 = #{k != i : |p_k - q_j| <= |p_i - q_j|},
    c2 = #{l != j : |q_l - p_i| <= |p_i - q_j|}.

* the expectation and variance of the surrogate score admit closed double
  integrals over the patch densities (evaluated here by adaptive quadrature
  with exact binomial conditional moments of ``c1*c2``),
* the surrogate's second-moment mean exceeds its mean
  (``lemma3``; the closed-form margin is
  ``-E[x]/sigma1 + 3*E[x^2]/(2*sigma1^2)``), and
* when the surrogate mean is recentered to match the mutual-1-NN indicator's
  mean, the variance gap equals the second-moment gap and is positive
  (``theorem1``).

Monte Carlo and quadrature estimate the same quantities, so they must agree
within sampling error; the module also reports the literal mean-field
integrals (count statistics replaced by ``N*Cp``/``M*Cq``) as ``*_meanfield``
fields, and the exact exponential metric's reversed margin as documentation
-- for the exact metric the score lies in (0, 1], hence its square never
exceeds it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special
from scipy.integrate import quad, quad_vec

__all__ = [
    "GaussianSpec",
    "UniformSpec",
    "GaussianMixtureSpec",
    "surrogate_mbp",
    "surrogate_mbp_squared",
    "TheoryReport",
    "QuadratureResult",
    "mc_estimate",
    "quadrature_expectation",
    "Lemma3Verdict",
    "verify_lemma3",
    "Theorem1Verdict",
    "verify_theorem1",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class GaussianSpec:
    """Normal patch distribution N(mean, std^2)."""

    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not (self.std > 0):
            raise ValueError("std must be positive (degenerate distribution)")

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (self.std * math.sqrt(2 * math.pi))

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / (self.std * _SQRT2)
        return 0.5 * (1.0 + special.erf(z))

    def sample(self, rng: np.random.Generator, size):
        return rng.normal(self.mean, self.std, size)

    def support(self) -> tuple[float, float]:
        return (self.mean - 12.0 * self.std, self.mean + 12.0 * self.std)


@dataclass(frozen=True)
class UniformSpec:
    """Uniform patch distribution on [lo, hi]."""

    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise ValueError("hi must exceed lo (degenerate distribution)")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.lo) & (x <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def sample(self, rng: np.random.Generator, size):
        return rng.uniform(self.lo, self.hi, size)

    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Two-component Gaussian mixture: w * N(m1, s1^2) + (1-w) * N(m2, s2^2)."""

    weight: float = 0.5
    mean1: float = -1.0
    std1: float = 1.0
    mean2: float = 1.0
    std2: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.weight < 1.0):
            raise ValueError("mixture weight must lie strictly inside (0, 1)")
        if not (self.std1 > 0 and self.std2 > 0):
            raise ValueError("component stds must be positive")

    def _components(self):
        return (
            GaussianSpec(self.mean1, self.std1),
            GaussianSpec(self.mean2, self.std2),
        )

    def pdf(self, x):
        g1, g2 = self._components()
        return self.weight * g1.pdf(x) + (1.0 - self.weight) * g2.pdf(x)

    def cdf(self, x):
        g1, g2 = self._components()
        return self.weight * g1.cdf(x) + (1.0 - self.weight) * g2.cdf(x)

    def sample(self, rng: np.random.Generator, size):
        pick = rng.random(size) < self.weight
        g1, g2 = self._components()
        return np.where(pick, g1.sample(rng, size), g2.sample(rng, size))

    def support(self) -> tuple[float, float]:
        (a1, b1), (a2, b2) = (g.support() for g in self._components())
        return (min(a1, a2), max(b1, b2))


def validate_spec(spec, tol: float = 1e-6) -> None:
    """Check the density integrates to 1 and the CDF is monotone."""
    lo, hi = spec.support()
    total, _ = quad(lambda x: float(spec.pdf(x)), lo, hi, limit=200)
    if abs(total - 1.0) > tol:
        raise ValueError(f"density integrates to {total!r}, expected 1 within {tol}")
    grid = np.linspace(lo, hi, 257)
    cdf = spec.cdf(grid)
    if np.any(np.diff(cdf) < -1e-12):
        raise ValueError("CDF is not monotone")


def surrogate_mbp(x, sigma1: float):
    """Second-order Taylor surrogate ``1 - x/sigma1 + x^2/(2*sigma1^2)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("rank-product statistic must be non-negative")
    out = 1.0 - x / sigma1 + x * x / (2.0 * sigma1 * sigma1)
    return float(out) if out.ndim == 0 else out


def surrogate_mbp_squared(x, sigma1: float):
    """Second-order surrogate of the squared score, ``1 - 2x/s + 2x^2/s^2``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("rank-product statistic must be non-negative")
    out = 1.0 - 2.0 * x / sigma1 + 2.0 * x * x / (sigma1 * sigma1)
    return float(out) if out.ndim == 0 else out


def _fsum(arr) -> float:
    # compensated summation so aggregation order cannot perturb results
    return math.fsum(np.asarray(arr, dtype=float).tolist())


def _mean_se(arr) -> tuple[float, float]:
    t = len(arr)
    mean = _fsum(arr) / t
    var = _fsum((np.asarray(arr, dtype=float) - mean) ** 2) / (t - 1)
    return mean, math.sqrt(var / t)


def _variance_se(arr, mean: float) -> float:
    # SE of the sample variance via its fourth central moment
    t = len(arr)
    dev = np.asarray(arr, dtype=float) - mean
    m2 = _fsum(dev**2) / t
    m4 = _fsum(dev**4) / t
    return math.sqrt(max(m4 - m2 * m2, 0.0) / t)


@dataclass
class TheoryReport:
    """Monte Carlo estimates of the surrogate/indicator score statistics.

    Variances are population variances of the per-trial scores so the
    matched-mean identity closes exactly; ``exact_metric_margin`` documents
    that the *exact* exponential metric reverses the lemma inequality.
    """

    n: int
    m: int
    sigma1: float
    trials: int
    seed: int
    e_mbs: float = 0.0
    se_e_mbs: float = 0.0
    e_mbs2: float = 0.0
    se_e_mbs2: float = 0.0
    e_bbs: float = 0.0
    se_e_bbs: float = 0.0
    e_bbs2: float = 0.0
    v_mbs: float = 0.0
    se_v_mbs: float = 0.0
    v_bbs: float = 0.0
    se_v_bbs: float = 0.0
    score_sq_mean: float = 0.0
    se_score_sq_mean: float = 0.0
    lemma3_margin: float = 0.0
    se_lemma3_margin: float = 0.0
    theorem1_margin: float = 0.0
    se_theorem1_margin: float = 0.0
    theorem1_identity_residual: float = 0.0
    exact_metric_margin: float = 0.0
    lemma3_positive: bool = False
    theorem1_positive: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def mc_estimate(
    spec_p,
    spec_q,
    n: int,
    m: int,
    sigma1: float = 0.5,
    trials: int = 100_000,
    seed: int = 0,
) -> TheoryReport:
    """Monte Carlo estimates of the score statistics over random patch sets.

    Each trial samples ``n`` points from ``spec_p`` and ``m`` from ``spec_q``,
    picks one pair ``(i, j)`` uniformly, and records the surrogate score of
    its count product, the surrogate squared score, and the exact
    mutual-1-NN indicator.  Deterministic per seed.  ``n = m = 1`` is
    allowed: a lone pair is always mutual and its counts are empty.
    """
    if n < 1 or m < 1:
        raise ValueError("need at least one patch per set")
    if trials < 10_000:
        raise ValueError("trials must be >= 10000 for stable error bars")
    validate_spec(spec_p)
    validate_spec(spec_q)

    rng = np.random.default_rng(seed)
    p = spec_p.sample(rng, (trials, n))
    q = spec_q.sample(rng, (trials, m))
    i = rng.integers(0, n, trials)
    j = rng.integers(0, m, trials)
    rows = np.arange(trials)
    pi = p[rows, i]
    qj = q[rows, j]
    d = np.abs(pi - qj)

    dp = np.abs(p - qj[:, None])           # distances of every p_k to q_j
    dq = np.abs(q - pi[:, None])           # distances of every q_l to p_i
    c1 = np.count_nonzero(dp <= d[:, None], axis=1) - 1   # excludes k == i
    c2 = np.count_nonzero(dq <= d[:, None], axis=1) - 1   # excludes l == j
    x = (c1 * c2).astype(float)

    phi = surrogate_mbp(x, sigma1)
    phi2 = surrogate_mbp_squared(x, sigma1)
    phisq = phi * phi
    bbp = ((np.argmin(dp, axis=1) == i) & (np.argmin(dq, axis=1) == j)).astype(float)
    y_exact = np.exp(-x / sigma1)

    report = TheoryReport(n=n, m=m, sigma1=sigma1, trials=trials, seed=seed)
    report.e_mbs, report.se_e_mbs = _mean_se(phi)
    report.e_mbs2, report.se_e_mbs2 = _mean_se(phi2)
    report.e_bbs, report.se_e_bbs = _mean_se(bbp)
    report.e_bbs2 = _fsum(bbp * bbp) / trials
    report.score_sq_mean, report.se_score_sq_mean = _mean_se(phisq)

    report.v_mbs = report.score_sq_mean - report.e_mbs**2
    report.se_v_mbs = _variance_se(phi, report.e_mbs)
    report.v_bbs = report.e_bbs - report.e_bbs**2
    report.se_v_bbs = _variance_se(bbp, report.e_bbs)

    report.lemma3_margin, report.se_lemma3_margin = _mean_se(phi2 - phi)
    report.lemma3_positive = report.lemma3_margin > 3.0 * report.se_lemma3_margin

    # matched-mean protocol: shift the surrogate scores so their mean equals
    # the indicator mean; then V_mbs - V_bbs must equal E[y^2] - E[y] of the
    # shifted scores, an exact sample identity.
    gamma = report.e_bbs - report.e_mbs
    recentered_sq = report.score_sq_mean + 2.0 * gamma * report.e_mbs + gamma**2
    report.theorem1_margin = report.v_mbs - report.v_bbs
    report.se_theorem1_margin = math.hypot(report.se_v_mbs, report.se_v_bbs)
    report.theorem1_identity_residual = abs(
        report.theorem1_margin - (recentered_sq - report.e_bbs)
    )
    report.theorem1_positive = (
        report.theorem1_margin > 3.0 * report.se_theorem1_margin
    )

    report.exact_metric_margin = (_fsum(y_exact * y_exact) - _fsum(y_exact)) / trials
    return report


def _binom_raw_moments(nn: int, p: float) -> tuple[float, float, float, float]:
    """Raw moments E[c^k], k=1..4, of Binomial(nn, p) via falling factorials."""
    f1 = nn
    f2 = nn * (nn - 1)
    f3 = f2 * (nn - 2)
    f4 = f3 * (nn - 3)
    p2, p3, p4 = p * p, p * p * p, p * p * p * p
    m1 = f1 * p
    m2 = f1 * p + f2 * p2
    m3 = f1 * p + 3 * f2 * p2 + f3 * p3
    m4 = f1 * p + 7 * f2 * p2 + 6 * f3 * p3 + f4 * p4
    return m1, m2, m3, m4


@dataclass
class QuadratureResult:
    """Quadrature values of the score statistics.

    ``e_mbs``/``v_mbs`` etc. use exact conditional binomial moments of the
    count product (the quantities Monte Carlo estimates); ``*_meanfield``
    fields evaluate the literal mean-field integrands, and
    ``lemma3_margin_printed`` is the second-order-term-only closed form.
    """

    n: int
    m: int
    sigma1: float
    e_mbs: float
    e_mbs2: float
    e_bbs: float
    v_mbs: float
    v_bbs: float
    score_sq_mean: float
    lemma3_margin: float
    e_mbs_meanfield: float
    e_mbs2_meanfield: float
    v_mbs_meanfield: float
    lemma3_margin_meanfield: float
    lemma3_margin_printed: float
    error_estimate: float
    rel_tol: float
    converged: bool

    def to_dict(self) -> dict:
        return asdict(self)


def quadrature_expectation(
    spec_p,
    spec_q,
    n: int,
    m: int,
    sigma1: float = 0.5,
    rel_tol: float = 1e-5,
) -> QuadratureResult:
    """Evaluate the score-statistic double integrals by adaptive quadrature.

    For each ``(p, q)`` the integrand carries ``Cp = F_P(q+d) - F_P(q-d)``
    and ``Cq = F_Q(p+d) - F_Q(p-d)`` with ``d = |p - q|``; the statistics are
    assembled from the integrals of ``Cp*Cq`` powers (mean-field) and the
    exact binomial moments of the neighbor counts.  Non-convergence is
    reported with the achieved tolerance on the result object.
    """
    if n < 2 or m < 2:
        raise ValueError("need at least two patches per set (n, m >= 2)")
    validate_spec(spec_p)
    validate_spec(spec_q)

    pa, pb = spec_p.support()
    qa, qb = spec_q.support()
    n1, m1 = n - 1, m - 1
    # component scales keep the vector integrand O(1) so the tolerance is
    # meaningful for every entry
    mom_scale = np.array(
        [float(n1 * m1) ** k for k in (1, 2, 3, 4)], dtype=float
    )

    def components(pv: float, qv: float) -> np.ndarray:
        dd = abs(pv - qv)
        u = float(spec_p.cdf(qv + dd) - spec_p.cdf(qv - dd))
        v = float(spec_q.cdf(pv + dd) - spec_q.cdf(pv - dd))
        u = min(max(u, 0.0), 1.0)
        v = min(max(v, 0.0), 1.0)
        bu = _binom_raw_moments(n1, u)
        bv = _binom_raw_moments(m1, v)
        uv = u * v
        return np.array(
            [
                uv,
                uv * uv,
                bu[0] * bv[0] / mom_scale[0],
                bu[1] * bv[1] / mom_scale[1],
                bu[2] * bv[2] / mom_scale[2],
                bu[3] * bv[3] / mom_scale[3],
                (1.0 - u) ** n1 * (1.0 - v) ** m1,
            ]
        )

    def inner(pv: float) -> np.ndarray:
        pts = [pv] if qa < pv < qb else None
        res, _ = quad_vec(
            lambda qv: components(pv, qv) * float(spec_q.pdf(qv)),
            qa,
            qb,
            epsrel=rel_tol / 10.0,
            epsabs=1e-14,
            points=pts,
            limit=500,
        )
        return res

    res, err = quad_vec(
        lambda pv: inner(pv) * float(spec_p.pdf(pv)),
        pa,
        pb,
        epsrel=rel_tol,
        epsabs=1e-12,
        limit=500,
    )
    i1, i2 = res[0], res[1]
    mu = res[2:6] * mom_scale
    e_bbs = res[6]

    s = sigma1
    e_mbs = 1.0 - mu[0] / s + mu[1] / (2 * s * s)
    e_mbs2 = 1.0 - 2.0 * mu[0] / s + 2.0 * mu[1] / (s * s)
    lemma3_margin = -mu[0] / s + 1.5 * mu[1] / (s * s)
    score_sq = (
        1.0
        - 2.0 * mu[0] / s
        + 2.0 * mu[1] / (s * s)
        - mu[2] / (s * s * s)
        + mu[3] / (4.0 * s**4)
    )
    v_mbs = score_sq - e_mbs**2
    v_bbs = e_bbs - e_bbs**2

    nm = float(n * m)
    e_mbs_mf = 1.0 - nm * i1 / s + nm * nm * i2 / (2 * s * s)
    e_mbs2_mf = 1.0 - 2.0 * nm * i1 / s + 2.0 * nm * nm * i2 / (s * s)
    v_mbs_mf = (nm / s) ** 2 * (i2 - i1 * i1)
    margin_mf = -nm * i1 / s + 1.5 * nm * nm * i2 / (s * s)
    margin_printed = 1.5 * nm * nm * i2 / (s * s)

    converged = err <= max(rel_tol * float(np.max(np.abs(res))), 1e-10)
    if not converged:
        warnings.warn(
            f"quadrature did not reach relative tolerance {rel_tol}; "
            f"achieved error estimate {err:.3e}",
            RuntimeWarning,
        )
    return QuadratureResult(
        n=n,
        m=m,
        sigma1=sigma1,
        e_mbs=e_mbs,
        e_mbs2=e_mbs2,
        e_bbs=e_bbs,
        v_mbs=v_mbs,
        v_bbs=v_bbs,
        score_sq_mean=score_sq,
        lemma3_margin=lemma3_margin,
        e_mbs_meanfield=e_mbs_mf,
        e_mbs2_meanfield=e_mbs2_mf,
        v_mbs_meanfield=v_mbs_mf,
        lemma3_margin_meanfield=margin_mf,
        lemma3_margin_printed=margin_printed,
        error_estimate=float(err),
        rel_tol=rel_tol,
        converged=converged,
    )


@dataclass
class Lemma3Verdict:
    margin: float
    se: float
    positive_beyond_3se: bool
    quad_margin: float | None
    combined_tolerance: float | None
    identity_ok: bool | None
    exact_metric_margin: float
    passed: bool


def verify_lemma3(
    report: TheoryReport,
    quad_result: QuadratureResult | None = None,
    n_se: float = 3.0,
) -> Lemma3Verdict:
    """Check that the surrogate second-moment mean exceeds the mean.

    Positivity must hold beyond ``n_se`` standard errors; when a quadrature
    result is supplied, the Monte Carlo margin must also match the
    closed-form margin within the combined MC + quadrature tolerance.
    """
    positive = report.lemma3_margin > n_se * report.se_lemma3_margin
    quad_margin = combined = identity_ok = None
    if quad_result is not None:
        quad_margin = quad_result.lemma3_margin
        combined = n_se * report.se_lemma3_margin + quad_result.rel_tol * abs(quad_margin)
        identity_ok = abs(report.lemma3_margin - quad_margin) <= combined
    passed = positive and (identity_ok is not False)
    return Lemma3Verdict(
        margin=report.lemma3_margin,
        se=report.se_lemma3_margin,
        positive_beyond_3se=positive,
        quad_margin=quad_margin,
        combined_tolerance=combined,
        identity_ok=identity_ok,
        exact_metric_margin=report.exact_metric_margin,
        passed=passed,
    )


@dataclass
class Theorem1Verdict:
    margin: float
    se: float
    identity_residual: float
    identity_ok: bool
    positive_beyond_3se: bool
    passed: bool


def verify_theorem1(report: TheoryReport, n_se: float = 3.0) -> Theorem1Verdict:
    """Check the matched-mean variance-gap identity and its positivity.

    Under mean matching the chain ``V_mbs - V_bbs = E[y^2] - E[y]`` holds
    exactly for the recentered sample scores; the substantive content is
    that the gap is positive beyond ``n_se`` standard errors.
    """
    scale = max(1.0, abs(report.theorem1_margin))
    identity_ok = report.theorem1_identity_residual <= 1e-9 * scale
    positive = report.theorem1_margin > n_se * report.se_theorem1_margin
    return Theorem1Verdict(
        margin=report.theorem1_margin,
        se=report.se_theorem1_margin,
        identity_residual=report.theorem1_identity_residual,
        identity_ok=identity_ok,
        positive_beyond_3se=positive,
        passed=identity_ok and positive,
    )
