"""Gaussian curve fit of length histograms and one-sample Kolmogorov-Smirnov machinery."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erf

from burrscan.config import BurrscanError, SUPPORTED_ALPHAS
from burrscan.spaces import LengthHistogram, empirical_cdf

logger = logging.getLogger(__name__)

MIN_SUPPORT = 4
MIN_SIGMA = 0.5
MAX_EVALUATIONS = 200
MASK_FACTOR = 4.0
MAD_SCALE = 1.4826

# One-sample two-sided critical values for n <= 35 (Miller), columns alpha 0.10 / 0.05 / 0.01
_KS_TABLE = {
    1: (0.950, 0.975, 0.995), 2: (0.776, 0.842, 0.929), 3: (0.642, 0.708, 0.828),
    4: (0.564, 0.624, 0.733), 5: (0.510, 0.565, 0.669), 6: (0.470, 0.521, 0.618),
    7: (0.438, 0.486, 0.577), 8: (0.411, 0.457, 0.543), 9: (0.388, 0.432, 0.514),
    10: (0.368, 0.410, 0.490), 11: (0.352, 0.391, 0.468), 12: (0.338, 0.375, 0.450),
    13: (0.325, 0.361, 0.433), 14: (0.314, 0.349, 0.418), 15: (0.304, 0.338, 0.404),
    16: (0.295, 0.328, 0.392), 17: (0.286, 0.318, 0.381), 18: (0.278, 0.309, 0.371),
    19: (0.272, 0.301, 0.363), 20: (0.264, 0.294, 0.356), 21: (0.259, 0.287, 0.344),
    22: (0.253, 0.281, 0.337), 23: (0.247, 0.275, 0.330), 24: (0.242, 0.269, 0.323),
    25: (0.238, 0.264, 0.317), 26: (0.233, 0.259, 0.311), 27: (0.229, 0.254, 0.305),
    28: (0.225, 0.250, 0.300), 29: (0.221, 0.246, 0.295), 30: (0.218, 0.242, 0.290),
    31: (0.214, 0.238, 0.285), 32: (0.211, 0.234, 0.281), 33: (0.208, 0.231, 0.277),
    34: (0.205, 0.227, 0.273), 35: (0.202, 0.224, 0.269),
}
_KS_ASYMPTOTIC = (1.22, 1.36, 1.63)


class InsufficientSupport(BurrscanError):
    """Custom exception for histograms with fewer than four populated lengths."""
    pass


class DegenerateFit(BurrscanError):
    """Custom exception for fits whose spread collapses or diverges."""
    pass


class UnsupportedAlpha(BurrscanError):
    """Custom exception for significance levels without a critical-value column."""
    pass


def gaussian_curve(x, amplitude: float, mu: float, sigma: float):
    """amplitude · exp(−(x−mu)² / (2·sigma²))"""
    return amplitude * np.exp(-((np.asarray(x, dtype=float) - mu) ** 2) / (2.0 * sigma * sigma))


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float
    amplitude: float
    rss: float
    r2: float
    converged: bool
    iterations: int
    masked_lengths: Tuple[int, ...] = field(default_factory=tuple)

    def curve(self, x):
        return gaussian_curve(x, self.amplitude, self.mu, self.sigma)

    def to_fragment(self) -> dict:
        """Fit-report JSON fragment."""
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "amplitude": self.amplitude,
            "rss": self.rss,
            "r2": self.r2,
            "converged": self.converged,
            "iterations": self.iterations,
            "masked_lengths": list(self.masked_lengths),
        }


@dataclass(frozen=True)
class KsResult:
    d_stat: float
    at_length: int


@dataclass(frozen=True)
class KsConformance:
    """Outcome of a one-sample KS check of a histogram against its fitted law."""

    d_stat: float
    at_length: int
    n: int
    effective_n: float
    critical: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "d_stat": self.d_stat,
            "at_length": self.at_length,
            "n": self.n,
            "effective_n": self.effective_n,
            "critical": self.critical,
            "passed": self.passed,
        }


# --- Curve fitting --- #

def _residuals(params, xs, ys):
    amplitude, mu, sigma = params
    return gaussian_curve(xs, amplitude, mu, sigma) - ys


def _jacobian(params, xs, ys):
    amplitude, mu, sigma = params
    e = np.exp(-((xs - mu) ** 2) / (2.0 * sigma * sigma))
    dx = xs - mu
    return np.column_stack((
        e,
        amplitude * e * dx / sigma ** 2,
        amplitude * e * dx ** 2 / sigma ** 3,
    ))


def _moment_guess(xs: np.ndarray, ys: np.ndarray) -> Tuple[float, float, float]:
    weights = np.clip(ys, 0, None)
    total = weights.sum()
    mu = float((xs * weights).sum() / total)
    sigma = float(math.sqrt(max((weights * (xs - mu) ** 2).sum() / total, MIN_SIGMA ** 2)))
    return float(ys.max()), mu, sigma


def _median_guess(xs: np.ndarray, ys: np.ndarray) -> Tuple[float, float, float]:
    weights = np.clip(ys, 0, None)
    cumulative = np.cumsum(weights)
    half = cumulative[-1] / 2.0
    median = float(xs[np.searchsorted(cumulative, half)])
    deviations = np.abs(xs - median)
    order = np.argsort(deviations)
    mad_idx = np.searchsorted(np.cumsum(weights[order]), half)
    mad = float(deviations[order][min(mad_idx, len(order) - 1)])
    return float(ys.max()), median, max(MAD_SCALE * mad, 1.0)


def _polish(params: np.ndarray, xs: np.ndarray, ys: np.ndarray, steps: int = 2) -> np.ndarray:
    """A couple of plain Gauss-Newton steps, kept only while they lower the RSS."""
    best = params
    best_rss = float(np.sum(_residuals(best, xs, ys) ** 2))
    for _ in range(steps):
        step, *_ = np.linalg.lstsq(_jacobian(best, xs, ys), -_residuals(best, xs, ys), rcond=None)
        candidate = best + step
        if not np.all(np.isfinite(candidate)) or candidate[2] == 0:
            break
        rss = float(np.sum(_residuals(candidate, xs, ys) ** 2))
        if rss > best_rss:
            break
        best, best_rss = candidate, rss
    return best


def fit_curve(xs: Sequence[float], ys: Sequence[float], p0: Optional[Tuple[float, float, float]] = None) -> GaussianFit:
    """
    Least-squares fit of a three-parameter Gaussian to ``(xs, ys)``.

    Levenberg-Marquardt with the analytic Jacobian. Stops when the relative
    RSS change or the parameter step falls below 1e-9, or after 200
    evaluations (then ``converged`` is False).

    Args:
        xs: Sample positions.
        ys: Observed values (counts, but any floats work).
        p0: Initial ``(amplitude, mu, sigma)``; weighted moments when omitted.

    Raises:
        DegenerateFit: When sigma ends below 0.5, the amplitude is not
            positive, or the solver diverges.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if p0 is None:
        p0 = _moment_guess(xs, ys)
    try:
        result = least_squares(
            _residuals,
            np.asarray(p0, dtype=float),
            jac=_jacobian,
            method="lm",
            ftol=1e-9,
            xtol=1e-9,
            gtol=1e-10,
            max_nfev=MAX_EVALUATIONS,
            x_scale="jac",
            args=(xs, ys),
        )
    except (ValueError, FloatingPointError) as e:
        raise DegenerateFit(f"solver failed: {e}") from e

    params = result.x
    if result.status > 0:
        params = _polish(params, xs, ys)
    amplitude, mu, sigma = float(params[0]), float(params[1]), abs(float(params[2]))
    if not all(math.isfinite(v) for v in (amplitude, mu, sigma)):
        raise DegenerateFit("fit diverged to non-finite parameters")
    if sigma < MIN_SIGMA:
        raise DegenerateFit(f"sigma collapsed to {sigma:.4g} characters")
    if amplitude <= 0:
        raise DegenerateFit(f"non-positive amplitude {amplitude:.4g}")

    residuals = gaussian_curve(xs, amplitude, mu, sigma) - ys
    rss = float(np.sum(residuals ** 2))
    tss = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)
    return GaussianFit(
        mu=mu,
        sigma=sigma,
        amplitude=amplitude,
        rss=rss,
        r2=min(r2, 1.0),
        converged=bool(result.status > 0),
        iterations=int(result.nfev),
    )


def _best_start(xs: np.ndarray, ys: np.ndarray) -> GaussianFit:
    fits = []
    errors = []
    for guess in (_moment_guess, _median_guess):
        try:
            fits.append(fit_curve(xs, ys, guess(xs, ys)))
        except DegenerateFit as e:
            errors.append(str(e))
    if not fits:
        raise DegenerateFit("; ".join(errors))
    return min(fits, key=lambda f: (not f.converged, f.rss))


def _outliers(xs: np.ndarray, ys: np.ndarray, fit: GaussianFit) -> np.ndarray:
    """Indices whose Poisson-standardized residual stands out, worst first, capped."""
    predicted = fit.curve(xs)
    z = np.abs(ys - predicted) / np.sqrt(np.maximum(predicted, 1.0))
    threshold = MASK_FACTOR * max(float(np.median(z)), 1.0)
    candidates = [int(i) for i in np.argsort(-z) if z[i] > threshold]
    cap = len(xs) // 3
    populated = int(np.count_nonzero(ys > 0))
    chosen = []
    for i in candidates[:cap]:
        if ys[i] > 0 and populated - 1 < MIN_SUPPORT:
            continue
        chosen.append(i)
        if ys[i] > 0:
            populated -= 1
    return np.array(sorted(chosen), dtype=int)


def fit_gaussian(hist: LengthHistogram) -> GaussianFit:
    """
    Fits the Gaussian curve to a length histogram, robust to burrs.

    The curve is fitted over the support hull (zero counts included), from
    both a moment start and a median/MAD start. Lengths whose standardized
    residual exceeds four times the median one are then masked and the
    curve refitted once; masked lengths are reported in the result.

    Raises:
        InsufficientSupport: Fewer than 4 lengths with nonzero counts.
        DegenerateFit: No start produces a usable fit.
    """
    populated = sum(1 for c in hist.counts.values() if c > 0)
    if populated < MIN_SUPPORT:
        raise InsufficientSupport(f"{populated} populated lengths, need at least {MIN_SUPPORT}")
    xs, ys = hist.as_arrays()
    first = _best_start(xs, ys)

    masked = _outliers(xs, ys, first)
    if masked.size == 0:
        return first
    keep = np.ones(len(xs), dtype=bool)
    keep[masked] = False
    try:
        refit = fit_curve(xs[keep], ys[keep], _moment_guess(xs[keep], ys[keep]))
    except DegenerateFit as e:
        logger.debug("Refit without %d outliers failed (%s), keeping first fit", masked.size, e)
        return first
    masked_lengths = tuple(int(xs[i]) for i in masked)
    logger.debug("Masked lengths %s, mu %.3f -> %.3f", masked_lengths, first.mu, refit.mu)
    return GaussianFit(
        mu=refit.mu,
        sigma=refit.sigma,
        amplitude=refit.amplitude,
        rss=refit.rss,
        r2=refit.r2,
        converged=refit.converged,
        iterations=first.iterations + refit.iterations,
        masked_lengths=masked_lengths,
    )


# --- Distribution functions --- #

def normal_cdf(x, mu: float, sigma: float):
    return 0.5 * (1.0 + erf((np.asarray(x, dtype=float) - mu) / (sigma * math.sqrt(2.0))))


def theoretical_cdf(fit: GaussianFit, x, continuity: bool = True):
    """
    Normal(mu, sigma) CDF at integer length ``x``.

    With ``continuity`` the CDF is read at ``x + 0.5`` so that
    ``P(round(X) <= x)`` is returned for a rounded normal X.
    """
    shift = 0.5 if continuity else 0.0
    value = normal_cdf(np.asarray(x, dtype=float) + shift, fit.mu, fit.sigma)
    return float(value) if np.ndim(value) == 0 else value


def truncated_cdf(fit: GaussianFit, x, low: int, high: int, continuity: bool = True):
    """The fitted law conditioned on lengths in ``[low, high]``."""
    below = theoretical_cdf(fit, low - 1, continuity)
    mass = theoretical_cdf(fit, high, continuity) - below
    if mass <= 0:
        raise DegenerateFit(f"fitted law puts no mass on [{low}, {high}]")
    value = np.clip((theoretical_cdf(fit, x, continuity) - below) / mass, 0.0, 1.0)
    return float(value) if np.ndim(value) == 0 else value


# --- Kolmogorov-Smirnov --- #

def ks_statistic(
    empirical: Callable,
    theoretical: Callable,
    support: Iterable[int],
) -> KsResult:
    """
    ``max |F(x) − S(x)|`` over the integer lengths of ``support``.

    ``at_length`` is the smallest maximizing length.
    """
    xs = list(support)
    if not xs:
        raise ValueError("KS statistic needs a nonempty support")
    deviations = np.array([abs(float(theoretical(x)) - float(empirical(x))) for x in xs])
    idx = int(np.argmax(deviations))
    return KsResult(d_stat=float(min(max(deviations[idx], 0.0), 1.0)), at_length=int(xs[idx]))


def _alpha_column(alpha: float) -> int:
    for i, known in enumerate(SUPPORTED_ALPHAS):
        if math.isclose(alpha, known, rel_tol=1e-9, abs_tol=1e-12):
            return i
    raise UnsupportedAlpha(f"alpha must be one of {SUPPORTED_ALPHAS}, got {alpha}")


def ks_critical_value(n: int, alpha: float) -> float:
    """
    One-sample KS critical value d for sample size ``n``.

    Tabulated for n <= 35, ``c(alpha)/sqrt(n)`` above.

    Raises:
        UnsupportedAlpha: For alpha outside 0.10 / 0.05 / 0.01.
        ValueError: For n < 1.
    """
    column = _alpha_column(alpha)
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    if n in _KS_TABLE:
        return _KS_TABLE[n][column]
    return _KS_ASYMPTOTIC[column] / math.sqrt(n)


def ks_conformance(
    hist: LengthHistogram,
    fit: GaussianFit,
    alpha: float,
    effective_n: Optional[float] = None,
) -> KsConformance:
    """
    Checks a histogram against its fitted law restricted to the support hull.

    The critical value is taken at ``effective_n`` (defaults to ``hist.n``),
    which accounts for names replicated across accesses.
    """
    hull = hist.support_hull()

    def law(x):
        return truncated_cdf(fit, x, hull.start, hull.stop - 1)

    result = ks_statistic(empirical_cdf(hist), law, hull)
    eff = float(effective_n) if effective_n is not None else float(hist.n)
    critical = ks_critical_value(max(1, int(eff)), alpha)
    return KsConformance(
        d_stat=result.d_stat,
        at_length=result.at_length,
        n=hist.n,
        effective_n=eff,
        critical=critical,
        passed=result.d_stat < critical,
    )
