"""Gaussian mean-shift observation model with variance proportional to the mean.

Observations are N(mu, a*mu) before the change and N(theta, a*theta) after it,
with the variance-to-mean ratio ``a`` known and shared by both regimes.  The
one-observation likelihood ratio has a closed form in x**2, so its distribution
under either regime, the transition kernels of the detection statistics, and
the Kullback-Leibler numbers are all available analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ._rng import as_generator

HYPOTHESES = ("pre", "post")


@dataclass(frozen=True)
class GaussianChangeModel:
    """Pre-change N(mu, a*mu), post-change N(theta, a*theta)."""

    mu: float
    theta: float
    a: float

    def __post_init__(self) -> None:
        for name in ("mu", "theta", "a"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if self.mu == self.theta:
            raise ValueError("mu and theta must differ (no change otherwise)")

    @property
    def pre_variance(self) -> float:
        return self.a * self.mu

    @property
    def post_variance(self) -> float:
        return self.a * self.theta

    @property
    def quad_coef(self) -> float:
        """Coefficient of x**2 in the log likelihood ratio."""
        return (self.theta - self.mu) / (2.0 * self.a * self.theta * self.mu)

    @property
    def log_support_bound(self) -> float:
        """log of the likelihood-ratio value at x = 0 (the support endpoint)."""
        return 0.5 * math.log(self.mu / self.theta) - (self.theta - self.mu) / (2.0 * self.a)

    @property
    def upward_shift(self) -> bool:
        return self.theta > self.mu

    def mean_sd(self, hypothesis: str) -> tuple[float, float]:
        if hypothesis == "pre":
            return self.mu, math.sqrt(self.pre_variance)
        if hypothesis == "post":
            return self.theta, math.sqrt(self.post_variance)
        raise ValueError(f"hypothesis must be one of {HYPOTHESES}, got {hypothesis!r}")


@dataclass(frozen=True)
class LrSupportBound:
    """Endpoint of the one-observation likelihood-ratio support.

    For an upward shift every LR value is >= t_min; for a downward shift every
    LR value is <= t_min.
    """

    t_min: float
    is_lower: bool


@dataclass(frozen=True)
class KlNumbers:
    """Kullback-Leibler numbers per observation (nats).

    ``i_f`` is the divergence of the pre-change density from the post-change
    one (drift rate of the log-LR walk under no change, with a minus sign);
    ``i_g`` is the reverse divergence (drift rate after the change).
    """

    i_f: float
    i_g: float


def lr_support_bound(model: GaussianChangeModel) -> LrSupportBound:
    return LrSupportBound(
        t_min=math.exp(model.log_support_bound), is_lower=model.upward_shift
    )


def log_likelihood_ratio(model: GaussianChangeModel, x):
    """log(g(x)/f(x)) for observation(s) x; vectorized."""
    x = np.asarray(x, dtype=float)
    out = model.log_support_bound + model.quad_coef * np.square(x)
    return out if out.ndim else float(out)


def likelihood_ratio(model: GaussianChangeModel, x):
    """g(x)/f(x) for observation(s) x; vectorized."""
    out = np.exp(log_likelihood_ratio(model, x))
    return out if isinstance(out, np.ndarray) else float(out)


def _squared_crossing(model: GaussianChangeModel, t: np.ndarray) -> np.ndarray:
    """x**2 solving LR(x) = t.  Negative exactly when t lies outside the support."""
    with np.errstate(divide="ignore"):
        log_t = np.log(t)
    return (log_t - model.log_support_bound) / model.quad_coef


def _lr_cdf_array(model: GaussianChangeModel, t: np.ndarray, hypothesis: str) -> np.ndarray:
    """CDF of the one-observation LR; accepts t >= 0 (t = 0 maps to 0)."""
    m, sd = model.mean_sd(hypothesis)
    t = np.asarray(t, dtype=float)
    zero = t == 0.0
    xsq = _squared_crossing(model, np.where(zero, 1.0, t))
    inside = xsq >= 0.0
    h = np.sqrt(np.clip(xsq, 0.0, None))
    # P(|X| <= h) under the requested regime
    mass = ndtr((h - m) / sd) - ndtr((-h - m) / sd)
    if model.upward_shift:
        out = np.where(inside, mass, 0.0)
        out = np.where(zero, 0.0, out)
    else:
        out = np.where(inside, 1.0 - mass, 1.0)
        out = np.where(zero, 0.0, out)
    return out


def lr_cdf(model: GaussianChangeModel, t, hypothesis: str):
    """P(LR <= t) under the pre- or post-change regime; vectorized.

    Raises ValueError for any t <= 0.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0.0) or np.any(~np.isfinite(t_arr) & ~np.isposinf(t_arr)):
        raise ValueError("lr_cdf requires t > 0")
    out = _lr_cdf_array(model, t_arr, hypothesis)
    return out if out.ndim else float(out)


def lr_density(model: GaussianChangeModel, t, hypothesis: str):
    """Density of the one-observation LR; 0 outside the open support.

    The density diverges like an inverse square root as t approaches the
    support endpoint from inside; the endpoint itself maps to 0 so that
    callers integrating over panels never see the singular value.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("lr_density requires t >= 0")
    m, sd = model.mean_sd(hypothesis)
    safe_t = np.where(t_arr > 0.0, t_arr, 1.0)
    xsq = _squared_crossing(model, safe_t)
    inside = (xsq > 0.0) & (t_arr > 0.0)
    h = np.sqrt(np.where(inside, xsq, 1.0))
    z_hi = (h - m) / sd
    z_lo = (-h - m) / sd
    norm = 1.0 / (sd * math.sqrt(2.0 * math.pi))
    pdf_sum = norm * (np.exp(-0.5 * z_hi * z_hi) + np.exp(-0.5 * z_lo * z_lo))
    slope = np.abs(1.0 / (2.0 * h * model.quad_coef * safe_t))
    out = np.where(inside, pdf_sum * slope, 0.0)
    return out if out.ndim else float(out)


def lr_partial_moment(model: GaussianChangeModel, t, hypothesis: str):
    """E[LR ; LR <= t] (upward shift) under the requested regime; vectorized.

    Under the pre-change regime this is the post-change CDF by change of
    measure.  Under the post-change regime one extra LR factor is absorbed
    into the Gaussian by completing the square, which requires theta < 2*mu
    for an upward shift (otherwise the moment diverges).
    For a downward shift the conditioning region is {LR <= t} = {|X| >= h(t)}.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("lr_partial_moment requires t >= 0")
    if hypothesis == "pre":
        out = _lr_cdf_array(model, t, "post")
        return out if out.ndim else float(out)
    if hypothesis != "post":
        raise ValueError(f"hypothesis must be one of {HYPOTHESES}, got {hypothesis!r}")
    m, _ = model.mean_sd("post")
    v = model.post_variance
    beta = 1.0 - 2.0 * model.quad_coef * v
    if beta <= 0.0:
        raise ValueError("partial moment diverges: post-change variance too large")
    log_scale = (
        model.log_support_bound
        - 0.5 * math.log(beta)
        + m * m * (1.0 - beta) / (2.0 * v * beta)
    )
    mm = m / beta
    sd = math.sqrt(v / beta)
    zero = t == 0.0
    xsq = _squared_crossing(model, np.where(zero, 1.0, t))
    inside = xsq >= 0.0
    h = np.sqrt(np.clip(xsq, 0.0, None))
    mass = ndtr((h - mm) / sd) - ndtr((-h - mm) / sd)
    scale = math.exp(log_scale)
    if model.upward_shift:
        out = np.where(inside & ~zero, scale * mass, 0.0)
    else:
        out = np.where(inside, scale * (1.0 - mass), scale)
        out = np.where(zero, 0.0, out)
    return out if out.ndim else float(out)


def transition_kernel(model: GaussianChangeModel, x, y, xi, hypothesis: str):
    """Density of the next statistic value y given current value x.

    ``xi`` is the statistic map (max(1, .) for CUSUM, 1 + . for SR-type); the
    kernel is the LR density evaluated at y/xi(x), scaled by 1/xi(x).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scale = np.asarray(xi(x), dtype=float)
    if np.any(scale <= 0.0):
        raise ValueError("xi(x) must be positive")
    if np.any(y < 0.0):
        raise ValueError("y must be nonnegative")
    out = lr_density(model, y / scale, hypothesis) / scale
    return out if isinstance(out, np.ndarray) and out.ndim else float(out)


def kl_numbers(model: GaussianChangeModel) -> KlNumbers:
    mu, theta, a = model.mu, model.theta, model.a
    ratio_f = mu / theta
    ratio_g = theta / mu
    i_f = (mu - theta) ** 2 / (2.0 * a * theta) + 0.5 * ((ratio_f - 1.0) - math.log(ratio_f))
    i_g = (theta - mu) ** 2 / (2.0 * a * mu) + 0.5 * ((ratio_g - 1.0) - math.log(ratio_g))
    return KlNumbers(i_f=i_f, i_g=i_g)


def sample_log_lr_walk(model: GaussianChangeModel, hypothesis: str, n_steps: int,
                       rng, n_paths: int | None = None) -> np.ndarray:
    """Partial sums S_1..S_n of the log-LR random walk under one regime.

    Returns shape (n_steps,) when ``n_paths`` is None, else (n_paths, n_steps).
    Deterministic given the seed.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    gen = as_generator(rng)
    m, sd = model.mean_sd(hypothesis)
    paths = 1 if n_paths is None else int(n_paths)
    x = gen.normal(m, sd, size=(paths, n_steps))
    steps = model.log_support_bound + model.quad_coef * np.square(x)
    sums = np.cumsum(steps, axis=1)
    return sums[0] if n_paths is None else sums
