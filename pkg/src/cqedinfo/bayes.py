"""Gaussian inference of the atom-cavity coupling from the homodyne record.

The photocharge ``q`` collected over a short interval ``dt`` is treated as a
Gaussian random variable whose mean depends on ``g`` through the steady-state
field amplitude.  Bayes' rule applied to a Gaussian prior gives a Gaussian
posterior in the small-``q``, small-``dt`` regime: terms of order ``q eps^2``
and ``eps^3`` are dropped (``kappa dt ~ eps^{3/2}``), so the posterior
variance is

    v1^2 = v0^2 kappa E / (kappa E + q v0^2 cos(phi)).

The posterior mean is not fixed by that expansion; :func:`posterior_update`
uses the standard linear-Gaussian rule with the likelihood mean linearized
about the prior mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DEFAULT_DT, SystemParams, make_rng, simulate_trajectory
from .errors import DomainError, InvalidUpdate
from .steady_state import rho_ss_analytic, spec_for

INVALID_FRACTION_LIMIT = 1e-3


@dataclass(frozen=True)
class GaussianBelief:
    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be positive and finite, got {self.variance!r}")

    @property
    def entropy(self) -> float:
        return gaussian_entropy(self.variance)


def gaussian_entropy(variance: float) -> float:
    """Differential entropy ``1/2 ln(2 pi e v^2)`` in nats."""
    return 0.5 * math.log(2.0 * math.pi * math.e * variance)


def _charge_mean(g, p: SystemParams, delta_t: float):
    # polynomial in g so the linearized mean update is defined for any prior mean
    return 4.0 * p.E * p.eta * (1.0 - (g / (2.0 * p.E)) ** 2) * math.cos(p.phi) * delta_t


def _charge_mean_slope(g, p: SystemParams, delta_t: float):
    return -2.0 * p.eta * g * math.cos(p.phi) * delta_t / p.E


def likelihood_mean_variance(g: float, p: SystemParams, delta_t: float) -> tuple[float, float]:
    """Mean and variance of ``q`` given ``g``: ``4 kappa eta Re(alpha(g)) cos(phi) dt`` and ``2 kappa eta dt``."""
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    if not g / (2.0 * p.E) < 1.0:
        raise DomainError(f"requires g < 2E (g={g}, E={p.E})")
    return _charge_mean(g, p, delta_t), 2.0 * p.kappa * p.eta * delta_t


def posterior_update(prior: GaussianBelief, q: float, p: SystemParams, delta_t: float) -> GaussianBelief:
    """Gaussian posterior after observing charge ``q``.

    Valid for small ``q`` only.  Raises :class:`InvalidUpdate` when
    ``kappa E + q v0^2 cos(phi) <= 0``, where the variance formula leaves the
    Gaussian family.
    """
    v0 = prior.variance
    denom = p.kappa * p.E + q * v0 * math.cos(p.phi)
    if not denom > 0:
        raise InvalidUpdate(f"kappa E + q v0^2 cos(phi) = {denom:.6g} <= 0 (q={q:.6g})")
    v1 = v0 * p.kappa * p.E / denom
    lik_var = 2.0 * p.kappa * p.eta * delta_t
    slope = _charge_mean_slope(prior.mean, p, delta_t)
    mean = prior.mean + v1 * slope * (q - _charge_mean(prior.mean, p, delta_t)) / lik_var
    return GaussianBelief(mean, v1)


def delta_S(prior: GaussianBelief, posterior: GaussianBelief) -> tuple[float, float]:
    """Entropy change ``(exact, linearized)``.

    Exact is ``-1/2 ln(v0^2/v1^2)``; the linearization ``-(v0^2/v1^2 - 1)/2``
    equals ``-q cos(phi) v0^2 / (2 kappa E)`` for the update above.
    """
    ratio = prior.variance / posterior.variance
    return -0.5 * math.log(ratio), -0.5 * (ratio - 1.0)


def rate_Rg(p: SystemParams, v0_sq: float) -> float:
    """``R_g = (2 v0^2 eta / kappa) (1 - (g/2E)^2) cos^2(phi)``."""
    if v0_sq <= 0:
        raise ValueError("v0_sq must be positive")
    x = p.g / (2.0 * p.E)
    if not x < 1.0:
        raise DomainError(f"requires g < 2E (g={p.g}, E={p.E})")
    return 2.0 * v0_sq * p.eta / p.kappa * (1.0 - x) * (1.0 + x) * math.cos(p.phi) ** 2


@dataclass
class InferenceTrace:
    """Per-step record: charge, posterior belief and entropy change."""

    charges: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    delta_S_exact: np.ndarray
    delta_S_linear: np.ndarray
    prior: GaussianBelief
    invalid_steps: np.ndarray

    def __post_init__(self):
        n = len(self.charges)
        for name in ("means", "variances", "delta_S_exact", "delta_S_linear"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self):
        return len(self.charges)

    @property
    def beliefs(self) -> list[GaussianBelief]:
        return [GaussianBelief(float(m), float(v)) for m, v in zip(self.means, self.variances)]

    @property
    def delta_S(self) -> np.ndarray:
        return self.delta_S_exact

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "q", "belief_mean", "belief_variance", "delta_S_exact", "delta_S_linear"])
            for k in range(len(self)):
                w.writerow(
                    [
                        k,
                        repr(float(self.charges[k])),
                        repr(float(self.means[k])),
                        repr(float(self.variances[k])),
                        repr(float(self.delta_S_exact[k])),
                        repr(float(self.delta_S_linear[k])),
                    ]
                )
        return path


def sample_charges(
    p: SystemParams,
    g_true: float,
    n_steps: int,
    delta_t: float = DEFAULT_DT,
    seed=0,
    source: str = "likelihood",
    substeps: int = 1,
) -> np.ndarray:
    """Photocharges over ``n_steps`` windows of length ``delta_t``.

    ``source="likelihood"`` draws from the Gaussian likelihood at ``g_true``.
    ``source="sme"`` integrates one homodyne trajectory started at the
    strong-driving steady state for ``g_true`` with ``substeps`` SME steps
    per window, and sums ``dq`` over each window.  The trajectory uses the
    smallest truncation that holds that state.
    """
    pt = p.with_(g=g_true)
    if source == "likelihood":
        mean, var = likelihood_mean_variance(g_true, pt, delta_t)
        return make_rng(seed).normal(mean, math.sqrt(var), size=n_steps)
    if source == "sme":
        pt = spec_for(pt, "minimal")
        rec = simulate_trajectory(rho_ss_analytic(pt), pt, n_steps * delta_t, delta_t / substeps, seed=seed)
        return rec.charge[: n_steps * substeps].reshape(n_steps, substeps).sum(axis=1)
    raise ValueError(f"unknown charge source {source!r}")


def run_inference(
    p: SystemParams,
    charges: np.ndarray,
    prior: GaussianBelief,
    delta_t: float = DEFAULT_DT,
    reset: bool = True,
) -> InferenceTrace:
    """Feed ``charges`` through :func:`posterior_update`.

    With ``reset=True`` every step starts from the prior variance (the mean
    still carries over), so each ``delta_S`` is a single-step sample at fixed
    prior width.  With ``reset=False`` each posterior becomes the next prior.
    Invalid updates leave the belief unchanged and record ``nan`` entropy
    changes; their indices are kept in ``invalid_steps``.
    """
    n = len(charges)
    means = np.empty(n)
    variances = np.empty(n)
    exact = np.empty(n)
    linear = np.empty(n)
    invalid = []
    belief = prior
    for k, q in enumerate(charges):
        start = GaussianBelief(belief.mean, prior.variance) if reset else belief
        try:
            post = posterior_update(start, float(q), p, delta_t)
        except InvalidUpdate:
            invalid.append(k)
            exact[k] = linear[k] = np.nan
            means[k], variances[k] = start.mean, start.variance
            belief = start
            continue
        exact[k], linear[k] = delta_S(start, post)
        means[k], variances[k] = post.mean, post.variance
        belief = post
    return InferenceTrace(np.asarray(charges, dtype=float), means, variances, exact, linear, prior, np.array(invalid, dtype=int))


@dataclass(frozen=True)
class RgEstimate:
    estimate: float
    std_error: float
    trace: InferenceTrace
    n_invalid: int


def rate_Rg_monte_carlo(
    p: SystemParams,
    g_true: float,
    v0_sq: float,
    n_steps: int = 10_000,
    delta_t: float = DEFAULT_DT,
    seed=0,
    source: str = "likelihood",
    prior_mean: float | None = None,
    substeps: int = 1,
) -> RgEstimate:
    """Average of ``-delta_S / delta_t`` over prior-reset updates.

    The prior mean defaults to ``g_true``.  Raises :class:`InvalidUpdate` if
    more than 0.1% of the updates are invalid.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    prior = GaussianBelief(g_true if prior_mean is None else prior_mean, v0_sq)
    charges = sample_charges(p, g_true, n_steps, delta_t, seed, source, substeps)
    trace = run_inference(p, charges, prior, delta_t, reset=True)
    n_invalid = len(trace.invalid_steps)
    if n_invalid > INVALID_FRACTION_LIMIT * n_steps:
        raise InvalidUpdate(f"{n_invalid} of {n_steps} updates left the Gaussian family")
    samples = -trace.delta_S_exact[np.isfinite(trace.delta_S_exact)] / delta_t
    return RgEstimate(
        estimate=float(np.mean(samples)),
        std_error=float(np.std(samples, ddof=1) / math.sqrt(len(samples))),
        trace=trace,
        n_invalid=n_invalid,
    )
