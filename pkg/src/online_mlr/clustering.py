"""Online cluster assignment and the asymptotic clustering bounds.

Index conventions follow the argmin rules used for evaluation:

* symmetric model: index ``i`` predicts with ``(-1)^i beta' phi``, so ``i = 2``
  is the ``+beta`` branch and ``i = 1`` the ``-beta`` branch;
* general model: index ``i`` predicts with ``beta_i' phi``.

Exact ties go to index 1.

The bound functions take the quantity that drives separability: ``beta*`` for
the symmetric model and ``beta1* - beta2*`` for the general one.  With the
true parameters known, the chosen squared residual has mean
``sigma^2 + 4 E[eta]`` (symmetric) or ``sigma^2 + E[eta]`` (general), and the
probability of a correct assignment is at least
``1 - E[exp(-(beta*' phi)^2 / (2 sigma^2))]`` or
``1 - E[exp(-((beta1* - beta2*)' phi)^2 / (8 sigma^2))]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import erfc

from ._io import write_json
from ._linalg import dot
from .asym_em import align_error
from .exceptions import ConfigError, ConsistencyError

MIN_MC_SAMPLES = 1000


def classify_sym(beta, phi, y):
    s = dot(np.asarray(beta, dtype=float), np.asarray(phi, dtype=float))
    plus = (y - s) ** 2
    minus = (y + s) ** 2
    return np.where(plus < minus, 2, 1)


def classify_asym(beta1, beta2, phi, y):
    phi = np.asarray(phi, dtype=float)
    r1 = (y - dot(np.asarray(beta1, dtype=float), phi)) ** 2
    r2 = (y - dot(np.asarray(beta2, dtype=float), phi)) ** 2
    return np.where(r2 < r1, 2, 1)


@dataclass(frozen=True)
class ClusterReport:
    """Running within-cluster error and correct-assignment count.

    Reports add: ``a + b`` is the report of the concatenated streams.
    """

    n: int = 0
    sum_sq: float = 0.0
    correct: int = 0
    per_step: tuple | None = field(default=None, compare=False)

    @property
    def J(self) -> float:
        return self.sum_sq / self.n if self.n else 0.0

    @property
    def correct_rate(self) -> float:
        return self.correct / self.n if self.n else 0.0

    def __add__(self, other: ClusterReport) -> ClusterReport:
        steps = None
        if self.per_step is not None or other.per_step is not None:
            steps = (self.per_step or ()) + (other.per_step or ())
        return ClusterReport(self.n + other.n, self.sum_sq + other.sum_sq,
                             self.correct + other.correct, steps)

    @classmethod
    def from_arrays(cls, residual_sq, was_correct, keep_steps=False) -> ClusterReport:
        residual_sq = np.asarray(residual_sq, dtype=float).ravel()
        was_correct = np.asarray(was_correct, dtype=bool).ravel()
        if np.any(residual_sq < 0):
            raise ValueError("squared residuals must be non-negative")
        steps = tuple(map(float, residual_sq)) if keep_steps else None
        return cls(residual_sq.size, float(residual_sq.sum()), int(was_correct.sum()), steps)


def update_report(report: ClusterReport, residual_sq: float, was_correct: bool) -> ClusterReport:
    if residual_sq < 0:
        raise ValueError("squared residual must be non-negative")
    steps = None if report.per_step is None else report.per_step + (float(residual_sq),)
    return replace(report, n=report.n + 1, sum_sq=report.sum_sq + float(residual_sq),
                   correct=report.correct + int(bool(was_correct)), per_step=steps)


def evaluate_sym(betas, phi, y, z, beta_star):
    """Per-step chosen squared residuals and correctness for the symmetric rule.

    ``betas`` is either one estimate or one estimate per sample (the
    pre-update path).  Correctness is scored after aligning each estimate
    with the nearer of ``beta*`` and ``-beta*``.
    """
    betas = np.asarray(betas, dtype=float)
    s = dot(betas, phi)
    idx = classify_sym(betas, phi, y)
    branch = np.where(idx == 2, 1, -1)
    residual_sq = (y - branch * s) ** 2
    align = np.where(np.linalg.norm(betas - beta_star, axis=-1)
                     <= np.linalg.norm(betas + beta_star, axis=-1), 1, -1)
    return residual_sq, align * branch == z


def evaluate_asym(beta1s, beta2s, phi, y, z, beta1_star, beta2_star):
    """General-model counterpart of :func:`evaluate_sym`."""
    beta1s = np.asarray(beta1s, dtype=float)
    beta2s = np.asarray(beta2s, dtype=float)
    idx = classify_asym(beta1s, beta2s, phi, y)
    pred = np.where(idx == 1, dot(beta1s, phi), dot(beta2s, phi))
    residual_sq = (y - pred) ** 2
    _, _, (j1, j2) = align_error(beta1s, beta2s, beta1_star, beta2_star)
    truth_index = np.where(idx == 1, j1, j2)
    return residual_sq, np.where(truth_index == 1, 1, -1) == z


class MCEstimate(NamedTuple):
    value: float
    se: float


@dataclass(frozen=True)
class BoundInputs:
    """What the clustering bounds depend on.

    ``beta`` is ``beta*`` when ``symmetric`` and ``beta1* - beta2*`` otherwise;
    ``phi_sampler(rng, n)`` draws ``n`` regressors from the stationary law.
    """

    beta: np.ndarray
    sigma: float
    phi_sampler: Callable[[np.random.Generator, int], np.ndarray]
    symmetric: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def for_model(cls, model) -> BoundInputs:
        sampler = model.regressor.sample_stationary
        if model.symmetric:
            return cls(model.beta1_star, model.sigma, sampler, True)
        return cls(model.beta1_star - model.beta2_star, model.sigma, sampler, False)

    def projections(self, rng, samples):
        if samples < MIN_MC_SAMPLES:
            raise ConfigError(f"need at least {MIN_MC_SAMPLES} Monte Carlo samples")
        return self.phi_sampler(rng, samples) @ np.asarray(self.beta, dtype=float)


def _mc(values):
    return MCEstimate(float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size)))


def misclassification_bound_mc(inputs: BoundInputs, samples: int, rng) -> MCEstimate:
    """Monte Carlo value of the lower bound on the correct-assignment probability."""
    s = inputs.projections(rng, samples)
    scale = 2.0 if inputs.symmetric else 8.0
    return _mc(1.0 - np.exp(-(s**2) / (scale * inputs.sigma**2)))


def misclassification_bound_gaussian(quadform: float, sigma: float, symmetric: bool = True) -> float:
    """Closed form of the bound for Gaussian regressors ``N(0, Sigma)``.

    ``quadform`` is ``beta*' Sigma beta*`` (symmetric) or
    ``(beta1* - beta2*)' Sigma (beta1* - beta2*)`` (general).
    """
    if quadform < 0 or not sigma > 0:
        raise ValueError("need quadform >= 0 and sigma > 0")
    scale = sigma**2 if symmetric else 4.0 * sigma**2
    return 1.0 - 1.0 / np.sqrt(1.0 + quadform / scale)


def normal_cdf_neg(t):
    """``Phi(-t)`` through erfc, accurate far into the tail."""
    return 0.5 * erfc(np.asarray(t) / np.sqrt(2.0))


def normal_pdf(t):
    return np.exp(-0.5 * np.asarray(t) ** 2) / np.sqrt(2.0 * np.pi)


def eta(s, sigma, symmetric: bool = True):
    """Per-regressor excess term of the asymptotic within-cluster error (always <= 0).

    ``s`` is ``beta*' phi`` (symmetric) or ``(beta1* - beta2*)' phi`` (general).
    The general case equals the symmetric one with the noise scale doubled.
    """
    scale = sigma if symmetric else 2.0 * sigma
    a = np.abs(s)
    t = a / scale
    return a**2 * normal_cdf_neg(t) - scale * a * normal_pdf(t)


def j_limit(inputs: BoundInputs, samples: int, rng) -> MCEstimate:
    """Monte Carlo value of ``lim J_n`` with the parameters known."""
    s = inputs.projections(rng, samples)
    e = eta(s, inputs.sigma, inputs.symmetric)
    worst = float(e.max())
    if worst > 1e-12:
        raise ConsistencyError(f"eta must be non-positive, got {worst:.3e}")
    factor = 4.0 if inputs.symmetric else 1.0
    est = _mc(factor * e)
    return MCEstimate(inputs.sigma**2 + est.value, est.se)


def write_report_json(path, report: ClusterReport, bound: MCEstimate, jlim: MCEstimate, **extra):
    payload = {
        "n": report.n,
        "J": report.J,
        "correct_rate": report.correct_rate,
        "bound_mc": bound.value,
        "bound_se": bound.se,
        "j_limit": jlim.value,
        "j_limit_se": jlim.se,
    }
    payload.update(extra)
    write_json(path, payload)
    return payload
