"""Mean-field ODE companion of the symmetric online EM.

The recursion tracks the ODE pair

    d beta / dt = R^{-1} f(beta),      d R / dt = G - R,

with ``f(beta) = E[phi (y tanh(beta' phi y / sigma^2) - beta' phi)]`` and
``G = E[phi phi']`` under the stationary regressor law.  ``R`` has the closed
form ``R(t) = G + exp(-t) (R(0) - G)``, which the integrator checks at every
step.  ``V = 0.5 (beta - beta_ref)' R (beta - beta_ref)`` serves as the
Lyapunov function.

``f`` is estimated by Monte Carlo with one fixed sample (common random
numbers), so the integrated field is a smooth function of ``beta``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate as _integrate
from scipy.optimize import fsolve

from ._io import write_csv
from .exceptions import ConfigError, IntegrationError, QuadratureError

DEFAULT_SAMPLES = 200_000
DEFAULT_STEP = 1e-2


class MeanField:
    """Common-random-number estimate of ``f`` for the symmetric model.

    Parameters
    ----------
    beta_star : array, shape (d,)
        True parameter of ``y = z beta*' phi + w``.
    sigma : float
        Noise standard deviation.
    phi : array, shape (N, d)
        Regressor sample from the stationary law.
    rng : numpy.random.Generator
        Source for the labels and noise paired with ``phi``.
    p : float
        Probability of ``z = +1``.
    """

    def __init__(self, beta_star, sigma, phi, rng, p=0.5):
        self.beta_star = np.asarray(beta_star, dtype=float)
        self.sigma2 = float(sigma) ** 2
        self.phi = np.asarray(phi, dtype=float)
        n = self.phi.shape[0]
        z = np.where(rng.random(n) < p, 1.0, -1.0)
        self.y = z * (self.phi @ self.beta_star) + float(sigma) * rng.standard_normal(n)
        self._q = self.phi * self.y[:, None]
        self.gram = self.phi.T @ self.phi / n

    @classmethod
    def for_model(cls, model, samples=DEFAULT_SAMPLES, rng=None) -> MeanField:
        if not model.symmetric:
            raise ConfigError("the mean field is defined for the symmetric model")
        rng = np.random.default_rng(0) if rng is None else rng
        phi = model.regressor.sample_stationary(rng, samples)
        return cls(model.beta1_star, model.sigma, phi, rng, model.p)

    @property
    def samples(self) -> int:
        return self.phi.shape[0]

    def __call__(self, beta):
        beta = np.asarray(beta, dtype=float)
        flat = beta.reshape(-1, beta.shape[-1])
        t = np.tanh((self._q @ flat.T) / self.sigma2)
        out = (self._q.T @ t).T / self.samples - flat @ self.gram
        return out.reshape(beta.shape)

    def with_se(self, beta):
        """``(f(beta), standard error per coordinate)`` for a single ``beta``."""
        beta = np.asarray(beta, dtype=float)
        s = self.phi @ beta
        g = self.phi * (self.y * np.tanh(s * self.y / self.sigma2) - s)[:, None]
        return g.mean(axis=0), g.std(axis=0, ddof=1) / np.sqrt(self.samples)


def mean_field_f(beta, model, samples=DEFAULT_SAMPLES, rng=None):
    """Monte Carlo ``(f(beta), se)`` for a symmetric :class:`ModelSpec`."""
    return MeanField.for_model(model, samples, rng).with_se(beta)


def field_equilibrium(field, guess):
    """Zero of a (sampled) mean field near ``guess``."""
    root, info, ok, msg = fsolve(field, np.asarray(guess, dtype=float), xtol=1e-14,
                                 full_output=True)
    if ok != 1:
        raise RuntimeError(f"equilibrium search failed: {msg}")
    return root


@dataclass(frozen=True)
class OdeState:
    beta: np.ndarray
    R: np.ndarray
    t: float = 0.0


def r_closed_form(t, R0, G):
    t = np.asarray(t, dtype=float)
    return G + np.exp(-t)[..., None, None] * (R0 - G)


@dataclass
class Trajectory:
    t: np.ndarray        # (T,)
    beta: np.ndarray     # (T, ..., d)
    R: np.ndarray        # (T, d, d) or (T, ..., d, d)
    r_err: np.ndarray    # (T,) worst Frobenius deviation from the closed form

    @property
    def final(self) -> OdeState:
        return OdeState(self.beta[-1], self.R[-1], float(self.t[-1]))


def integrate(state0: OdeState, field, G, horizon: float, step: float = DEFAULT_STEP) -> Trajectory:
    """Fixed-step classical RK4 for the (beta, R) system.

    ``state0.beta`` may hold several initial points (shape ``(K, d)``) that
    share one ``R``.  Raises :class:`IntegrationError` if ``R`` stops being
    positive definite.
    """
    G = np.asarray(G, dtype=float)
    beta = np.array(state0.beta, dtype=float)
    R = np.array(state0.R, dtype=float)
    R0 = R.copy()
    n_steps = int(round(horizon / step))
    if n_steps < 1:
        raise ValueError("horizon must cover at least one step")

    def rhs(b, r):
        return np.linalg.solve(r, field(b)[..., None])[..., 0], G - r

    ts = state0.t + step * np.arange(n_steps + 1)
    betas = np.empty((n_steps + 1,) + beta.shape)
    Rs = np.empty((n_steps + 1,) + R.shape)
    betas[0], Rs[0] = beta, R
    h = step
    for i in range(n_steps):
        k1b, k1r = rhs(beta, R)
        k2b, k2r = rhs(beta + 0.5 * h * k1b, R + 0.5 * h * k1r)
        k3b, k3r = rhs(beta + 0.5 * h * k2b, R + 0.5 * h * k2r)
        k4b, k4r = rhs(beta + h * k3b, R + h * k3r)
        beta = beta + (h / 6.0) * (k1b + 2 * k2b + 2 * k3b + k4b)
        R = R + (h / 6.0) * (k1r + 2 * k2r + 2 * k3r + k4r)
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise IntegrationError(f"R lost positive definiteness at t={ts[i + 1]:.4g}") from None
        betas[i + 1], Rs[i + 1] = beta, R
    dev = Rs - r_closed_form(ts - state0.t, R0, G)
    r_err = np.sqrt((dev**2).sum(axis=(-1, -2)))
    if r_err.ndim > 1:
        r_err = r_err.reshape(r_err.shape[0], -1).max(axis=1)
    return Trajectory(ts, betas, Rs, r_err)


def lyapunov(beta, R, beta_ref):
    diff = np.asarray(beta, dtype=float) - np.asarray(beta_ref, dtype=float)
    return 0.5 * np.einsum("...i,...ij,...j->...", diff, R, diff)


def _quad(func, lo=-np.inf, hi=np.inf, tol=1e-9):
    with warnings.catch_warnings():
        warnings.simplefilter("error", _integrate.IntegrationWarning)
        try:
            value, abserr = _integrate.quad(func, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400)
        except _integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from None
    if abserr > tol * max(1.0, abs(value)):
        raise QuadratureError(f"quadrature error estimate {abserr:.2e} too large")
    return value


def lemma3_oracle(a: float, sigma: float, p: float = 0.5) -> float:
    """``E[y tanh(a y / sigma^2)]`` for ``y ~ p N(a, sigma^2) + (1 - p) N(-a, sigma^2)``.

    Evaluated by adaptive quadrature; the exact value is ``a`` for every ``p``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    s2 = sigma**2

    def component(mean):
        def integrand(t):
            y = mean + sigma * t
            return y * np.tanh(a * y / s2) * np.exp(-0.5 * t * t)
        return _quad(integrand) / np.sqrt(2.0 * np.pi)

    return p * component(a) + (1.0 - p) * component(-a)


def lemma5_F(c: float, x: float, sigma: float) -> float:
    """``F(c, x) = int f(c, x, w) exp(-w^2 / (2 sigma^2)) dw`` with
    ``f = (w + x) tanh(c (w + x) / sigma^2) + (w - x) tanh(c (w - x) / sigma^2)``."""
    s2 = sigma**2

    def integrand(t):
        w = sigma * t
        return ((w + x) * np.tanh(c * (w + x) / s2)
                + (w - x) * np.tanh(c * (w - x) / s2)) * np.exp(-0.5 * t * t)

    return sigma * _quad(integrand)


@dataclass(frozen=True)
class Lemma5Result:
    x: np.ndarray
    F: np.ndarray
    increasing: bool


def lemma5_oracle(c: float, x_grid, sigma: float = 1.0) -> Lemma5Result:
    """Evaluate ``F(c, .)`` on ``x_grid`` and report whether it strictly increases."""
    x = np.asarray(x_grid, dtype=float)
    if not c > 0:
        raise ValueError("c must be positive")
    if np.any(x <= 0) or np.any(np.diff(x) <= 0):
        raise ValueError("x_grid must be strictly increasing positives")
    F = np.array([lemma5_F(c, xi, sigma) for xi in x])
    return Lemma5Result(x, F, bool(np.all(np.diff(F) > 0)))


def write_trajectory_csv(path, traj: Trajectory, beta_ref, every: int = 1):
    """``t,beta_1..beta_d,V,R_frobenius_err`` for a single (unbatched) trajectory."""
    if traj.beta.ndim != 2:
        raise ValueError("write one trajectory at a time")
    V = lyapunov(traj.beta, traj.R, beta_ref)
    d = traj.beta.shape[1]
    header = ["t"] + [f"beta_{j + 1}" for j in range(d)] + ["V", "R_frobenius_err"]
    idx = range(0, traj.t.size, every)
    write_csv(path, header, ([traj.t[i], *traj.beta[i], V[i], traj.r_err[i]] for i in idx))
