"""Synthetic mixed-linear-regression streams.

A stream produces records ``(phi_k, y_{k+1}, z_k)`` with

    y_{k+1} = beta_{z_k}' phi_k + w_{k+1},   z_k in {+1, -1},  w ~ N(0, sigma^2)

where ``beta_{+1} = beta1_star`` and ``beta_{-1} = beta2_star``.  The hidden
label only travels in the evaluation channel: estimators are fed
``Observation.visible()`` (or the ``phi``/``y`` arrays of a block), never ``z``.

Randomness comes from one root seed.  Each stream derives three independent
generators (labels, regressor innovations, observation noise) from the root
seed and a replication key, so changing how many draws one component makes
never perturbs the others, and replication ``r`` is the same no matter which
other replications run beside it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from ._linalg import dot, matvec
from .exceptions import ConfigError

LABELS, REGRESSOR, NOISE = 0, 1, 2


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key)``; distinct keys never overlap."""
    if seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _as_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12):
        raise ConfigError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} must be positive definite") from None
    return 0.5 * (M + M.T)


@dataclass
class RegressorProcess:
    """Law of the regressor sequence ``phi_k``.

    Use the constructors :meth:`iid_gaussian`, :meth:`ar1` and
    :meth:`sphere_uniform`; they validate the parameters.  For ``ar1`` the
    process is ``phi_{k+1} = A phi_k + e_{k+1}`` with ``e ~ N(0, Q)``, and
    ``state`` holds the current ``phi``.
    """

    kind: str
    d: int
    cov: np.ndarray | None = None
    A: np.ndarray | None = None
    innovation_cov: np.ndarray | None = None
    radius: float | None = None
    state: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "iid_gaussian":
            self.cov = _as_spd(self.cov, "covariance")
            self.d = self.cov.shape[0]
            self._chol = np.linalg.cholesky(self.cov)
        elif self.kind == "ar1":
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
            self.innovation_cov = _as_spd(self.innovation_cov, "innovation covariance")
            self.d = self.innovation_cov.shape[0]
            if self.A.shape != (self.d, self.d):
                raise ConfigError(f"A must be {self.d}x{self.d}, got {self.A.shape}")
            rho = np.max(np.abs(np.linalg.eigvals(self.A)))
            if not rho < 1.0:
                raise ConfigError(f"AR(1) coefficient has spectral radius {rho:.4g} >= 1")
            self._chol = np.linalg.cholesky(self.innovation_cov)
        elif self.kind == "sphere_uniform":
            if self.radius is None or not self.radius > 0:
                raise ConfigError("sphere radius must be positive")
            if self.d < 1:
                raise ConfigError("dimension must be positive")
            self._chol = None
        else:
            raise ConfigError(f"unknown regressor kind {self.kind!r}")

    @classmethod
    def iid_gaussian(cls, cov) -> RegressorProcess:
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls("iid_gaussian", cov.shape[0], cov=cov)

    @classmethod
    def ar1(cls, A, innovation_cov) -> RegressorProcess:
        Q = np.atleast_2d(np.asarray(innovation_cov, dtype=float))
        return cls("ar1", Q.shape[0], A=A, innovation_cov=Q)

    @classmethod
    def sphere_uniform(cls, d: int, radius: float = 1.0) -> RegressorProcess:
        return cls("sphere_uniform", d, radius=float(radius))

    @property
    def gaussian(self) -> bool:
        return self.kind in ("iid_gaussian", "ar1")

    def stationary_covariance(self) -> np.ndarray:
        """``lim E[phi phi']`` of the process."""
        if self.kind == "iid_gaussian":
            return self.cov.copy()
        if self.kind == "ar1":
            S = solve_discrete_lyapunov(self.A, self.innovation_cov)
            return 0.5 * (S + S.T)
        return (self.radius**2 / self.d) * np.eye(self.d)

    def sample_stationary(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` i.i.d. draws from the stationary law, shape ``(n, d)``."""
        eps = rng.standard_normal((n, self.d))
        if self.kind == "sphere_uniform":
            return self.radius * eps / np.linalg.norm(eps, axis=-1, keepdims=True)
        L = np.linalg.cholesky(self.stationary_covariance())
        return matvec(L, eps)

    def reset(self, rng: np.random.Generator) -> None:
        """Start an AR(1) process in its exact stationary distribution."""
        if self.kind == "ar1":
            self.state = self.sample_stationary(rng, 1)[0]

    def copy(self) -> RegressorProcess:
        new = RegressorProcess(
            self.kind, self.d, cov=self.cov, A=self.A,
            innovation_cov=self.innovation_cov, radius=self.radius,
        )
        new.state = None if self.state is None else self.state.copy()
        return new

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "iid_gaussian":
            out["cov"] = self.cov.tolist()
        elif self.kind == "ar1":
            out["A"] = self.A.tolist()
            out["innovation_cov"] = self.innovation_cov.tolist()
        else:
            out["d"] = self.d
            out["radius"] = self.radius
        return out

    @classmethod
    def from_dict(cls, cfg: dict, d: int | None = None) -> RegressorProcess:
        kind = cfg.get("kind")
        if kind == "iid_gaussian":
            return cls.iid_gaussian(_maybe_scalar_matrix(cfg.get("cov", 1.0), d))
        if kind == "ar1":
            return cls.ar1(
                _maybe_scalar_matrix(cfg["A"], d),
                _maybe_scalar_matrix(cfg.get("innovation_cov", 1.0), d),
            )
        if kind == "sphere_uniform":
            return cls.sphere_uniform(int(cfg.get("d", d or 0)), cfg.get("radius", 1.0))
        raise ConfigError(f"unknown regressor kind {kind!r}")


def _maybe_scalar_matrix(value, d):
    # JSON configs may write "A": 0.5 for 0.5 * I
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if d is None:
            raise ConfigError("a scalar matrix needs the model dimension")
        return float(arr) * np.eye(d)
    return arr


@dataclass
class ModelSpec:
    """Ground-truth two-component mixed linear regression."""

    beta1_star: np.ndarray
    beta2_star: np.ndarray
    sigma: float
    p: float
    regressor: RegressorProcess

    def __post_init__(self):
        self.beta1_star = np.asarray(self.beta1_star, dtype=float).ravel()
        self.beta2_star = np.asarray(self.beta2_star, dtype=float).ravel()
        if self.beta1_star.shape != self.beta2_star.shape:
            raise ConfigError("beta1_star and beta2_star must have the same length")
        if self.regressor.d != self.d:
            raise ConfigError(
                f"regressor dimension {self.regressor.d} != parameter dimension {self.d}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.p < 1:
            raise ConfigError(f"mixing probability must lie in (0, 1), got {self.p}")

    @property
    def d(self) -> int:
        return self.beta1_star.shape[0]

    @property
    def symmetric(self) -> bool:
        return bool(np.array_equal(self.beta1_star, -self.beta2_star))

    @property
    def theta_star(self) -> tuple[np.ndarray, np.ndarray]:
        """``((beta1* + beta2*)/2, (beta1* - beta2*)/2)``."""
        return (0.5 * (self.beta1_star + self.beta2_star),
                0.5 * (self.beta1_star - self.beta2_star))

    @classmethod
    def symmetric_model(cls, beta_star, sigma, regressor, p=0.5) -> ModelSpec:
        beta_star = np.asarray(beta_star, dtype=float)
        return cls(beta_star, -beta_star, sigma, p, regressor)

    @classmethod
    def ar1_benchmark(cls, sigma: float = 1.0) -> ModelSpec:
        """The three-dimensional AR(1) benchmark used by the figure experiments.

        beta1* = [1, 15, 13], beta2* = [-10, -11, -12],
        phi_{k+1} = 0.5 phi_k + e_{k+1} with e ~ N(0, I_3), balanced labels.
        """
        return cls(
            [1.0, 15.0, 13.0], [-10.0, -11.0, -12.0], sigma, 0.5,
            RegressorProcess.ar1(0.5 * np.eye(3), np.eye(3)),
        )

    def to_dict(self) -> dict:
        return {
            "beta1_star": self.beta1_star.tolist(),
            "beta2_star": self.beta2_star.tolist(),
            "sigma": self.sigma,
            "p": self.p,
            "regressor": self.regressor.to_dict(),
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> ModelSpec:
        b1 = np.asarray(cfg["beta1_star"], dtype=float)
        b2 = np.asarray(cfg["beta2_star"], dtype=float) if "beta2_star" in cfg else -b1
        reg = RegressorProcess.from_dict(cfg.get("regressor", {"kind": "iid_gaussian"}), b1.size)
        return cls(b1, b2, float(cfg.get("sigma", 1.0)), float(cfg.get("p", 0.5)), reg)


@dataclass(frozen=True)
class Observation:
    k: int
    phi: np.ndarray
    y: float
    z: int

    def visible(self) -> tuple[np.ndarray, float]:
        """The estimator-facing part of the record."""
        return self.phi, self.y


def sample_label(rng: np.random.Generator, p: float) -> int:
    """+1 with probability ``p``, otherwise -1."""
    if not 0 < p < 1:
        raise ConfigError(f"mixing probability must lie in (0, 1), got {p}")
    return 1 if rng.random() < p else -1


def _regressor_block(process: RegressorProcess, eps: np.ndarray, states: np.ndarray | None):
    """Map standard-normal draws ``eps`` of shape ``(n, B, d)`` to regressors.

    ``states`` (shape ``(B, d)``) is the AR(1) state before the block; the
    updated state is returned alongside the regressors.
    """
    if process.kind == "iid_gaussian":
        return matvec(process._chol, eps), states
    if process.kind == "sphere_uniform":
        return process.radius * eps / np.linalg.norm(eps, axis=-1, keepdims=True), states
    innov = matvec(process._chol, eps)
    out = np.empty_like(innov)
    x = states
    for k in range(innov.shape[0]):
        x = matvec(process.A, x) + innov[k]
        out[k] = x
    return out, x


def next_regressor(process: RegressorProcess, rng: np.random.Generator) -> np.ndarray:
    """Advance the process by one step and return the new regressor."""
    eps = rng.standard_normal(process.d)[None, None, :]
    state = None if process.state is None else process.state[None, :]
    phi, state = _regressor_block(process, eps, state)
    if process.kind == "ar1":
        process.state = state[0]
    return phi[0, 0]


def emit(model: ModelSpec, phi, z: int, rng: np.random.Generator, k: int = 0) -> Observation:
    """Draw ``y = beta_z*' phi + w`` and wrap it with its hidden label."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (model.d,):
        raise ValueError(f"phi must have shape ({model.d},), got {phi.shape}")
    beta = model.beta1_star if z == 1 else model.beta2_star
    y = dot(phi, beta) + model.sigma * rng.standard_normal()
    return Observation(k, phi, float(y), int(z))


class DataStream:
    """One seeded MLR stream.

    Iterating yields :class:`Observation` records one at a time; :meth:`take`
    draws a block of ``n`` records at once and produces exactly the values
    the iterator would have produced.
    """

    def __init__(self, model: ModelSpec, seed: int, key: tuple[int, ...] = ()):
        self.model = model
        self.seed = seed
        self.key = tuple(key)
        self.labels_rng = derive_rng(seed, *key, LABELS)
        self.regressor_rng = derive_rng(seed, *key, REGRESSOR)
        self.noise_rng = derive_rng(seed, *key, NOISE)
        self.process = model.regressor.copy()
        self.process.reset(self.regressor_rng)
        self.k = 0

    def __iter__(self):
        return self

    def __next__(self) -> Observation:
        z = sample_label(self.labels_rng, self.model.p)
        phi = next_regressor(self.process, self.regressor_rng)
        self.k += 1
        return emit(self.model, phi, z, self.noise_rng, k=self.k)

    def take(self, n: int):
        """Return ``phi (n, d), y (n,), z (n,)``."""
        phi, y, z = StreamBatch._from_streams(self.model, [self]).take(n)
        return phi[:, 0], y[:, 0], z[:, 0]


class StreamBatch:
    """Several independent streams advanced in lockstep.

    Arrays are time-major: ``phi`` has shape ``(n, B, d)``.  Replication ``b``
    of the batch is identical to ``DataStream(model, seed, keys[b])`` run on
    its own.
    """

    def __init__(self, model: ModelSpec, seed: int, keys):
        self.model = model
        self.streams = [DataStream(model, seed, key) for key in keys]

    @classmethod
    def _from_streams(cls, model, streams):
        obj = cls.__new__(cls)
        obj.model = model
        obj.streams = list(streams)
        return obj

    def __len__(self):
        return len(self.streams)

    def take(self, n: int):
        model = self.model
        d = model.d
        u = np.stack([s.labels_rng.random(n) for s in self.streams], axis=1)
        eps = np.stack([s.regressor_rng.standard_normal((n, d)) for s in self.streams], axis=1)
        w = np.stack([s.noise_rng.standard_normal(n) for s in self.streams], axis=1)

        states = None
        if model.regressor.kind == "ar1":
            states = np.stack([s.process.state for s in self.streams])
        phi, states = _regressor_block(model.regressor, eps, states)
        if states is not None:
            for s, x in zip(self.streams, states):
                s.process.state = x.copy()
        for s in self.streams:
            s.k += n

        z = np.where(u < model.p, 1, -1)
        y = np.where(z == 1, dot(phi, model.beta1_star), dot(phi, model.beta2_star))
        y = y + model.sigma * w
        return phi, y, z


def write_stream_csv(path, phi, y, z=None, k0: int = 1) -> None:
    """Dump a stream as ``k,phi_1..phi_d,y,z`` (``z`` column omitted when unknown)."""
    phi = np.atleast_2d(phi)
    d = phi.shape[1]
    header = ["k"] + [f"phi_{j + 1}" for j in range(d)] + ["y"]
    if z is not None:
        header.append("z")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(phi.shape[0]):
            row = [k0 + i] + [repr(float(v)) for v in phi[i]] + [repr(float(y[i]))]
            if z is not None:
                row.append(int(z[i]))
            writer.writerow(row)


def read_stream_csv(path):
    """Inverse of :func:`write_stream_csv`; returns ``phi, y, z`` (``z`` may be None)."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    d = sum(1 for h in header if h.startswith("phi_"))
    data = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(header))
    phi = data[:, 1:1 + d]
    y = data[:, 1 + d]
    z = data[:, 2 + d].astype(int) if "z" in header else None
    return phi, y, z
