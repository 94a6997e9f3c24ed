"""Experiment drivers behind the CLI.

Every driver is a pure function of its configuration: outputs depend only on
``(config, seed)``, never on wall-clock time or on how replications are
batched.  Replication ``r`` of a kappa-grid point ``i`` always uses streams
derived from ``(seed, i, r, purpose)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import asym_em, baseline_em, clustering, ode_lab, sym_em
from .._io import write_csv, write_json
from ..datagen import DataStream, ModelSpec, StreamBatch, derive_rng, write_stream_csv
from ..exceptions import ConfigError
from ..whitening import Whitener
from .config import ExperimentConfig

log = logging.getLogger(__name__)

ONLINE_DATA, POPEM_DATA, INIT_DRAW = 0, 1, 2


def _check_dim(vec, d, name):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (d,):
        raise ConfigError(f"{name} must have length {d}, got {vec.shape}")
    return vec


def relative_tolerance(model: ModelSpec, tol: float) -> float:
    return tol * max(np.linalg.norm(model.beta1_star), np.linalg.norm(model.beta2_star))


def _blocks(source, n, chunk):
    done = 0
    while done < n:
        m = min(chunk, n - done)
        yield done, source.take(m)
        done += m


# -- streaming convergence runs ------------------------------------------------


@dataclass
class ConvergenceRuns:
    err1: np.ndarray
    err2: np.ndarray
    converged: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray

    @property
    def fraction(self) -> float:
        return float(self.converged.mean())


def kappa_inits(model: ModelSpec, seed: int, grid_index: int, kappa: float, replications):
    """Initial pairs drawn uniformly in ``[beta_i* - kappa, beta_i* + kappa]`` per coordinate."""
    if kappa == 0 and np.array_equal(model.beta1_star, model.beta2_star):
        raise ConfigError("kappa = 0 with beta1* = beta2* can only draw theta2 = 0")
    b1 = np.empty((len(replications), model.d))
    b2 = np.empty_like(b1)
    for row, r in enumerate(replications):
        rng = derive_rng(seed, grid_index, r, INIT_DRAW)
        while True:
            b1[row] = model.beta1_star + rng.uniform(-kappa, kappa, model.d)
            b2[row] = model.beta2_star + rng.uniform(-kappa, kappa, model.d)
            if np.any(b1[row] != b2[row]):
                break
            log.warning("theta2 draw was exactly zero (kappa=%s, replication %s); redrawing",
                        kappa, r)
    return b1, b2


def asym_convergence(model, seed, grid_index, inits, replications, horizon, tol=0.05,
                     chunk=5000, P0=None, residual_from="pre") -> ConvergenceRuns:
    """Run the two-step estimator on independent streams, all replications in lockstep."""
    b1, b2 = inits
    state = asym_em.AsymState.from_betas(b1, b2, model.sigma**2, P0)
    batch = StreamBatch(model, seed, [(grid_index, r, ONLINE_DATA) for r in replications])
    for _, (phi, y, _) in _blocks(batch, horizon, chunk):
        state = asym_em.run(state, phi, y, residual_from=residual_from).state
    beta1, beta2 = asym_em.outputs(state)
    e1, e2, _ = asym_em.align_error(beta1, beta2, model.beta1_star, model.beta2_star)
    scale = relative_tolerance(model, tol)
    return ConvergenceRuns(e1, e2, (e1 < scale) & (e2 < scale), beta1, beta2)


def sym_convergence(model, seed, replications, horizon, whiten=True, beta0=None,
                    tol=0.05, chunk=5000, P0=None) -> ConvergenceRuns:
    """Symmetric online EM on independent streams; errors are relative to ``||beta*||``.

    Without an explicit ``beta0`` each replication starts from a standard
    normal draw scaled to ``||beta*||``.
    """
    if not model.symmetric:
        raise ConfigError("the symmetric estimator needs a symmetric model")
    replications = list(replications)
    beta_star = model.beta1_star
    if beta0 is None:
        beta0 = np.stack([derive_rng(seed, 0, r, INIT_DRAW).standard_normal(model.d)
                          for r in replications])
        beta0 *= np.linalg.norm(beta_star) / np.linalg.norm(beta0, axis=1, keepdims=True)
    beta0 = np.broadcast_to(np.asarray(beta0, dtype=float), (len(replications), model.d))
    state = sym_em.SymState.initial(beta0, model.sigma**2, P0)
    whitener = Whitener(model.d, (len(replications),)) if whiten else None
    batch = StreamBatch(model, seed, [(0, r, ONLINE_DATA) for r in replications])
    result = None
    for _, (phi, y, _) in _blocks(batch, horizon, chunk):
        result = sym_em.run(state, phi, y, whitener=whitener)
        state = result.state
    err = sym_em.aligned_error(result.beta, beta_star)
    ok = err < tol * np.linalg.norm(beta_star)
    return ConvergenceRuns(err, err, ok, result.beta, -result.beta)


# -- fig1 ----------------------------------------------------------------------


def run_fig1(config: ExperimentConfig) -> dict:
    """One long run of the two-step estimator from the configured initial values.

    Writes ``fig1_trace.csv`` (estimates and aligned errors),
    ``fig1_clustering.csv`` (running within-cluster error and correct rate)
    and ``fig1_summary.json``.  Rows are emitted every ``trace_every`` steps.
    """
    model, out = config.model, config.out
    out.mkdir(parents=True, exist_ok=True)
    theta1 = _check_dim(config.init.theta1, model.d, "init.theta1")
    theta2 = _check_dim(config.init.theta2, model.d, "init.theta2")
    state = asym_em.AsymState.initial(theta1, theta2, model.sigma**2, config.P0())
    whitener = Whitener(model.d) if config.whiten else None
    stream = DataStream(model, config.seed, (0, 0, ONLINE_DATA))

    ks, b1s, b2s, Js, rates = [], [], [], [], []
    sum_sq = 0.0
    correct = 0
    report = clustering.ClusterReport()
    every = config.trace_every
    for start, (phi, y, z) in _blocks(stream, config.horizon, config.chunk):
        res = asym_em.run(state, phi, y, whitener=whitener, keep_path=True,
                          residual_from=config.residual_from)
        path = res.path
        r2, ok = clustering.evaluate_asym(path[:, 0], path[:, 1], phi, y, z,
                                          model.beta1_star, model.beta2_star)
        cum_sq = sum_sq + np.cumsum(r2)
        cum_ok = correct + np.cumsum(ok)
        for i in range(phi.shape[0]):
            k = start + i
            if k % every == 0:
                ks.append(k)
                b1s.append(path[i, 0])
                b2s.append(path[i, 1])
                Js.append(sum_sq / k if k else np.nan)
                rates.append(correct / k if k else np.nan)
            sum_sq, correct = cum_sq[i], cum_ok[i]
        report = report + clustering.ClusterReport.from_arrays(r2, ok)
        state = res.state
        final_b1, final_b2 = res.beta1, res.beta2
    n = config.horizon
    ks.append(n)
    b1s.append(final_b1)
    b2s.append(final_b2)
    Js.append(report.J)
    rates.append(report.correct_rate)

    e1, e2, (j1, j2) = asym_em.align_error(np.array(b1s), np.array(b2s),
                                           model.beta1_star, model.beta2_star)
    asym_em.write_trace_csv(out / "fig1_trace.csv", ks, b1s, b2s, e1, e2)
    write_csv(out / "fig1_clustering.csv", ["k", "J", "correct_rate"],
              zip(ks, Js, rates))

    scale = relative_tolerance(model, 1.0)
    rel1, rel2 = e1[-1] / scale, e2[-1] / scale
    summary = {
        "experiment": "fig1",
        "seed": config.seed,
        "horizon": n,
        "whiten": config.whiten,
        "final_beta1": final_b1,
        "final_beta2": final_b2,
        "assignment": [int(j1[-1]), int(j2[-1])],
        "err1": e1[-1],
        "err2": e2[-1],
        "rel_err1": rel1,
        "rel_err2": rel2,
        "J": report.J,
        "correct_rate": report.correct_rate,
        "within_theory": model.p == 0.5,
        "status": "PASS" if max(rel1, rel2) < config.tolerance else "FAIL",
    }
    write_json(out / "fig1_summary.json", summary)
    return summary


# -- fig2 ----------------------------------------------------------------------


def _binomial_se(fraction, n):
    return float(np.sqrt(max(fraction * (1.0 - fraction), 0.0) / n))


def popem_monotone(fractions, ses) -> bool:
    """Nonincreasing in kappa, tolerating a single rise no larger than two standard errors."""
    rises = 0
    for i in range(1, len(fractions)):
        up = fractions[i] - fractions[i - 1]
        if up > 0:
            allowed = 2.0 * np.hypot(ses[i], ses[i - 1])
            if up > allowed:
                return False
            rises += 1
    return rises <= 1


def run_fig2(config: ExperimentConfig) -> dict:
    """Convergence fraction against the initialisation radius kappa.

    For each kappa and replication both methods start from the same drawn
    pair; the online method streams ``horizon`` samples, population EM runs
    ``pop_em.T`` iterations on ``pop_em.n_samples`` samples.
    """
    model, out = config.model, config.out
    out.mkdir(parents=True, exist_ok=True)
    reps = list(range(config.replications))
    truth = (model.beta1_star, model.beta2_star)
    rows, table = [], []
    for gi, kappa in enumerate(config.kappa_grid):
        online_ok, pop_ok, aborted = [], [], 0
        for lo in range(0, len(reps), config.batch_size):
            part = reps[lo:lo + config.batch_size]
            b1, b2 = kappa_inits(model, config.seed, gi, kappa, part)
            online = asym_convergence(model, config.seed, gi, (b1, b2), part, config.horizon,
                                      config.tolerance, config.chunk, config.P0(),
                                      config.residual_from)
            pbatch = StreamBatch(model, config.seed, [(gi, r, POPEM_DATA) for r in part])
            phi, y, _ = pbatch.take(config.pop_em.n_samples)
            for row, r in enumerate(part):
                fit = baseline_em.fit(phi[:, row], y[:, row], (b1[row], b2[row]),
                                      config.pop_em.T, model.sigma**2, truth,
                                      config.tolerance, config.pop_em.e_step)
                aborted += fit.aborted
                online_ok.append(bool(online.converged[row]))
                pop_ok.append(bool(fit.converged))
                rows.append([kappa, r, online.err1[row], online.err2[row],
                             online.converged[row], fit.err1, fit.err2, fit.converged,
                             fit.aborted])
        n = len(reps)
        f_on, f_pop = float(np.mean(online_ok)), float(np.mean(pop_ok))
        table.append([kappa, n, f_on, _binomial_se(f_on, n), f_pop, _binomial_se(f_pop, n),
                      aborted])
        log.info("kappa=%g online=%.3f popem=%.3f", kappa, f_on, f_pop)

    write_csv(out / "fig2.csv", ["kappa", "replications", "online_fraction", "online_se",
                                 "popem_fraction", "popem_se", "popem_aborted"], table)
    write_csv(out / "fig2_runs.csv", ["kappa", "replication", "online_err1", "online_err2",
                                      "online_converged", "popem_err1", "popem_err2",
                                      "popem_converged", "popem_aborted"], rows)
    f_on = [t[2] for t in table]
    f_pop = [t[4] for t in table]
    se_pop = [t[5] for t in table]
    checks = {
        "online_fraction_at_least_0.95": all(f >= 0.95 for f in f_on),
        "popem_nonincreasing": popem_monotone(f_pop, se_pop),
        "popem_at_most_0.2_at_largest_kappa": f_pop[-1] <= 0.2,
    }
    summary = {
        "experiment": "fig2",
        "seed": config.seed,
        "replications": config.replications,
        "horizon": config.horizon,
        "pop_em": {"n_samples": config.pop_em.n_samples, "T": config.pop_em.T,
                   "e_step": config.pop_em.e_step},
        "kappa": list(config.kappa_grid),
        "online_fraction": f_on,
        "popem_fraction": f_pop,
        "checks": checks,
        "within_theory": model.p == 0.5,
        "status": "PASS" if all(checks.values()) else "FAIL",
    }
    write_json(out / "fig2_summary.json", summary)
    return summary


# -- bounds --------------------------------------------------------------------


def run_bounds(config: ExperimentConfig) -> dict:
    """Empirical clustering performance against the theoretical limits.

    The online estimator (symmetric or general, depending on the model) is
    run for ``horizon`` steps; its final parameters, and separately the true
    parameters, then classify ``eval_points`` fresh samples.  The report
    compares correct rates with the bound and ``J`` with its limit.
    """
    model, out = config.model, config.out
    out.mkdir(parents=True, exist_ok=True)
    sigma2 = model.sigma**2
    train = DataStream(model, config.seed, (0, 0, ONLINE_DATA))
    phi, y, _ = train.take(config.horizon)
    whitener = Whitener(model.d) if config.whiten else None

    if model.symmetric:
        beta0 = np.ones(model.d) if config.init.beta0 is None else config.init.beta0
        beta0 = _check_dim(beta0, model.d, "init.beta0")
        res = sym_em.run(sym_em.SymState.initial(beta0, sigma2, config.P0()), phi, y, whitener)
        estimate = (res.beta, -res.beta)
    else:
        theta1 = _check_dim(config.init.theta1, model.d, "init.theta1")
        theta2 = _check_dim(config.init.theta2, model.d, "init.theta2")
        res = asym_em.run(asym_em.AsymState.initial(theta1, theta2, sigma2, config.P0()),
                          phi, y, whitener, residual_from=config.residual_from)
        estimate = (res.beta1, res.beta2)

    fresh = DataStream(model, config.seed, (0, 1, ONLINE_DATA))
    phi_e, y_e, z_e = fresh.take(config.eval_points)

    def score(b1, b2):
        if model.symmetric:
            r2, ok = clustering.evaluate_sym(b1, phi_e, y_e, z_e, model.beta1_star)
        else:
            r2, ok = clustering.evaluate_asym(b1, b2, phi_e, y_e, z_e,
                                              model.beta1_star, model.beta2_star)
        return clustering.ClusterReport.from_arrays(r2, ok)

    est_report = score(*estimate)
    true_report = score(model.beta1_star, model.beta2_star)

    inputs = clustering.BoundInputs.for_model(model)
    bound = clustering.misclassification_bound_mc(
        inputs, config.mc_samples, derive_rng(config.seed, 0, 2, INIT_DRAW))
    jlim = clustering.j_limit(inputs, config.mc_samples, derive_rng(config.seed, 0, 3, INIT_DRAW))
    closed_form = None
    if model.regressor.gaussian:
        S = model.regressor.stationary_covariance()
        q = float(inputs.beta @ S @ inputs.beta)
        closed_form = clustering.misclassification_bound_gaussian(q, model.sigma, model.symmetric)

    def checks_for(report):
        j_rel = abs(report.J - jlim.value) / jlim.value
        return {
            "rate_above_bound": report.correct_rate >= bound.value - 3.0 * bound.se,
            "J_within_5pct": j_rel <= 0.05,
            "J_rel_dev": j_rel,
        }

    est_checks = checks_for(est_report)
    true_checks = checks_for(true_report)
    passed = all(c[k] for c in (est_checks, true_checks)
                 for k in ("rate_above_bound", "J_within_5pct"))
    payload = clustering.write_report_json(
        out / "bounds_report.json", est_report, bound, jlim,
        experiment="bounds",
        seed=config.seed,
        symmetric=model.symmetric,
        estimate=[estimate[0], estimate[1]],
        bound_closed_form=closed_form,
        true_params={"J": true_report.J, "correct_rate": true_report.correct_rate},
        checks={"estimated": est_checks, "true_params": true_checks},
        status="PASS" if passed else "FAIL",
    )
    return payload


# -- single-purpose verbs --------------------------------------------------------


def simulate(config: ExperimentConfig, n: int | None = None):
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    n = config.horizon if n is None else n
    phi, y, z = DataStream(config.model, config.seed, (0, 0, ONLINE_DATA)).take(n)
    path = out / "stream.csv"
    write_stream_csv(path, phi, y, z)
    return path


def _trace_rows(n, every):
    ks = np.arange(0, n, every)
    return ks


def fit_sym(config: ExperimentConfig, phi=None, y=None) -> dict:
    """Symmetric online EM on a given or simulated stream; writes ``sym_trace.csv``."""
    model, out = config.model, config.out
    out.mkdir(parents=True, exist_ok=True)
    if phi is None:
        phi, y, _ = DataStream(model, config.seed, (0, 0, ONLINE_DATA)).take(config.horizon)
    d = phi.shape[1]
    beta0 = np.ones(d) if config.init.beta0 is None else _check_dim(config.init.beta0, d,
                                                                     "init.beta0")
    whitener = Whitener(d) if config.whiten else None
    state = sym_em.SymState.initial(beta0, model.sigma**2, config.P0())
    res = sym_em.run(state, phi, y, whitener=whitener, keep_path=True)
    ks = list(_trace_rows(phi.shape[0], config.trace_every)) + [phi.shape[0]]
    betas = np.vstack([res.path[ks[:-1]], res.beta[None]])
    errs = None
    summary = {"experiment": "fit-sym", "seed": config.seed, "n": phi.shape[0],
               "final_beta": res.beta, "whiten": config.whiten}
    if model.symmetric and model.d == d:
        errs = sym_em.aligned_error(betas, model.beta1_star)
        summary["err_aligned"] = errs[-1]
        summary["rel_err"] = errs[-1] / np.linalg.norm(model.beta1_star)
    sym_em.write_trace_csv(out / "sym_trace.csv", ks, betas, errs)
    write_json(out / "sym_summary.json", summary)
    return summary


def fit_asym(config: ExperimentConfig, phi=None, y=None) -> dict:
    """Two-step estimator on a given or simulated stream; writes ``asym_trace.csv``."""
    model, out = config.model, config.out
    out.mkdir(parents=True, exist_ok=True)
    if phi is None:
        phi, y, _ = DataStream(model, config.seed, (0, 0, ONLINE_DATA)).take(config.horizon)
    d = phi.shape[1]
    theta1 = _check_dim(config.init.theta1, d, "init.theta1")
    theta2 = _check_dim(config.init.theta2, d, "init.theta2")
    whitener = Whitener(d) if config.whiten else None
    state = asym_em.AsymState.initial(theta1, theta2, model.sigma**2, config.P0())
    res = asym_em.run(state, phi, y, whitener=whitener, keep_path=True,
                      residual_from=config.residual_from)
    ks = list(_trace_rows(phi.shape[0], config.trace_every)) + [phi.shape[0]]
    b1 = np.vstack([res.path[ks[:-1], 0], res.beta1[None]])
    b2 = np.vstack([res.path[ks[:-1], 1], res.beta2[None]])
    e1 = e2 = None
    summary = {"experiment": "fit-asym", "seed": config.seed, "n": phi.shape[0],
               "final_beta1": res.beta1, "final_beta2": res.beta2, "whiten": config.whiten}
    if model.d == d:
        e1, e2, (j1, j2) = asym_em.align_error(b1, b2, model.beta1_star, model.beta2_star)
        summary.update(err1=e1[-1], err2=e2[-1], assignment=[int(j1[-1]), int(j2[-1])])
    asym_em.write_trace_csv(out / "asym_trace.csv", ks, b1, b2, e1, e2)
    write_json(out / "asym_summary.json", summary)
    return summary


def fit_pop_em(config: ExperimentConfig, phi=None, y=None) -> dict:
    model, out = config.model, config.out
    out.mkdir(parents=True, exist_ok=True)
    if phi is None:
        phi, y, _ = DataStream(model, config.seed, (0, 0, POPEM_DATA)).take(
            config.pop_em.n_samples)
    d = phi.shape[1]
    theta1 = _check_dim(config.init.theta1, d, "init.theta1")
    theta2 = _check_dim(config.init.theta2, d, "init.theta2")
    truth = (model.beta1_star, model.beta2_star) if model.d == d else None
    fit = baseline_em.fit(phi, y, (theta1 + theta2, theta1 - theta2), config.pop_em.T,
                          model.sigma**2, truth, config.tolerance, config.pop_em.e_step)
    summary = {"experiment": "fit-pop-em", "seed": config.seed, "n": phi.shape[0],
               "T": config.pop_em.T, "beta1": fit.beta1, "beta2": fit.beta2,
               "iterations": fit.iterations, "aborted": fit.aborted,
               "converged": fit.converged, "err1": fit.err1, "err2": fit.err2}
    write_json(out / "popem_summary.json", summary)
    return summary


def run_ode(config: ExperimentConfig) -> dict:
    """Integrate the mean-field ODE for the configured symmetric model."""
    model, out, oc = config.model, config.out, config.ode
    out.mkdir(parents=True, exist_ok=True)
    if not model.symmetric:
        raise ConfigError("the ODE laboratory needs a symmetric model")
    field = ode_lab.MeanField.for_model(model, oc.samples, derive_rng(config.seed, 0, 4, 0))
    G = model.regressor.stationary_covariance()
    beta_star = model.beta1_star
    beta0 = np.ones(model.d) if oc.beta0 is None else _check_dim(oc.beta0, model.d, "ode.beta0")
    traj = ode_lab.integrate(ode_lab.OdeState(beta0, oc.R0_scale * G), field, G,
                             oc.horizon, oc.step)
    target = beta_star if beta0 @ beta_star >= 0 else -beta_star
    ref = ode_lab.field_equilibrium(field, target)
    ode_lab.write_trajectory_csv(out / "ode_trajectory.csv", traj, ref, every=oc.trace_every)
    summary = {
        "experiment": "ode",
        "seed": config.seed,
        "final_beta": traj.beta[-1],
        "equilibrium": ref,
        "distance_to_limit": float(np.linalg.norm(traj.beta[-1] - target)),
        "max_R_closed_form_err": float(traj.r_err.max()),
    }
    write_json(out / "ode_summary.json", summary)
    return summary
