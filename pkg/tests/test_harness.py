import json

import numpy as np
import pytest

from online_mlr.datagen import ModelSpec, RegressorProcess
from online_mlr.exceptions import ConfigError
from online_mlr.harness import experiments
from online_mlr.harness.cli import main
from online_mlr.harness.config import ExperimentConfig, OdeConfig, PopEmConfig

SMALL = {
    "horizon": 3000,
    "replications": 4,
    "kappa_grid": [0.0, 20.0],
    "pop_em": {"n_samples": 500, "T": 5},
    "eval_points": 5000,
    "mc_samples": 20_000,
    "trace_every": 500,
}


def small_config(tmp_path, **overrides):
    cfg = dict(SMALL, output_dir=str(tmp_path), **overrides)
    return ExperimentConfig.from_dict(cfg)


def sym_model_dict(beta):
    return {"beta1_star": beta, "sigma": 1.0,
            "regressor": {"kind": "iid_gaussian", "cov": 1.0}}


def test_defaults_mirror_benchmark():
    cfg = ExperimentConfig()
    np.testing.assert_array_equal(cfg.model.beta1_star, [1, 15, 13])
    assert cfg.pop_em.n_samples == 5000 and cfg.pop_em.T == 20
    assert cfg.horizon == 100_000 and cfg.replications == 500
    np.testing.assert_array_equal(cfg.P0(), np.eye(3))


@pytest.mark.parametrize("bad", [
    {"horizon": 0}, {"replications": 0}, {"kappa_grid": [1.0, -1.0]}, {"seed": -3},
    {"unknown_key": 1}, {"pop_em": {"T": 0}},
])
def test_config_validation(bad):
    with pytest.raises((ConfigError, TypeError)):
        ExperimentConfig.from_dict(bad)


def test_config_roundtrip(tmp_path):
    cfg = small_config(tmp_path, seed=9)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    again = ExperimentConfig.load(path)
    assert again.to_dict() == cfg.to_dict()


def test_fig1_defaults_converge(tmp_path):
    summary = experiments.run_fig1(small_config(tmp_path, horizon=100_000, trace_every=10_000))
    assert summary["status"] == "PASS"
    assert summary["within_theory"]
    for name in ("fig1_trace.csv", "fig1_clustering.csv", "fig1_summary.json"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "fig1_trace.csv").read_text().splitlines()[0]
    assert header == "k,beta1_1,beta1_2,beta1_3,beta2_1,beta2_2,beta2_3,err1,err2"


def test_fig1_low_noise_error_is_set_by_label_mixing(tmp_path):
    # theta1's least-squares step sees z theta2*' phi as noise, so shrinking
    # sigma barely changes the error at a given horizon
    errs = {}
    for sigma in (1e-3, 1.0):
        model = ModelSpec.ar1_benchmark(sigma=sigma).to_dict()
        out = experiments.run_fig1(small_config(tmp_path / str(sigma), model=model,
                                                horizon=20_000))
        errs[sigma] = max(out["err1"], out["err2"])
        assert out["status"] == "PASS"
    assert errs[1e-3] == pytest.approx(errs[1.0], rel=0.2)


def test_fig1_flags_unbalanced_runs(tmp_path):
    model = ModelSpec.ar1_benchmark().to_dict()
    model["p"] = 0.7
    summary = experiments.run_fig1(small_config(tmp_path, model=model))
    assert summary["within_theory"] is False


def test_fig2_batch_size_does_not_change_results(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    experiments.run_fig2(small_config(a, batch_size=4))
    experiments.run_fig2(small_config(b, batch_size=3))
    for name in ("fig2.csv", "fig2_runs.csv", "fig2_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_replication_results_do_not_depend_on_count(tmp_path):
    experiments.run_fig2(small_config(tmp_path / "a", replications=2))
    experiments.run_fig2(small_config(tmp_path / "b", replications=4))
    rows_a = (tmp_path / "a" / "fig2_runs.csv").read_text().splitlines()
    rows_b = (tmp_path / "b" / "fig2_runs.csv").read_text().splitlines()
    assert rows_a[1:3] == rows_b[1:3]


def test_fig2_kappa_zero_both_converge(tmp_path):
    summary = experiments.run_fig2(small_config(tmp_path, kappa_grid=[0.0], horizon=20_000,
                                                pop_em={"n_samples": 2000, "T": 10}))
    assert summary["online_fraction"] == [1.0]
    assert summary["popem_fraction"] == [1.0]


def test_kappa_inits_at_zero_radius_are_the_truth():
    model = ModelSpec.ar1_benchmark()
    b1, b2 = experiments.kappa_inits(model, 0, 0, 0.0, [0, 1])
    np.testing.assert_array_equal(b1, np.tile(model.beta1_star, (2, 1)))
    np.testing.assert_array_equal(b2, np.tile(model.beta2_star, (2, 1)))


class _ZeroFirst:
    """Generator stand-in whose first two uniform draws coincide."""

    def __init__(self):
        self.calls = 0
        self.rng = np.random.default_rng(0)

    def uniform(self, lo, hi, size):
        self.calls += 1
        return np.zeros(size) if self.calls <= 2 else self.rng.uniform(lo, hi, size)


def test_kappa_inits_redraw_zero_theta2(monkeypatch, caplog):
    reg = RegressorProcess.iid_gaussian(np.eye(2))
    model = ModelSpec(np.ones(2), np.ones(2), 1.0, 0.5, reg)
    fake = _ZeroFirst()
    monkeypatch.setattr(experiments, "derive_rng", lambda *key: fake)
    with caplog.at_level("WARNING"):
        b1, b2 = experiments.kappa_inits(model, 0, 0, 1.0, [0])
    assert fake.calls == 4
    assert not np.array_equal(b1, b2)
    assert "redrawing" in caplog.text
    with pytest.raises(ConfigError):
        experiments.kappa_inits(model, 0, 0, 0.0, [0])


def test_popem_monotone_rule():
    assert experiments.popem_monotone([1.0, 0.9, 0.5, 0.1], [0.0, 0.03, 0.05, 0.03])
    assert experiments.popem_monotone([1.0, 0.5, 0.55, 0.1], [0.0, 0.05, 0.05, 0.03])
    assert not experiments.popem_monotone([1.0, 0.5, 0.9, 0.1], [0.0, 0.05, 0.03, 0.03])
    assert not experiments.popem_monotone([0.5, 0.55, 0.5, 0.55], [0.05] * 4)


def test_bounds_symmetric_gaussian(tmp_path):
    cfg = small_config(tmp_path, model=sym_model_dict([1.0, 1.0, 1.0]), horizon=20_000,
                       eval_points=50_000, mc_samples=200_000)
    report = experiments.run_bounds(cfg)
    assert report["bound_closed_form"] == 0.5
    assert report["true_params"]["correct_rate"] > 0.5
    assert report["correct_rate"] > 0.5
    assert report["status"] == "PASS"
    data = json.loads((tmp_path / "bounds_report.json").read_text())
    for key in ("n", "J", "correct_rate", "bound_mc", "bound_se", "j_limit", "j_limit_se"):
        assert key in data


def test_bounds_zero_signal(tmp_path):
    cfg = small_config(tmp_path, model=sym_model_dict([0.0, 0.0]), eval_points=50_000)
    report = experiments.run_bounds(cfg)
    assert report["bound_mc"] == 0.0
    assert report["j_limit"] == 1.0
    assert report["true_params"]["J"] == pytest.approx(1.0, rel=0.03)


def test_bounds_asymmetric_benchmark(tmp_path):
    report = experiments.run_bounds(small_config(tmp_path, horizon=20_000, eval_points=50_000,
                                                 mc_samples=200_000))
    assert report["true_params"]["correct_rate"] >= report["bound_mc"] - 3 * report["bound_se"]
    assert report["status"] == "PASS"


def test_fit_verbs_on_csv(tmp_path):
    cfg = small_config(tmp_path)
    path = experiments.simulate(cfg, 2000)
    assert main(["fit-asym", "--data", str(path), "--out", str(tmp_path / "fa")]) == 0
    assert main(["fit-pop-em", "--data", str(path), "--out", str(tmp_path / "fp")]) == 0
    summary = json.loads((tmp_path / "fa" / "asym_summary.json").read_text())
    assert summary["n"] == 2000
    assert (tmp_path / "fa" / "asym_trace.csv").exists()


def test_fit_sym_verb(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"model": sym_model_dict([2.0, -1.0]), "horizon": 5000}))
    assert main(["fit-sym", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                 "--whiten"]) == 0
    summary = json.loads((tmp_path / "o" / "sym_summary.json").read_text())
    assert summary["whiten"] is True
    assert summary["rel_err"] < 0.05
    header = (tmp_path / "o" / "sym_trace.csv").read_text().splitlines()[0]
    assert header == "k,beta_1,beta_2,err_aligned"


def test_ode_verb(tmp_path):
    cfg = small_config(tmp_path, model=sym_model_dict([2.0, 1.0]),
                       ode={"samples": 20_000, "horizon": 15.0, "step": 0.05, "trace_every": 20})
    summary = experiments.run_ode(cfg)
    assert summary["distance_to_limit"] < 0.05
    assert summary["max_R_closed_form_err"] < 1e-6
    assert (tmp_path / "ode_trajectory.csv").exists()


def test_ode_needs_symmetric_model(tmp_path):
    with pytest.raises(ConfigError):
        experiments.run_ode(small_config(tmp_path))


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(dict(SMALL, kappa_grid=[0.0])))
    assert main(["experiment", "fig1", "--config", str(cfg_path), "--out", str(tmp_path / "a"),
                 "--horizon", "20000"]) == 0
    # too short a horizon for the tolerance: the experiment reports FAIL
    assert main(["experiment", "fig1", "--config", str(cfg_path), "--out", str(tmp_path / "b"),
                 "--horizon", "20"]) == 1
    assert main(["experiment", "fig2", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"horizon": -1}))
    assert main(["simulate", "--config", str(bad)]) == 2


def test_cli_overrides(tmp_path):
    from online_mlr.harness.cli import _parser, build_config
    args = _parser().parse_args(["experiment", "fig2", "--seed", "5", "--replications", "7",
                                 "--out", str(tmp_path), "--whiten"])
    cfg = build_config(args)
    assert (cfg.seed, cfg.replications, cfg.whiten, cfg.output_dir) == (5, 7, True, str(tmp_path))


def test_subconfig_defaults():
    assert PopEmConfig().e_step == "stable"
    assert OdeConfig().step == 0.01
