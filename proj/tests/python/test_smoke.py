import csv
import io
import json
import math

import numpy as np
import pytest

import iwvi

trapezoid = getattr(np, "trapezoid", None) or np.trapz


def matched_pair(log_scale=-2.0):
    target = iwvi.GaussianTarget(np.array([0.5, -1.0]), np.array([1.5, 0.7]), log_scale)
    q = iwvi.EllipticalParams(np.array([0.5, -1.0]), np.diag([1.5, 0.7]))
    return target, q


def test_version_is_a_string():
    assert isinstance(iwvi.__version__, str) and iwvi.__version__


def test_params_round_trip():
    q = iwvi.EllipticalParams(np.zeros(2), np.array([[1.0, 0.3], [0.0, 2.0]]), "student_t", nu=5.0)
    assert q.family == "student_t"
    assert q.dim == 2
    back = iwvi.EllipticalParams.unflatten(q.flatten(), "student_t", 2)
    np.testing.assert_array_equal(back.flatten(), q.flatten())
    np.testing.assert_allclose(q.sigma(), q.scale.T @ q.scale)
    assert q.nu == pytest.approx(5.0)


def test_single_sample_iw_elbo_is_elbo():
    target = iwvi.MixtureTarget1D([0.3, 0.7], [-2.0, 2.0], [0.5, 0.8])
    q = iwvi.EllipticalParams(np.zeros(1), np.eye(1) * 2.0)
    assert iwvi.iw_elbo(q, target, 1, 500, 3) == iwvi.elbo(q, target, 500, 3)


def test_matched_target_is_exact():
    target, q = matched_pair()
    value, se = iwvi.iw_elbo(q, target, 8, 200, 1)
    assert value == pytest.approx(-2.0, abs=1e-12)
    assert se == pytest.approx(0.0, abs=1e-12)
    gap = iwvi.gap_diagnostics(q, target, 8, 200, 1)
    assert gap["kl_joint"] == pytest.approx(0.0, abs=1e-12)


def test_gap_shrinks_with_M():
    target = iwvi.GaussianTarget(np.zeros(1), np.ones(1))
    q = iwvi.EllipticalParams(np.zeros(1), np.eye(1) * 1.5)
    gaps = [iwvi.gap_diagnostics(q, target, M, 5000, 2)["kl_joint_cv"] for M in (1, 4, 16)]
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_snis_constant():
    target = iwvi.MixtureTarget1D([0.3, 0.7], [-2.0, 2.0], [0.5, 0.8])
    q = iwvi.EllipticalParams(np.zeros(1), np.eye(1) * 2.0, "student_t", 4.0)
    est, _ = iwvi.snis_expect(lambda z: np.array([2.5]), q, target, 5, 200, 9)
    assert est[0] == pytest.approx(2.5, rel=1e-14)


def test_sampler_and_density_agree_on_mean():
    target = iwvi.MixtureTarget1D([0.3, 0.7], [-2.0, 2.0], [0.5, 0.8])
    q = iwvi.EllipticalParams(np.zeros(1), np.eye(1) * 2.0)
    draws = iwvi.sample_qM(q, target, 5, 40000, 4)
    grid = np.linspace(-10, 10, 801)
    dens = np.array(iwvi.qm_marginal_density(grid, q, target, 5, 4000, 5))
    assert trapezoid(dens, grid) == pytest.approx(1.0, abs=0.02)
    mean = trapezoid(grid * dens, grid)
    assert draws[:, 0].mean() == pytest.approx(mean, abs=0.05)


def test_gradient_matches_finite_difference():
    obs = np.array([[0.3, -1.0], [2.0, 0.5], [-4.0, 3.0]])
    target = iwvi.ClutterTarget(obs)
    assert target.log_evidence is not None
    q = iwvi.EllipticalParams(np.array([0.2, 0.1]), np.array([[1.0, 0.2], [0.0, 0.8]]), "student_t", 6.0)
    _, grad = iwvi.fixed_noise_iw_elbo(q, target, 3, 10, 1)
    raw = q.flatten()
    h = 1e-6
    for i in range(raw.size):
        up, down = raw.copy(), raw.copy()
        up[i] += h
        down[i] -= h
        f_up, _ = iwvi.fixed_noise_iw_elbo(iwvi.EllipticalParams.unflatten(up, "student_t", 2), target, 3, 10, 1)
        f_down, _ = iwvi.fixed_noise_iw_elbo(iwvi.EllipticalParams.unflatten(down, "student_t", 2), target, 3, 10, 1)
        assert grad[i] == pytest.approx((f_up - f_down) / (2 * h), rel=1e-5, abs=1e-6)


def test_dirichlet_evidence():
    target = iwvi.DirichletTarget(np.array([2.0, 2.0]))
    assert target.log_evidence == pytest.approx(math.log(1.0 / 6.0), abs=1e-12)


TINY_CLUTTER = {
    "experiment": "clutter",
    "seed": 7,
    "M_set": [1, 4],
    "repetitions": 2,
    "d": 1,
    "n_obs": 3,
    "n_fixed_noise": 50,
    "eval_batches": 200,
    "lbfgs_max_iter": 30,
}


def test_run_experiment_is_reproducible():
    text = iwvi.run_experiment(json.dumps(TINY_CLUTTER))
    assert text == iwvi.run_experiment(json.dumps(TINY_CLUTTER))
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["experiment", "family", "M", "repetition", "metric", "value", "stderr", "extra"]
    assert {"gaussian", "student_t"} <= {r[1] for r in rows[1:]}


def test_run_to_directory(tmp_path):
    path = iwvi.run_to_directory(json.dumps(TINY_CLUTTER), str(tmp_path))
    assert (tmp_path / "manifest.json").exists()
    assert (tmp_path / "config.json").exists()
    assert open(path).read().startswith("experiment,family,M")


def test_config_errors_are_value_errors():
    with pytest.raises(ValueError):
        iwvi.run_experiment(json.dumps({"experiment": "clutter", "no_such_key": 1}))


def test_missing_dataset():
    cfg = {"experiment": "logreg", "dataset_path": "/nonexistent/file.libsvm"}
    with pytest.raises(FileNotFoundError):
        iwvi.run_experiment(json.dumps(cfg))
