import numpy as np
import pytest
from scipy import stats

from nestcoh.echo import fidelity_amplitude
from nestcoh.errors import IntegratorError, ParameterError
from nestcoh.montecarlo import (RunPlan, Scenario, aggregate_traces, realization_traces,
                                run_ensemble, run_scenario_sweep, sample_realization)

SMALL = dict(n_env=8, lam=0.1, t_max=5.0, step=0.1, dt=0.02)


def test_single_run_has_zero_stderr():
    sc = Scenario(**SMALL, Gamma=0.05)
    tr = run_ensemble(RunPlan(sc, 1, base_seed=7))
    np.testing.assert_array_equal(tr.values, realization_traces(sc, [0.05], 7, 0)[0])
    assert not tr.stderr_re.any() and not tr.stderr_im.any()


@pytest.mark.parametrize("Gamma", [0.0, 0.3])
def test_lambda_zero_is_identically_one(Gamma):
    tr = run_ensemble(RunPlan(Scenario(**dict(SMALL, lam=0.0), Gamma=Gamma), 5, base_seed=3))
    np.testing.assert_allclose(tr.values, 1.0, atol=1e-12)
    assert np.max(tr.stderr_re) < 1e-12 and np.max(tr.stderr_im) < 1e-12


def test_exact_base_matches_echo_kernel():
    sc = Scenario(**SMALL)
    pair, _, rho = sample_realization(sc, 11, 2)
    np.testing.assert_array_equal(realization_traces(sc, [0.0], 11, 2)[0],
                                  fidelity_amplitude(pair, rho, sc.grid()).values)


def test_worker_count_does_not_change_bits():
    plans = [RunPlan(Scenario(**SMALL, Gamma=G), 9, base_seed=5, workers=w)
             for G in (0.0, 0.1) for w in (1, 4)]
    tr = run_scenario_sweep(plans)
    for a, b in ((tr[0], tr[1]), (tr[2], tr[3])):
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.stderr_re, b.stderr_re)
        np.testing.assert_array_equal(a.stderr_im, b.stderr_im)


def test_sweep_contract():
    assert run_scenario_sweep([]) == []
    p = RunPlan(Scenario(**SMALL, Gamma=0.1), 3, base_seed=1)
    q = RunPlan(Scenario(**SMALL, Gamma=0.2), 3, base_seed=1)
    a, b, c = run_scenario_sweep([p, q, p])
    np.testing.assert_array_equal(a.values, c.values)
    # grouped evaluation equals separate runs
    np.testing.assert_array_equal(b.values, run_ensemble(q).values)
    assert a.meta["Gamma"] == 0.1 and b.meta["Gamma"] == 0.2


def test_shared_seed_realizations_share_h0():
    sc = Scenario(**SMALL)
    p1, _, _ = sample_realization(sc, 4, 0)
    p2, _, _ = sample_realization(sc.with_gamma(0.5), 4, 0)
    p3, _, _ = sample_realization(sc, 4, 1)
    np.testing.assert_array_equal(p1.H0, p2.H0)
    assert not np.allclose(p1.H0, p3.H0)


def test_frozen_modes():
    sc = Scenario(**SMALL, freeze_veff=True, vprime_mode="fixed")
    a = sample_realization(sc, 2, 0)
    b = sample_realization(sc, 2, 1)
    np.testing.assert_array_equal(a[0].Veff, b[0].Veff)
    np.testing.assert_array_equal(a[1], b[1])
    assert not np.allclose(a[0].H0, b[0].H0)
    assert sample_realization(Scenario(**SMALL, vprime_mode="isotropic"), 2, 0)[1] is None


def test_pure_state_ensemble_approaches_mixed():
    mixed = run_ensemble(RunPlan(Scenario(**SMALL), 200, base_seed=6))
    pure = run_ensemble(RunPlan(Scenario(**SMALL, rho="pure"), 200, base_seed=6))
    # same H0, Veff per realization: the difference is the state average only
    assert np.max(np.abs(pure.values - mixed.values)) < 5 * np.max(pure.stderr_abs) + 1e-3


def test_cache_reuse(tmp_path):
    plan = RunPlan(Scenario(**SMALL, Gamma=0.1), 4, base_seed=9)
    first = run_ensemble(plan, str(tmp_path))
    files = list(tmp_path.glob("*.npz"))
    assert len(files) == 1 and files[0].stem == plan.fingerprint()
    # tamper with the cache to prove it is read back
    with np.load(files[0]) as z:
        d = dict(z)
    d["values"] = d["values"] * 0 + 2.0
    np.savez(files[0], **d)
    assert np.all(run_ensemble(plan, str(tmp_path)).values == 2.0)
    assert RunPlan(plan.scenario, 4, 9, workers=3).fingerprint() == plan.fingerprint()
    assert RunPlan(plan.scenario, 5, 9).fingerprint() != plan.fingerprint()
    assert first.meta["plan_hash"] == plan.fingerprint()


def test_failure_reports_realization(monkeypatch):
    import nestcoh.montecarlo as mc

    def boom(*a, **k):
        raise IntegratorError("norm grew")
    monkeypatch.setattr(mc, "propagate_coherence_many", boom)
    with pytest.raises(IntegratorError, match=r"realization 0 \(base_seed=13\)"):
        run_ensemble(RunPlan(Scenario(**SMALL, Gamma=0.1), 2, base_seed=13))


def test_parameter_validation():
    with pytest.raises(ParameterError):
        Scenario(n_env=1)
    with pytest.raises(ParameterError):
        Scenario(Gamma=-1.0)
    with pytest.raises(ParameterError):
        Scenario(method="exact", Gamma=0.1)
    with pytest.raises(ParameterError):
        Scenario(t_max=1.05, step=0.1)
    with pytest.raises(ParameterError):
        RunPlan(Scenario(), 0)
    with pytest.raises(ParameterError):
        RunPlan(Scenario(), 1, base_seed=2**64)


def test_aggregate_matches_numpy(rng):
    x = rng.normal(size=(37, 11)) + 1j * rng.normal(size=(37, 11))
    m, sr, si = aggregate_traces(x)
    np.testing.assert_allclose(m, x.mean(0), atol=1e-15)
    np.testing.assert_allclose(sr, x.real.std(0, ddof=1) / np.sqrt(37), rtol=1e-13)
    np.testing.assert_allclose(si, x.imag.std(0, ddof=1) / np.sqrt(37), rtol=1e-13)


def test_error_bar_coverage(rng):
    # known analytic mean, n = 50 samples per point, 4000 independent points
    t = np.linspace(0, 10, 4000)
    mu = np.exp(-0.1 * t) * np.exp(0.5j * t)
    x = mu + 0.3 * (rng.normal(size=(50, t.size)) + 1j * rng.standard_t(5, size=(50, t.size)))
    m, sr, si = aggregate_traces(x)
    for dev, se in ((m.real - mu.real, sr), (m.imag - mu.imag, si)):
        coverage = np.mean(np.abs(dev) <= 2 * se)
        assert abs(coverage - 0.95) < 0.03


def test_three_seed_consistency():
    sc = Scenario(n_env=50, lam=0.1, t_max=15.0)
    tr = run_scenario_sweep([RunPlan(sc, 1000, base_seed=s) for s in (101, 202, 303)])
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = tr[i], tr[j]
            d = (a.values - b.values)[1:]
            ok_re = np.abs(d.real) < 3 * np.hypot(a.stderr_re, b.stderr_re)[1:]
            ok_im = np.abs(d.imag) < 3 * np.hypot(a.stderr_im, b.stderr_im)[1:]
            assert np.mean(ok_re) >= 0.99 and np.mean(ok_im) >= 0.99, (i, j)
