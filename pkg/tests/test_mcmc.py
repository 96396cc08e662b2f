import numpy as np
import pytest

from mixlift.lve import Observation
from mixlift.mcmc import (
    Query,
    apply_observations,
    exact_job_house_query,
    job_house_model,
    run_ground_mcmc,
    run_lifted_mcmc,
)
from mixlift.model import ModelError


def _obs():
    return [
        Observation(atom="Job", counts=(3, 9)),
        Observation(atom="HP", values=(-0.25, -0.3, -0.2, -0.35)),
    ]


def test_query_key():
    q = Query(atom="HP", kind="below", threshold=-0.1)
    assert q.key == "HP:below:-0.1"
    assert Query(atom="Job", kind="equals", value=1).key == "Job:equals:1"


def test_apply_observations_shrinks_population():
    model = job_house_model(n_people=20, n_houses=16)
    out = apply_observations(model, _obs())
    job = next(p for p in out.potentials if p.theta_atom == "Job")
    hp = next(p for p in out.potentials if p.weight_latent == "p_D")
    assert job.populations["Job"] == 8
    assert hp.populations["HP"] == 12
    assert np.array_equal(job.obs_counts["Job"], np.array([3.0, 9.0]))
    assert hp.obs_loglik is not None and len(hp.obs_loglik) == 2
    # Original model must be untouched.
    assert model.potentials[1].populations["Job"] == 20


def test_apply_observations_rejects_excess():
    model = job_house_model(n_people=4, n_houses=4)
    with pytest.raises(ModelError):
        apply_observations(model, [Observation(atom="Job", counts=(3, 3))])


def test_lifted_chain_matches_exact_reference():
    model = job_house_model(n_people=20, n_houses=32)
    q = Query(atom="HP", kind="below", threshold=-0.1)
    exact = exact_job_house_query(model, q, obs=_obs(), grid=301)
    res = run_lifted_mcmc(model, q, obs=_obs(), steps=6000, burn_in=500, seed=1)
    got = res.estimates[q.key]
    assert abs(got - exact) / exact < 0.05
    assert res.step_time_us > 0
    assert res.split_disagreement < 0.05


def test_ground_chain_matches_exact_reference():
    model = job_house_model(n_people=12, n_houses=16)
    q = Query(atom="HP", kind="below", threshold=-0.1)
    exact = exact_job_house_query(model, q, obs=_obs(), grid=301)
    res = run_ground_mcmc(model, q, obs=_obs(), steps=4000, burn_in=1000, seed=3)
    got = res.estimates[q.key]
    assert abs(got - exact) / exact < 0.25


def test_lifted_chain_is_deterministic():
    model = job_house_model(n_people=16, n_houses=8)
    q = Query(atom="HP", kind="below", threshold=0.0)
    r1 = run_lifted_mcmc(model, q, obs=_obs(), steps=500, burn_in=100, seed=7)
    r2 = run_lifted_mcmc(model, q, obs=_obs(), steps=500, burn_in=100, seed=7)
    assert r1.estimates == r2.estimates
    for name in r1.trace:
        assert np.array_equal(r1.trace[name], r2.trace[name])


def test_systematic_sweep_touches_all_latents():
    model = job_house_model(n_people=10, n_houses=8)
    q = Query(atom="HP", kind="below", threshold=0.0)
    res = run_lifted_mcmc(model, q, steps=400, burn_in=100, seed=2, sweep="systematic")
    counts = list(res.selection_counts.values())
    assert max(counts) - min(counts) <= 1


def test_chain_argument_validation():
    model = job_house_model(n_people=6, n_houses=4)
    q = Query(atom="HP", kind="below", threshold=0.0)
    with pytest.raises(ModelError):
        run_lifted_mcmc(model, q, steps=10, burn_in=10)
    with pytest.raises(ModelError):
        run_ground_mcmc(model, q, steps=100, burn_in=10, population_cap=5)
    with pytest.raises(ModelError):
        exact_job_house_query(model, Query(atom="Job", kind="equals", value=1))
