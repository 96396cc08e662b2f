import math

import numpy as np
import pytest

from mixlift.continuous import (
    Kde,
    KdeMixture,
    SampleSet,
    _systematic_resample,
    bandwidth_select,
    fit_kde_mixture,
    kde_eval,
    sample_potential,
)
from mixlift.model import (
    Atom,
    ModelError,
    ParametricDensity,
    binary_domain,
    continuous_domain,
)
from mixlift.oracle import grid_quadrature


def test_kde_density_integrates_to_one():
    kde = Kde(centers=np.array([-1.0, 0.2, 1.5]), bandwidth=0.3)
    mass, _, _ = grid_quadrature(lambda x: kde_eval(kde, x), ((-8.0, 8.0),), 4001)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_kde_moments_match_closed_form():
    centers = np.array([0.0, 2.0])
    kde = Kde(centers=centers, bandwidth=0.5)
    assert kde.mean() == pytest.approx(1.0)
    assert kde.variance() == pytest.approx(1.0 + 0.25)


def test_kde_nonuniform_weights():
    kde = Kde(centers=np.array([0.0, 4.0]), bandwidth=0.2, weights=np.array([3.0, 1.0]))
    assert kde.mean() == pytest.approx(1.0)
    mass, _, _ = grid_quadrature(lambda x: kde_eval(kde, x), ((-5.0, 9.0),), 4001)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_bandwidth_select_positive_and_floored():
    assert bandwidth_select(np.array([1.0, 1.0, 1.0])) > 0
    assert bandwidth_select(np.random.default_rng(0).normal(size=50)) > 0.05


def test_systematic_resample_is_deterministic():
    vals = np.array([3.0, 1.0, 2.0, 5.0])
    w = np.array([0.1, 0.4, 0.4, 0.1])
    a = _systematic_resample(vals, w, 8)
    b = _systematic_resample(vals, w, 8)
    assert np.array_equal(a, b)
    assert len(a) == 8


def test_sample_potential_shapes_and_determinism():
    x = Atom("X", continuous_domain((-4, 4)), 3)
    pot = ParametricDensity(
        name="gaussian_iid", atoms=(x,), params={"mu": 0.5, "sigma2": 0.4}
    )
    s1 = sample_potential(pot, (x,), n_samples=200, seed=9)
    s2 = sample_potential(pot, (x,), n_samples=200, seed=9)
    assert s1.values["X"].shape == (200, 3)
    assert np.array_equal(s1.values["X"], s2.values["X"])
    assert abs(s1.values["X"].mean() - 0.5) < 0.2


def test_fit_kde_mixture_two_modes():
    x = Atom("X", continuous_domain((-4, 4)), 2)
    pot = ParametricDensity(
        name="gaussian_two_mode_iid",
        atoms=(x,),
        params={"mu1": -1.5, "sigma2_1": 0.05, "mu2": 1.5, "sigma2_2": 0.05},
    )
    samples = sample_potential(pot, (x,), n_samples=1500, seed=2)
    mix, report = fit_kde_mixture(samples, k_max=3, seed=2)
    assert mix.k >= 2
    means = sorted(k.mean() for k in mix.kdes["X"])
    assert means[0] == pytest.approx(-1.5, abs=0.3)
    assert means[-1] == pytest.approx(1.5, abs=0.3)
    trace = np.asarray(report.log_likelihood_trace)
    assert np.all(np.diff(trace) >= -1e-6 * np.abs(trace[:-1]))


def test_fit_kde_mixture_requires_continuous_atom():
    a = Atom("A", binary_domain(), 2)
    samples = SampleSet(
        atoms=(a,),
        values={"A": np.zeros((10, 2))},
        seed=0,
        acceptance_rate=1.0,
        ess_estimate=10.0,
    )
    with pytest.raises(ModelError):
        fit_kde_mixture(samples)


def test_kde_mixture_density_normalizes():
    kdes = {
        "X": [
            Kde(centers=np.array([-1.0]), bandwidth=0.3),
            Kde(centers=np.array([1.0]), bandwidth=0.4),
        ]
    }
    mix = KdeMixture(
        weights=np.array([0.3, 0.7]),
        kdes=kdes,
        populations={"X": 1},
        atoms=("X",),
    )

    def density(v):
        return math.exp(mix.log_eval_valuation([(v,)]))

    mass, _, _ = grid_quadrature(density, ((-8.0, 8.0),), 4001)
    assert mass == pytest.approx(1.0, abs=1e-6)
