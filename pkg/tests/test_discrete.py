import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixlift.discrete import (
    MixtureOfIidDiscrete,
    fit_mixture_discrete,
    normalize_hist_table,
)
from mixlift.model import (
    Atom,
    HistTable,
    ModelError,
    all_histogram_counts,
    binary_domain,
    categorical_domain,
)


def _binary_atom(name, n):
    return Atom(name, binary_domain(), n)


def _mixture_table(atom, weights, ps):
    """Histogram-probability table of a known binomial mixture."""
    mix = MixtureOfIidDiscrete(
        weights=np.asarray(weights),
        params={atom.name: np.stack([[1 - p, p] for p in ps])},
        populations={atom.name: atom.population},
        atoms=(atom.name,),
    )
    values = {
        (c,): mix.eval((c,)) for c in all_histogram_counts(atom.population, 2)
    }
    return HistTable(atoms=(atom,), values=values), mix


def test_mixture_validation():
    with pytest.raises(ModelError):
        MixtureOfIidDiscrete(
            weights=np.array([0.7, 0.7]),
            params={"A": np.array([[0.5, 0.5], [0.2, 0.8]])},
            populations={"A": 4},
            atoms=("A",),
        )
    with pytest.raises(ModelError):
        MixtureOfIidDiscrete(
            weights=np.array([1.0]),
            params={"A": np.array([[0.5, 0.6]])},
            populations={"A": 4},
            atoms=("A",),
        )


def test_normalize_hist_table_weighting():
    atom = _binary_atom("A", 2)
    # Flat per-valuation potential: histogram probs follow the counts.
    table = HistTable(atoms=(atom,), values={((2, 0),): 1.0, ((1, 1),): 1.0, ((0, 2),): 1.0})
    probs = normalize_hist_table(table, weight_by_counts=True)
    assert probs[((1, 1),)] == pytest.approx(0.5)
    flat = normalize_hist_table(table, weight_by_counts=False)
    assert flat[((1, 1),)] == pytest.approx(1 / 3)


def test_fit_recovers_single_binomial():
    atom = _binary_atom("A", 30)
    table, _ = _mixture_table(atom, [1.0], [0.35])
    mix, report = fit_mixture_discrete(table, tol=1e-4, weight_by_counts=False)
    assert report.k_used == 1
    assert report.achieved_tv < 1e-4
    assert mix.params["A"][0][1] == pytest.approx(0.35, abs=1e-3)


def test_fit_recovers_two_component_mixture():
    atom = _binary_atom("A", 40)
    table, truth = _mixture_table(atom, [0.6, 0.4], [0.2, 0.75])
    mix, report = fit_mixture_discrete(table, tol=1e-4, k_max=4, weight_by_counts=False)
    assert report.achieved_tv < 1e-3
    keys = list(all_histogram_counts(40, 2))
    tv = 0.5 * sum(abs(mix.eval((c,)) - truth.eval((c,))) for c in keys)
    assert tv < 1e-3


def test_em_log_likelihood_is_monotone():
    atom = _binary_atom("A", 25)
    rng = np.random.default_rng(3)
    values = {
        (c,): float(rng.uniform(0.1, 1.0)) for c in all_histogram_counts(25, 2)
    }
    table = HistTable(atoms=(atom,), values=values)
    _, report = fit_mixture_discrete(table, tol=1e-3, k_max=3)
    trace = report.log_likelihood_trace
    assert len(trace) >= 1
    diffs = np.diff(np.asarray(trace))
    assert np.all(diffs >= -1e-9)


def test_tv_by_k_never_worsens():
    atom = _binary_atom("A", 30)
    table, _ = _mixture_table(atom, [0.5, 0.3, 0.2], [0.15, 0.5, 0.85])
    _, report = fit_mixture_discrete(table, tol=1e-6, k_max=5, weight_by_counts=False)
    ks = sorted(report.tv_by_k)
    tvs = [report.tv_by_k[k] for k in ks]
    assert all(b <= a + 1e-12 for a, b in zip(tvs, tvs[1:]))


def test_fit_is_deterministic():
    atom = _binary_atom("A", 20)
    rng = np.random.default_rng(11)
    values = {
        (c,): float(rng.uniform(0.2, 1.0)) for c in all_histogram_counts(20, 2)
    }
    table = HistTable(atoms=(atom,), values=values)
    m1, r1 = fit_mixture_discrete(table, tol=1e-4, k_max=3, seed=5)
    m2, r2 = fit_mixture_discrete(table, tol=1e-4, k_max=3, seed=5)
    assert np.array_equal(m1.weights, m2.weights)
    assert np.array_equal(m1.params["A"], m2.params["A"])
    assert r1.achieved_tv == r2.achieved_tv


def test_fit_categorical_atom():
    atom = Atom("A", categorical_domain(3), 12)
    truth = MixtureOfIidDiscrete(
        weights=np.array([1.0]),
        params={"A": np.array([[0.2, 0.5, 0.3]])},
        populations={"A": 12},
        atoms=("A",),
    )
    values = {(c,): truth.eval((c,)) for c in all_histogram_counts(12, 3)}
    table = HistTable(atoms=(atom,), values=values)
    mix, report = fit_mixture_discrete(table, tol=1e-4, weight_by_counts=False)
    assert report.achieved_tv < 1e-3


def test_fit_rejects_bad_inputs():
    atom = _binary_atom("A", 4)
    table = HistTable(atoms=(atom,), values={((4, 0),): 1.0})
    with pytest.raises(ModelError):
        fit_mixture_discrete(table, tol=0.0)
    with pytest.raises(ModelError):
        fit_mixture_discrete(HistTable(atoms=(atom,), values={}))


@given(
    st.integers(min_value=2, max_value=12),
    st.floats(min_value=0.05, max_value=0.95),
    st.floats(min_value=0.05, max_value=0.95),
)
@settings(deadline=None, max_examples=20)
def test_mixture_pmf_sums_to_one(n, p1, p2):
    mix = MixtureOfIidDiscrete(
        weights=np.array([0.5, 0.5]),
        params={"A": np.array([[1 - p1, p1], [1 - p2, p2]])},
        populations={"A": n},
        atoms=("A",),
    )
    total = sum(mix.eval((c,)) for c in all_histogram_counts(n, 2))
    assert total == pytest.approx(1.0, abs=1e-9)
