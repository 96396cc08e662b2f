import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixlift.model import (
    Atom,
    AtomDomain,
    HistTable,
    ModelError,
    Parfactor,
    ParametricDensity,
    Rhm,
    Valuation,
    all_histogram_counts,
    binary_domain,
    categorical_domain,
    continuous_domain,
    eval_potential,
    histogram_of,
    log_multinomial_coefficient,
    multinomial_coefficient,
)


def test_domain_kinds():
    assert binary_domain().d == 2
    assert categorical_domain(4).d == 4
    assert not continuous_domain((0.0, 1.0)).is_discrete
    with pytest.raises(ModelError):
        AtomDomain("categorical", d=1)
    with pytest.raises(ModelError):
        AtomDomain("nope")


def test_atom_population_positive():
    with pytest.raises(ModelError):
        Atom("A", binary_domain(), 0)


@given(st.integers(min_value=1, max_value=8), st.integers(min_value=2, max_value=4))
@settings(deadline=None, max_examples=30)
def test_multinomial_coefficients_sum_to_power(n, d):
    total = sum(multinomial_coefficient(c) for c in all_histogram_counts(n, d))
    assert total == d**n


@given(st.integers(min_value=1, max_value=10), st.integers(min_value=2, max_value=4))
@settings(deadline=None, max_examples=30)
def test_histogram_count_cardinality(n, d):
    ks = list(all_histogram_counts(n, d))
    assert len(ks) == math.comb(n + d - 1, d - 1)
    assert len(set(ks)) == len(ks)
    assert all(sum(c) == n for c in ks)


@given(st.lists(st.integers(min_value=0, max_value=2), min_size=1, max_size=12))
@settings(deadline=None, max_examples=50)
def test_histogram_is_permutation_invariant(vals):
    atom = Atom("A", categorical_domain(3), len(vals))
    v1 = Valuation({"A": tuple(vals)})
    v2 = Valuation({"A": tuple(reversed(vals))})
    assert histogram_of(v1, atom).counts == histogram_of(v2, atom).counts


def test_log_multinomial_matches_exact():
    for counts in all_histogram_counts(9, 3):
        assert math.isclose(
            log_multinomial_coefficient(counts),
            math.log(multinomial_coefficient(counts)),
            rel_tol=1e-12,
        )


def test_hist_table_lookup_and_missing():
    atom = Atom("A", binary_domain(), 3)
    table = HistTable(atoms=(atom,), values={((2, 1),): 0.5, ((3, 0),): 0.25})
    assert table.lookup(((2, 1),)) == 0.5
    assert table.log_lookup(((3, 0),)) == pytest.approx(math.log(0.25))
    assert table.lookup(((0, 3),)) == 0.0


def test_parametric_density_forms():
    x = Atom("X", continuous_domain((-5, 5)), 1)
    y = Atom("Y", continuous_domain((-5, 5)), 1)
    pair = ParametricDensity(
        name="linear_gaussian_pair", atoms=(x, y), params={"mu": 0.0, "sigma2": 1.0}
    )
    v = Valuation({"X": (0.3,), "Y": (0.3,)})
    expected = math.exp(-0.0) / math.sqrt(2 * math.pi)
    assert eval_potential(pair, v) == pytest.approx(expected)
    with pytest.raises(ModelError):
        ParametricDensity(name="unknown_form", atoms=(x,), params={})


def test_rhm_requires_declared_atoms():
    a = Atom("A", binary_domain(), 2)
    b = Atom("B", binary_domain(), 2)
    table = HistTable(atoms=(b,), values={((2, 0),): 1.0})
    g = Parfactor(params=(), atoms=(b,), potential=table)
    with pytest.raises(ModelError):
        Rhm(atoms={"A": a}, parfactors=[g])
    Rhm(atoms={"A": a, "B": b}, parfactors=[g])
