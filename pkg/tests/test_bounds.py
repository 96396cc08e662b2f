import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixlift.bounds import (
    ExtendibilitySpec,
    check_extendibility,
    hypergeometric_marginal_matrix,
    lemma1_bound,
    lemma3_bound,
    theorem4_bound,
)
from mixlift.model import Atom, HistTable, ModelError, binary_domain


def test_single_atom_bound_values():
    assert lemma1_bound(10, ExtendibilitySpec(n_bar=100, d=2)) == pytest.approx(0.4)
    assert lemma1_bound(10, ExtendibilitySpec(n_bar=100)) == pytest.approx(0.9)
    with pytest.raises(ModelError):
        lemma1_bound(10, ExtendibilitySpec(n_bar=5, d=2))


@given(
    st.integers(min_value=1, max_value=20),
    st.integers(min_value=2, max_value=5),
    st.integers(min_value=100, max_value=1000),
)
@settings(deadline=None, max_examples=40)
def test_single_atom_bound_shrinks_with_extension(n, d, n_bar):
    loose = lemma1_bound(n, ExtendibilitySpec(n_bar=n_bar, d=d))
    tight = lemma1_bound(n, ExtendibilitySpec(n_bar=10 * n_bar, d=d))
    assert tight == pytest.approx(loose / 10)
    assert loose >= 0


def test_two_atom_bound_is_sum_of_branches():
    spec = ExtendibilitySpec(n_bar=100, d=2, m_bar=50, d_y=None)
    got = lemma3_bound(4, 3, spec)
    assert got == pytest.approx(2 * 2 * 4 / 100 + 3 * 2 / 50)
    with pytest.raises(ModelError):
        lemma3_bound(4, 3, ExtendibilitySpec(n_bar=100, d=2))


def test_model_level_aggregate():
    rep = theorem4_bound([0.1, 0.2, 0.05], z=0.5)
    assert rep.aggregate == pytest.approx(0.7)
    assert not rep.vacuous
    assert rep.normalized
    rep2 = theorem4_bound([0.9, 0.9])
    assert rep2.vacuous
    assert not rep2.normalized
    with pytest.raises(ModelError):
        theorem4_bound([-0.1])
    with pytest.raises(ModelError):
        theorem4_bound([0.1], z=0.0)


@given(st.integers(min_value=1, max_value=10), st.integers(min_value=10, max_value=60))
@settings(deadline=None, max_examples=30)
def test_hypergeometric_columns_are_distributions(n, n_bar):
    M = hypergeometric_marginal_matrix(n, n_bar)
    assert M.shape == (n + 1, n_bar + 1)
    np.testing.assert_allclose(M.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(M >= 0)


def test_binomial_marginal_is_extendible():
    n, n_bar, p = 8, 80, 0.3
    urn = np.array(
        [
            math.comb(n_bar, H) * p**H * (1 - p) ** (n_bar - H)
            for H in range(n_bar + 1)
        ]
    )
    urn /= urn.sum()
    q = hypergeometric_marginal_matrix(n, n_bar) @ urn
    res = check_extendibility(q, n_bar)
    assert res.feasible
    assert res.residual < 1e-8
    assert res.witness is not None
    assert res.witness.sum() == pytest.approx(1.0, abs=1e-6)


def test_point_mass_is_not_extendible_to_large_urn():
    q = np.zeros(11)
    q[5] = 1.0  # exactly 5 of 10 successes is impossible for n_bar >> n
    res = check_extendibility(q, 100)
    assert not res.feasible


def test_extendibility_from_hist_table():
    atom = Atom("A", binary_domain(), 4)
    # Uniform over ground valuations marginalizes any exchangeable urn.
    values = {((4 - h, h),): 1.0 for h in range(5)}
    table = HistTable(atoms=(atom,), values=values)
    res = check_extendibility(table, 40)
    assert res.feasible


def test_extendibility_input_caps():
    with pytest.raises(ModelError):
        check_extendibility(np.ones(30), 200)
    with pytest.raises(ModelError):
        check_extendibility(np.ones(5), 300)
    with pytest.raises(ModelError):
        check_extendibility(np.ones(5), 2)
