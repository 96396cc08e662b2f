import math

import numpy as np
import pytest

from mixlift.discrete import MixtureOfIidDiscrete
from mixlift.lve import (
    Observation,
    VariationalModel,
    collapse_mixture,
    eliminate_discrete_atom,
    latent_variable_elimination,
    multiply_discrete_potentials,
    update_obs,
)
from mixlift.model import Atom, ModelError, all_histogram_counts, binary_domain
from mixlift.oracle import (
    exact_eliminate_histogram,
    mixture_log_table,
    normalize_log_table,
)


def _atom(name, n):
    return Atom(name, binary_domain(), n)


def _pair_mix(rng, names, pops, k):
    w = rng.dirichlet(np.ones(k))
    params = {}
    for a in names:
        p1 = rng.uniform(0.15, 0.85, size=k)
        params[a] = np.stack([1 - p1, p1], axis=1)
    return MixtureOfIidDiscrete(
        weights=w,
        params=params,
        populations={a: pops[a] for a in names},
        atoms=tuple(names),
    )


def _chain_model(pops, k, seed):
    rng = np.random.default_rng(seed)
    names = sorted(pops)
    atoms = {n: _atom(n, pops[n]) for n in names}
    pots = [
        _pair_mix(rng, (names[i], names[i + 1]), pops, k)
        for i in range(len(names) - 1)
    ]
    return VariationalModel(atoms=atoms, potentials=pots)


def _exact_query_table(model, query):
    """Ground-truth normalized histogram marginal via per-key summation."""
    tables = []
    for pot in model.potentials:
        at = tuple(model.atoms[a] for a in pot.atoms)
        tables.append((at, mixture_log_table(pot, at)))
    for n in sorted(model.atoms):
        if n == query:
            continue
        touch = [t for t in tables if any(a.name == n for a in t[0])]
        rest = [t for t in tables if all(a.name != n for a in t[0])]
        tables = rest + [exact_eliminate_histogram(touch, model.atoms[n])]
    combined = {}
    for at, tbl in tables:
        assert tuple(a.name for a in at) == (query,)
        for key, lv in tbl.items():
            combined[key] = combined.get(key, 0.0) + lv
    return normalize_log_table(combined), combined


def _query_tv(model, query, mix):
    exact, _ = _exact_query_table(model, query)
    n = model.atoms[query].population
    probs = {c: mix.eval((c,)) for c in all_histogram_counts(n, 2)}
    total = sum(probs.values())
    return 0.5 * sum(
        abs(probs[c] / total - exact.get((c,), 0.0)) for c in probs
    )


def test_multiply_discrete_closure():
    rng = np.random.default_rng(0)
    pops = {"A": 20, "B": 20}
    p1 = _pair_mix(rng, ("A", "B"), pops, 2)
    p2 = _pair_mix(rng, ("A",), pops, 3)
    prod, log_scale = multiply_discrete_potentials(p1, p2)
    assert prod.k == 6
    assert set(prod.atoms) == {"A", "B"}
    assert prod.weights.sum() == pytest.approx(1.0)
    assert math.isfinite(log_scale)


def test_single_potential_query_is_normalized():
    rng = np.random.default_rng(1)
    pops = {"A": 12}
    pot = _pair_mix(rng, ("A",), pops, 2)
    model = VariationalModel(atoms={"A": _atom("A", 12)}, potentials=[pot])
    mix, log_mass = latent_variable_elimination(model, ["A"])
    total = sum(mix.eval((c,)) for c in all_histogram_counts(12, 2))
    assert total == pytest.approx(1.0, abs=1e-9)
    assert log_mass == pytest.approx(0.0, abs=1e-9)


def test_chain_small_population_matches_enumeration():
    pops = {"A0": 5, "A1": 5, "A2": 5}
    model = _chain_model(pops, k=2, seed=7)
    mix, _ = latent_variable_elimination(model, ["A2"])
    assert _query_tv(model, "A2", mix) <= 0.1


def test_chain_large_population_accuracy():
    pops = {"A0": 40, "A1": 35, "A2": 45, "A3": 40}
    model = _chain_model(pops, k=2, seed=3)
    mix, _ = latent_variable_elimination(model, ["A3"])
    assert _query_tv(model, "A3", mix) <= 0.03


def test_mass_conservation_small_population():
    # Small populations take the exact finite-sum path, so the carried
    # log mass must match per-key summation almost exactly.
    pops = {"A0": 5, "A1": 6, "A2": 5}
    model = _chain_model(pops, k=2, seed=11)
    _, log_mass = latent_variable_elimination(model, ["A2"])
    _, combined = _exact_query_table(model, "A2")
    exact_mass = math.log(sum(math.exp(v) for v in combined.values()))
    assert log_mass == pytest.approx(exact_mass, abs=1e-6)


def test_elimination_order_insensitivity():
    rng = np.random.default_rng(5)
    pops = {"A": 30, "B": 35, "C": 30}
    atoms = {n: _atom(n, pops[n]) for n in pops}
    pab = _pair_mix(rng, ("A", "B"), pops, 2)
    pbc = _pair_mix(rng, ("B", "C"), pops, 2)

    # A first, then B.
    m1, s1 = eliminate_discrete_atom([pab], "A")
    m1, s1b = eliminate_discrete_atom([m1, pbc], "B")
    # B first (combines both potentials), then A.
    m2, s2 = eliminate_discrete_atom([pab, pbc], "B")
    m2, s2b = eliminate_discrete_atom([m2], "A")

    keys = list(all_histogram_counts(pops["C"], 2))
    q1 = np.array([m1.eval((c,)) for c in keys])
    q2 = np.array([m2.eval((c,)) for c in keys])
    tv = 0.5 * np.abs(q1 / q1.sum() - q2 / q2.sum()).sum()
    assert tv <= 0.05
    assert s1 + s1b == pytest.approx(s2 + s2b, rel=0.02)


def test_inner_iterations_are_population_independent():
    counts = []
    for scale in (1, 100):
        pops = {"A0": 30 * scale, "A1": 40 * scale, "A2": 35 * scale}
        model = _chain_model(pops, k=3, seed=2)
        counter = {"inner_iterations": 0}
        latent_variable_elimination(model, ["A2"], counter=counter)
        counts.append(counter["inner_iterations"])
    assert counts[0] == counts[1]


def test_collapse_mixture_preserves_distribution():
    rng = np.random.default_rng(9)
    n = 30
    p1 = rng.uniform(0.3, 0.7, size=16)
    big = MixtureOfIidDiscrete(
        weights=rng.dirichlet(np.ones(16)),
        params={"A": np.stack([1 - p1, p1], axis=1)},
        populations={"A": n},
        atoms=("A",),
    )
    small = collapse_mixture(big, 4)
    assert small.k <= 4
    keys = list(all_histogram_counts(n, 2))
    tv = 0.5 * sum(abs(big.eval((c,)) - small.eval((c,))) for c in keys)
    assert tv <= 0.05


def test_update_obs_shrinks_population_and_reweights():
    rng = np.random.default_rng(4)
    pops = {"A": 20}
    pot = _pair_mix(rng, ("A",), pops, 2)
    model = VariationalModel(atoms={"A": _atom("A", 20)}, potentials=[pot])
    out = update_obs(model, [Observation(atom="A", counts=(3, 5))])
    new_pot = out.potentials[0]
    assert new_pot.populations["A"] == 12
    assert new_pot.weights.sum() == pytest.approx(1.0)
    assert out.log_masses[0] < 0.0
    # Components with more mass near the observed frequency gain weight.
    obs_freq = 5 / 8
    dist = np.abs(pot.params["A"][:, 1] - obs_freq)
    closer = int(np.argmin(dist))
    assert new_pot.weights[closer] >= pot.weights[closer]


def test_observation_exceeding_population_fails():
    rng = np.random.default_rng(6)
    pops = {"A": 4}
    pot = _pair_mix(rng, ("A",), pops, 1)
    model = VariationalModel(atoms={"A": _atom("A", 4)}, potentials=[pot])
    with pytest.raises(ModelError):
        update_obs(model, [Observation(atom="A", counts=(3, 3))])


def test_query_atom_must_exist():
    rng = np.random.default_rng(8)
    pops = {"A": 5}
    pot = _pair_mix(rng, ("A",), pops, 1)
    model = VariationalModel(atoms={"A": _atom("A", 5)}, potentials=[pot])
    with pytest.raises(ModelError):
        latent_variable_elimination(model, ["Z"])


def test_eliminate_requires_atom_in_every_potential():
    rng = np.random.default_rng(10)
    pops = {"A": 5, "B": 5}
    pa = _pair_mix(rng, ("A",), pops, 1)
    pb = _pair_mix(rng, ("B",), pops, 1)
    with pytest.raises(ModelError):
        eliminate_discrete_atom([pa, pb], "A")
