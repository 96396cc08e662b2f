"""Exact and brute-force reference computations.

Everything here is desk-scale ground truth: full joint enumeration,
exact histogram-space elimination, and grid quadrature.  The pmf/pdf
arithmetic deliberately comes from scipy rather than the lifted path's
hand-rolled log-space kernels, so agreement between the two is evidence
rather than tautology.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from mixlift.continuous import KdeMixture
from mixlift.discrete import MixtureOfIidDiscrete
from mixlift.model import (
    Atom,
    HistKey,
    HistTable,
    ModelError,
    ParametricDensity,
    Rhm,
    all_histogram_counts,
    ground,
)

STATE_CAP = 2**20


@dataclass
class ExactTable:
    """Normalized joint over histogram tuples plus its normalizer."""

    atoms: tuple[Atom, ...]
    probs: dict[HistKey, float]
    z: float

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > 1e-9 or any(v < -1e-15 for v in self.probs.values()):
            raise ModelError("ExactTable must be normalized and nonnegative")


def _scipy_log_multinomial(counts, p):
    counts = np.asarray(counts)
    p = np.clip(np.asarray(p, dtype=float), 1e-300, 1.0)
    return float(
        gammaln(counts.sum() + 1)
        - gammaln(counts + 1).sum()
        + (counts * np.log(p)).sum()
    )


def mixture_log_table(mix, atoms: tuple[Atom, ...]) -> dict[HistKey, float]:
    """Dense histogram-space evaluation of a discrete mixture, computed
    with scipy's multinomial arithmetic."""
    pops = {a.name: mix.populations[a.name] for a in atoms}
    out = {}
    for key in itertools.product(
        *[list(all_histogram_counts(pops[a.name], a.domain.d)) for a in atoms]
    ):
        logs = np.log(np.clip(np.asarray(mix.weights, dtype=float), 1e-300, None))
        for counts, a in zip(key, atoms):
            params = mix.params[a.name] if isinstance(mix, MixtureOfIidDiscrete) else mix.cats[a.name]
            logs = logs + np.array(
                [_scipy_log_multinomial(counts, params[l]) for l in range(len(params))]
            )
        out[key] = float(logsumexp(logs))
    return out


def _potential_log_table(pot, atoms: tuple[Atom, ...], populations=None):
    if isinstance(pot, HistTable):
        return {k: pot.log_lookup(k) for k in pot.keys()}
    if isinstance(pot, (MixtureOfIidDiscrete, KdeMixture)):
        return mixture_log_table(pot, atoms)
    raise ModelError(f"cannot tabulate potential of type {type(pot).__name__}")


def enumerate_joint(model: Rhm, state_cap: int = STATE_CAP) -> ExactTable:
    """Exact normalized joint over histogram tuples.

    Uses the direct histogram-space product with multinomial coefficients
    when every potential is histogram-evaluable; falls back to full
    ground-valuation enumeration for parametric discrete potentials.
    """
    atoms = tuple(model.atoms[name] for name in sorted(model.atoms))
    for a in atoms:
        if not a.domain.is_discrete:
            raise ModelError("enumerate_joint requires all-discrete models")
    n_states = 1
    for a in atoms:
        n_states *= a.domain.d**a.population
    if n_states > state_cap:
        raise ModelError(f"ground state space {n_states} exceeds cap {state_cap}")

    histogram_only = all(
        isinstance(g.potential, (HistTable, MixtureOfIidDiscrete)) and not g.params
        for g in model.parfactors
    )
    log_probs: dict[HistKey, float] = {}
    if histogram_only:
        tables = []
        for g in model.parfactors:
            idx = [next(i for i, a in enumerate(atoms) if a.name == b.name) for b in g.atoms]
            tables.append((idx, _potential_log_table(g.potential, g.atoms)))
        for key in itertools.product(
            *[list(all_histogram_counts(a.population, a.domain.d)) for a in atoms]
        ):
            lp = sum(
                math.lgamma(a.population + 1)
                - sum(math.lgamma(c + 1) for c in counts)
                for a, counts in zip(atoms, key)
            )
            for idx, table in tables:
                sub = tuple(key[i] for i in idx)
                lp += table.get(sub, -math.inf)
            log_probs[key] = log_probs.get(key, -math.inf)
            log_probs[key] = float(np.logaddexp(log_probs[key], lp))
    else:
        from mixlift.model import Valuation, histogram_of, log_eval_potential

        spaces = [
            itertools.product(range(a.domain.d), repeat=a.population) for a in atoms
        ]
        for combo in itertools.product(*spaces):
            v = Valuation({a.name: vals for a, vals in zip(atoms, combo)})
            lp = 0.0
            for g in model.parfactors:
                factors = ground(g) if g.params else [None]
                for _ in factors:
                    lp += log_eval_potential(g.potential, v)
                    if lp == -math.inf:
                        break
            key = tuple(histogram_of(v, a).counts for a in atoms)
            log_probs[key] = float(
                np.logaddexp(log_probs.get(key, -math.inf), lp)
            )

    arr = np.array(list(log_probs.values()))
    log_z = float(logsumexp(arr))
    if log_z == -math.inf:
        raise ModelError("model has zero total mass")
    probs = {k: math.exp(v - log_z) for k, v in log_probs.items()}
    return ExactTable(atoms=atoms, probs=probs, z=math.exp(log_z))


def exact_marginal(table: ExactTable, query_atoms) -> dict:
    """Sum out every atom not in the query, exactly."""
    names = [a.name if isinstance(a, Atom) else a for a in query_atoms]
    idx = []
    for name in names:
        matches = [i for i, a in enumerate(table.atoms) if a.name == name]
        if not matches:
            raise ModelError(f"query atom {name!r} not present")
        idx.append(matches[0])
    if not idx:
        return {(): 1.0}
    out: dict = {}
    for key, p in table.probs.items():
        sub = tuple(key[i] for i in idx)
        out[sub] = out.get(sub, 0.0) + p
    return out


def exact_eliminate_histogram(
    tables: list[tuple[tuple[Atom, ...], dict[HistKey, float]]], atom: Atom
) -> tuple[tuple[Atom, ...], dict[HistKey, float]]:
    """Exact finite-sum elimination in histogram-distribution space.

    Inputs and output are (atom tuple, log-value table) pairs; the sum
    over the eliminated atom's histograms is taken directly, which is
    the pre-approximation form of the lifted elimination step.
    """
    out_atoms: list[Atom] = []
    for atoms, _ in tables:
        for a in atoms:
            if a.name != atom.name and all(b.name != a.name for b in out_atoms):
                out_atoms.append(a)
    out_atoms_t = tuple(out_atoms)
    y_space = list(all_histogram_counts(atom.population, atom.domain.d))
    out_spaces = [list(all_histogram_counts(a.population, a.domain.d)) for a in out_atoms_t]

    out: dict[HistKey, float] = {}
    for rest in itertools.product(*out_spaces):
        assign = {a.name: counts for a, counts in zip(out_atoms_t, rest)}
        logs = []
        for hy in y_space:
            assign[atom.name] = hy
            lp = 0.0
            for atoms, table in tables:
                sub = tuple(assign[a.name] for a in atoms)
                lp += table.get(sub, -math.inf)
                if lp == -math.inf:
                    break
            logs.append(lp)
        out[rest] = float(logsumexp(np.asarray(logs)))
    return out_atoms_t, out


def normalize_log_table(table: dict) -> dict:
    arr = np.array(list(table.values()))
    log_z = float(logsumexp(arr))
    return {k: math.exp(v - log_z) for k, v in table.items()}


def grid_quadrature(fn, bounds: tuple, n_points: int = 2001):
    """Trapezoidal integration of ``fn`` over a 1-d or 2-d box.

    Returns (mass, grids, values).  Caps: at most two continuous rvs.
    """
    if len(bounds) not in (1, 2):
        raise ModelError("grid_quadrature supports at most 2 continuous rvs")
    for lo, hi in bounds:
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ModelError("grid_quadrature requires bounded support")
    if len(bounds) == 1:
        (lo, hi), = bounds
        xs = np.linspace(lo, hi, n_points)
        vals = np.array([fn(x) for x in xs])
        mass = float(np.trapezoid(vals, xs))
        return mass, (xs,), vals
    (lx, hx), (ly, hy) = bounds
    nx = int(math.sqrt(n_points))
    xs = np.linspace(lx, hx, nx)
    ys = np.linspace(ly, hy, nx)
    vals = np.array([[fn(x, y) for y in ys] for x in xs])
    inner = np.trapezoid(vals, ys, axis=1)
    mass = float(np.trapezoid(inner, xs))
    return mass, (xs, ys), vals


def rhm_to_histogram_space(model: Rhm) -> list[tuple[tuple[Atom, ...], dict]]:
    """Convert an all-HistTable model into histogram-distribution space.

    Each atom's log multinomial coefficient is folded into exactly one of
    the tables mentioning it, so that the product of the returned tables
    over histogram tuples equals the (unnormalized) joint probability of
    histogram tuples.
    """
    assigned: set[str] = set()
    out = []
    for g in model.parfactors:
        if not isinstance(g.potential, HistTable):
            raise ModelError("rhm_to_histogram_space expects HistTable potentials")
        table = {}
        for key in itertools.product(
            *[list(all_histogram_counts(a.population, a.domain.d)) for a in g.atoms]
        ):
            lp = g.potential.log_lookup(key)
            for a, counts in zip(g.atoms, key):
                if a.name not in assigned:
                    lp += math.lgamma(a.population + 1) - sum(
                        math.lgamma(c + 1) for c in counts
                    )
            table[key] = lp
        # Coefficients folded per key above must be attributed once only.
        for a in g.atoms:
            assigned.add(a.name)
        out.append((g.atoms, table))
    return out


def binom_pmf_reference(h: int, n: int, p: float) -> float:
    """scipy-backed binomial pmf (oracle-side arithmetic)."""
    return float(stats.binom.pmf(h, n, p))


def normal_pdf_reference(x: float, mu: float, var: float) -> float:
    return float(stats.norm.pdf(x, loc=mu, scale=math.sqrt(var)))
