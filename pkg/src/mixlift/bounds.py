"""Analytic error bounds and the extendibility feasibility oracle.

A distribution over n exchangeable rvs that arises as the marginal of
one over a larger exchangeable population admits a mixture-of-iid
approximation with bounded total variation; these calculators evaluate
the bound formulas, and a linear-program feasibility check decides
whether a given binary table is extendible to a declared population via
its hypergeometric (urn) characterization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mixlift.discrete import normalize_hist_table
from mixlift.model import HistTable, ModelError

_LP_TOL = 1e-8


@dataclass(frozen=True)
class ExtendibilitySpec:
    """Declared extension sizes and value counts per atom."""

    n_bar: int
    d: int | None = None  # None marks a continuous atom
    m_bar: int | None = None
    d_y: int | None = None  # None marks a continuous second atom

    @property
    def continuous(self) -> bool:
        return self.d is None


@dataclass
class BoundReport:
    """Per-parfactor bounds and the model-level aggregate."""

    per_parfactor: list[float]
    aggregate: float
    branch: str
    vacuous: bool = False
    normalized: bool = True
    notes: list[str] = field(default_factory=list)


def lemma1_bound(n: int, spec: ExtendibilitySpec) -> float:
    """Single-atom variational error bound: 2dn/n_bar for d-valued
    discrete rvs, n(n-1)/n_bar for continuous rvs."""
    if spec.n_bar < n:
        raise ModelError("extension size must be at least the population")
    if spec.continuous:
        return n * (n - 1) / spec.n_bar
    return 2.0 * spec.d * n / spec.n_bar


def lemma3_bound(n: int, m: int, spec: ExtendibilitySpec) -> float:
    """Two-atom bound: the sum of the matching single-atom branches."""
    if spec.m_bar is None:
        raise ModelError("two-atom bound needs m_bar")
    first = lemma1_bound(n, ExtendibilitySpec(n_bar=spec.n_bar, d=spec.d))
    second = lemma1_bound(m, ExtendibilitySpec(n_bar=spec.m_bar, d=spec.d_y))
    return first + second


def theorem4_bound(epsilons, z: float | None = None) -> BoundReport:
    """Model-level bound: the sum of per-parfactor errors, divided by the
    joint normalizer when one is supplied."""
    eps = [float(e) for e in epsilons]
    if any(e < 0 for e in eps):
        raise ModelError("per-parfactor errors must be nonnegative")
    total = sum(eps)
    notes = []
    if z is not None:
        if z <= 0:
            raise ModelError("normalizer must be positive")
        total = total / z
    else:
        notes.append("unnormalized: no joint normalizer supplied")
    return BoundReport(
        per_parfactor=eps,
        aggregate=total,
        branch="theorem4",
        vacuous=total > 1.0,
        normalized=z is not None,
        notes=notes,
    )


def _phase1_simplex(A: np.ndarray, b: np.ndarray, tol: float = _LP_TOL):
    """Feasibility of {x >= 0 : A x = b} by a phase-1 dense simplex.

    Bland's rule guards against cycling.  Returns (feasible, x).
    """
    A = np.asarray(A, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # Tableau with artificial variables; objective = sum of artificials.
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(n, n + m))

    for _ in range(20000):
        # Bland: entering = lowest-index column with negative reduced cost.
        enter = -1
        for j in range(n + m):
            if T[m, j] < -tol:
                enter = j
                break
        if enter == -1:
            break
        ratios = [
            (T[i, -1] / T[i, enter], basis[i], i)
            for i in range(m)
            if T[i, enter] > tol
        ]
        if not ratios:
            break  # unbounded in phase 1 cannot happen with x >= 0
        _, _, leave = min(ratios)
        piv = T[leave, enter]
        T[leave] /= piv
        for i in range(m + 1):
            if i != leave and abs(T[i, enter]) > 0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter

    infeasibility = -T[m, -1]
    x = np.zeros(n)
    for i, bi in enumerate(basis):
        if bi < n:
            x[bi] = T[i, -1]
    return infeasibility <= tol * max(1.0, abs(b).sum()), x


@dataclass
class ExtendibilityResult:
    feasible: bool
    n_bar: int
    witness: np.ndarray | None
    residual: float


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def hypergeometric_marginal_matrix(n: int, n_bar: int) -> np.ndarray:
    """M[h, H] = P(h successes in n draws without replacement | H of
    n_bar urn items are successes)."""
    M = np.zeros((n + 1, n_bar + 1))
    for H in range(n_bar + 1):
        for h in range(max(0, n - (n_bar - H)), min(n, H) + 1):
            M[h, H] = math.exp(
                _log_comb(H, h) + _log_comb(n_bar - H, n - h) - _log_comb(n_bar, n)
            )
    return M


def check_extendibility(
    table, n_bar: int, values_are_histogram_probs: bool = False
) -> ExtendibilityResult:
    """LP feasibility: does a distribution over extended success counts
    exist whose hypergeometric marginalization equals the table?

    The table must be over a single binary atom with n <= 20 and
    n_bar <= 200; a witness distribution is returned when feasible.
    """
    if isinstance(table, HistTable):
        if len(table.atoms) != 1 or table.atoms[0].domain.d != 2:
            raise ModelError("extendibility check supports one binary atom")
        n = table.atoms[0].population
        probs = normalize_hist_table(
            table, weight_by_counts=not values_are_histogram_probs
        )
        q = np.zeros(n + 1)
        for key, v in probs.items():
            q[key[0][1]] = v
    else:
        q = np.asarray(table, dtype=float)
        q = q / q.sum()
        n = len(q) - 1
    if n > 20 or n_bar > 200:
        raise ModelError("extendibility check caps: n <= 20, n_bar <= 200")
    if n_bar < n:
        raise ModelError("n_bar must be at least n")

    M = hypergeometric_marginal_matrix(n, n_bar)
    feasible, x = _phase1_simplex(M, q)
    residual = float(np.abs(M @ x - q).max())
    if feasible and residual > 1e-6:
        feasible = False
    return ExtendibilityResult(
        feasible=bool(feasible),
        n_bar=int(n_bar),
        witness=x if feasible else None,
        residual=residual,
    )
