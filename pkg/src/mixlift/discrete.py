"""Learning variational forms of discrete potentials.

A potential over histogram tuples is approximated by a mixture of
products of binomial/multinomial pmfs, one categorical parameter vector
per component and atom.  Fitting runs an incremental EM: likelihood is
maximized at fixed component count, total variation against the
normalized table decides acceptance and stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mixlift.model import (
    HistKey,
    HistTable,
    ModelError,
    log_multinomial_coefficient,
)

_P_CLAMP = 1e-9
_WEIGHT_PRUNE = 1e-6
_EM_MAX_ITERS = 500
_EM_REL_TOL = 1e-8


def binomial_pdf(h: int, n: int, p: float) -> float:
    """Binomial pmf f_B(h; n, p)."""
    if not 0 <= h <= n:
        raise ModelError(f"count {h} outside 0..{n}")
    if not 0.0 <= p <= 1.0:
        raise ModelError(f"parameter {p} outside [0, 1]")
    return multinomial_pdf((n - h, h), n, (1.0 - p, p))


def multinomial_pdf(h, n: int, p) -> float:
    """Multinomial pmf; with d = 2 it equals the binomial at h = counts[1]."""
    counts = tuple(getattr(h, "counts", h))
    probs = np.asarray(p, dtype=float)
    if len(counts) != len(probs):
        raise ModelError("histogram and parameter vector lengths differ")
    if any(c < 0 for c in counts) or sum(counts) != n:
        raise ModelError(f"counts {counts} are not a histogram of {n} items")
    if np.any(probs < 0) or np.any(probs > 1) or abs(probs.sum() - 1.0) > 1e-9:
        raise ModelError("parameter vector is not a probability vector")
    log_p = 0.0
    for c, q in zip(counts, probs):
        if c == 0:
            continue
        if q == 0.0:
            return 0.0
        log_p += c * math.log(q)
    return math.exp(log_multinomial_coefficient(counts) + log_p)


def total_variation(p, q) -> float:
    """Half the L1 distance between two finite distributions.

    Accepts aligned arrays or dicts over the same outcome space; rejects
    unnormalized inputs (normalizing is the caller's job).
    """
    if isinstance(p, dict) or isinstance(q, dict):
        if set(p) != set(q):
            raise ModelError("distributions have mismatched supports")
        keys = sorted(p)
        pa = np.array([p[k] for k in keys], dtype=float)
        qa = np.array([q[k] for k in keys], dtype=float)
    else:
        pa = np.asarray(p, dtype=float)
        qa = np.asarray(q, dtype=float)
        if pa.shape != qa.shape:
            raise ModelError("distributions have mismatched supports")
    for arr in (pa, qa):
        if abs(arr.sum() - 1.0) > 1e-6 or np.any(arr < -1e-12):
            raise ModelError("total_variation requires normalized inputs")
    return float(0.5 * np.abs(pa - qa).sum())


def normalize_hist_table(
    table: HistTable | dict, weight_by_counts: bool = False
) -> dict[HistKey, float]:
    """Scale table values to sum to 1.

    With ``weight_by_counts`` each key is first multiplied by its
    multinomial coefficients, converting a potential over grouped ground
    valuations into a probability over histogram tuples (the space where
    the binomial/multinomial pmfs live).
    """
    if isinstance(table, HistTable):
        items = {k: table.lookup(k) for k in table.keys()}
    else:
        items = dict(table)
    if weight_by_counts:
        logs = {}
        for key, v in items.items():
            if v <= 0:
                logs[key] = -math.inf
                continue
            lc = sum(log_multinomial_coefficient(c) for c in key)
            logs[key] = math.log(v) + lc
        m = max(logs.values())
        if m == -math.inf:
            raise ModelError("cannot normalize a zero-mass table")
        items = {k: math.exp(lv - m) for k, lv in logs.items()}
    total = sum(items.values())
    if total <= 0:
        raise ModelError("cannot normalize a zero-mass table")
    return {k: v / total for k, v in items.items()}


@dataclass(frozen=True)
class MixtureOfIidDiscrete:
    """Mixture of products of iid categorical populations.

    ``params[a]`` has one probability vector per component (shape k x d);
    ``populations[a]`` is the atom's (effective) population.
    """

    weights: np.ndarray
    params: dict[str, np.ndarray]
    populations: dict[str, int]
    atoms: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        params = {a: np.asarray(p, dtype=float) for a, p in self.params.items()}
        object.__setattr__(self, "params", params)
        self.validate()

    @property
    def k(self) -> int:
        return len(self.weights)

    def validate(self):
        if self.k < 1:
            raise ModelError("mixture needs at least one component")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < -1e-12):
            raise ModelError("mixture weights must be a probability vector")
        for a in self.atoms:
            p = self.params[a]
            if p.shape[0] != self.k:
                raise ModelError(f"component count mismatch for atom {a!r}")
            if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
                raise ModelError(f"parameters for atom {a!r} outside [0, 1]")
            if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
                raise ModelError(f"parameters for atom {a!r} do not sum to 1")

    def component_log_pmf(self, key: HistKey) -> np.ndarray:
        """log prod_atoms f_M(h_A; n_A, p_{A,l}) for every component l."""
        out = np.zeros(self.k)
        for counts, a in zip(key, self.atoms):
            counts_arr = np.asarray(counts, dtype=float)
            lc = log_multinomial_coefficient(tuple(counts))
            with np.errstate(divide="ignore"):
                logp = np.log(self.params[a])
            term = counts_arr[None, :] * logp
            term = np.where(counts_arr[None, :] == 0, 0.0, term)
            out += lc + term.sum(axis=1)
        return out

    def log_eval(self, key: HistKey) -> float:
        comp = self.component_log_pmf(key) + _safe_log(self.weights)
        return float(_logsumexp(comp))

    def eval(self, key: HistKey) -> float:
        return math.exp(self.log_eval(key))

    def table(self, keys) -> dict[HistKey, float]:
        return {k: self.eval(k) for k in keys}


@dataclass
class FitReport:
    """Diagnostics of one incremental fit."""

    achieved_tv: float
    k_used: int
    em_iterations: int
    log_likelihood_trace: list[float]
    tv_by_k: dict[int, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if axis is not None else float(out.ravel()[0])


def _em_fixed_k(target, count_mats, pops, weights, params):
    """EM at fixed component count on weighted histogram data.

    ``target`` is the normalized table (length nkeys); ``count_mats[a]``
    holds per-key count vectors.  Returns updated (weights, params,
    trace).
    """
    atoms = list(count_mats)
    log_coeff = {
        a: np.array(
            [log_multinomial_coefficient(tuple(row.astype(int))) for row in count_mats[a]]
        )
        for a in atoms
    }
    trace = []
    prev_ll = -np.inf
    for _ in range(_EM_MAX_ITERS):
        # E-step: responsibilities per key and component.
        log_comp = np.tile(_safe_log(weights)[None, :], (len(target), 1))
        for a in atoms:
            logp = _safe_log(params[a])  # (k, d)
            log_comp += log_coeff[a][:, None] + count_mats[a] @ logp.T
        log_norm = _logsumexp(log_comp, axis=1)
        ll = float(np.sum(target * log_norm[:, 0]))
        trace.append(ll)
        resp = np.exp(log_comp - log_norm)  # (nkeys, k)
        # M-step on table mass.
        mass = target @ resp  # (k,)
        mass = np.maximum(mass, 1e-300)
        weights = mass / mass.sum()
        new_params = {}
        for a in atoms:
            num = (target[:, None] * resp).T @ count_mats[a]  # (k, d)
            p = num / (pops[a] * mass[:, None])
            p = np.clip(p, _P_CLAMP, 1.0 - _P_CLAMP)
            p /= p.sum(axis=1, keepdims=True)
            new_params[a] = p
        params = new_params
        if ll - prev_ll < _EM_REL_TOL * max(1.0, abs(ll)) and len(trace) > 1:
            break
        prev_ll = ll
    return weights, params, trace


def _mixture_probs(weights, params, count_mats, pops):
    log_comp = np.tile(_safe_log(weights)[None, :], (len(next(iter(count_mats.values()))), 1))
    for a, mat in count_mats.items():
        logp = _safe_log(params[a])
        log_coeff = np.array(
            [log_multinomial_coefficient(tuple(row.astype(int))) for row in mat]
        )
        log_comp += log_coeff[:, None] + mat @ logp.T
    return np.exp(_logsumexp(log_comp, axis=1))[:, 0]


def _polish_tv(target, count_mats, pops, weights, params):
    """Derivative-free local descent on total variation.

    EM maximizes weighted likelihood; the acceptance metric is TV, so a
    short simplex-search polish from the EM solution closes the gap
    between the two optima.  Returns (tv, weights, params) or None when
    the parameter dimension is too large to polish cheaply.
    """
    from scipy.optimize import minimize

    atoms = list(count_mats)
    k = len(weights)
    dims = k + k * sum(params[a].shape[1] for a in atoms)
    if dims > 40:
        return None

    def unpack(x):
        w = np.exp(x[:k] - x[:k].max())
        w /= w.sum()
        out = {}
        pos = k
        for a in atoms:
            d = params[a].shape[1]
            block = x[pos : pos + k * d].reshape(k, d)
            pos += k * d
            p = np.exp(block - block.max(axis=1, keepdims=True))
            out[a] = p / p.sum(axis=1, keepdims=True)
        return w, out

    def objective(x):
        w, p = unpack(x)
        fitted = _mixture_probs(w, p, count_mats, pops)
        return 0.5 * (np.abs(target - fitted).sum() + max(0.0, 1.0 - fitted.sum()))

    x0 = np.concatenate(
        [_safe_log(np.maximum(weights, 1e-12))]
        + [_safe_log(np.clip(params[a], 1e-12, 1.0)).ravel() for a in atoms]
    )
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"maxiter": 5000, "xatol": 1e-10, "fatol": 1e-13},
    )
    w, p = unpack(res.x)
    return float(res.fun), w, p


def fit_mixture_discrete(
    table: HistTable,
    tol: float = 1e-6,
    k_max: int | None = None,
    seed: int = 0,
    weight_by_counts: bool = True,
) -> tuple[MixtureOfIidDiscrete, FitReport]:
    """Fit a mixture of binomials/multinomials to a histogram table.

    The table is normalized into a probability over histogram tuples
    (``weight_by_counts`` applies the grouping identity for tables built
    from ground products); EM maximizes the weighted likelihood at each
    k and the incremental schedule grows k until the total variation
    converges or ``min(k_max, max population)`` is reached.
    """
    if tol <= 0:
        raise ModelError("tol must be positive")
    if not table.values:
        raise ModelError("cannot fit an empty table")
    atoms = table.atoms
    for a in atoms:
        if not a.domain.is_discrete:
            raise ModelError("fit_mixture_discrete requires discrete atoms")
    target_map = normalize_hist_table(table, weight_by_counts=weight_by_counts)
    keys = sorted(target_map)
    target = np.array([target_map[k] for k in keys])
    pops = {a.name: a.population for a in atoms}
    count_mats = {
        a.name: np.array([key[i] for key in keys], dtype=float)
        for i, a in enumerate(atoms)
    }
    n_max = max(pops.values())
    k_limit = min(k_max, n_max) if k_max is not None else n_max
    rng = np.random.default_rng(seed)

    # k = 1 initialization: overall mean frequencies.
    params = {}
    for a in atoms:
        mean_counts = target @ count_mats[a.name] / pops[a.name]
        p = np.clip(mean_counts, _P_CLAMP, 1.0 - _P_CLAMP)
        params[a.name] = (p / p.sum())[None, :]
    weights = np.array([1.0])

    def run(w, p):
        w, p, run_trace = _em_fixed_k(target, count_mats, pops, w, p)
        fitted = _mixture_probs(w, p, count_mats, pops)
        # Probability mass the mixture places outside the table's keys.
        tv = 0.5 * (np.abs(target - fitted).sum() + max(0.0, 1.0 - fitted.sum()))
        return tv, w, p, run_trace, fitted

    total_iters = 0
    tv_by_k = {}
    tv, weights, params, trace, fitted = run(weights, params)
    total_iters += len(trace)
    tv_by_k[1] = tv
    best = (tv, weights, params, trace)
    k = 1
    while tv > tol and k < k_limit:
        # Grow by one component, trying several seedings and keeping the
        # lowest-TV run: the largest-residual cell with small and large
        # jitter, plus a random draw.
        residual = target - fitted
        idx = int(np.argmax(residual))
        candidates = []
        for sigma in (1e-3, 0.05):
            new_p = {}
            for a in atoms:
                p = count_mats[a.name][idx] / pops[a.name]
                p = np.clip(
                    p + rng.normal(0.0, sigma, size=p.shape), _P_CLAMP, 1 - _P_CLAMP
                )
                new_p[a.name] = p / p.sum()
            candidates.append(new_p)
        for _ in range(3):
            candidates.append(
                {a.name: rng.dirichlet(np.ones(a.domain.d)) for a in atoms}
            )
        k += 1
        round_best = None
        for new_p in candidates:
            w0 = np.concatenate([best[1] * (1.0 - 1.0 / k), [1.0 / k]])
            p0 = {
                a.name: np.vstack(
                    [best[2][a.name], np.clip(new_p[a.name], _P_CLAMP, 1 - _P_CLAMP)[None, :]]
                )
                for a in atoms
            }
            out = run(w0, p0)
            total_iters += len(out[3])
            if round_best is None or out[0] < round_best[0]:
                round_best = out
            if round_best[0] <= tol:
                break
        tv, weights, params, trace, fitted = round_best
        if tv < best[0]:
            tv_by_k[k] = tv
        if tv < best[0] - tol / 10.0:
            best = (tv, weights, params, trace)
        else:
            break  # no meaningful improvement from growing further

    tv, weights, params, trace = best
    if tv > tol:
        polished = _polish_tv(target, count_mats, pops, weights, params)
        if polished is not None and polished[0] < tv:
            tv, weights, params = polished
    keep = weights > _WEIGHT_PRUNE
    if not np.all(keep):
        weights = weights[keep]
        weights = weights / weights.sum()
        params = {a: p[keep] for a, p in params.items()}
    weights = weights / weights.sum()
    mixture = MixtureOfIidDiscrete(
        weights=weights,
        params=params,
        populations=pops,
        atoms=tuple(a.name for a in atoms),
    )
    report = FitReport(
        achieved_tv=float(tv),
        k_used=mixture.k,
        em_iterations=total_iters,
        log_likelihood_trace=list(trace),
        tv_by_k=tv_by_k,
    )
    return mixture, report


def fit_joint_mixture_discrete(
    table: HistTable,
    tol: float = 1e-6,
    k_max: int | None = None,
    seed: int = 0,
    weight_by_counts: bool = True,
) -> tuple[MixtureOfIidDiscrete, FitReport]:
    """Fit a joint table over several atoms; per-component parameter
    vectors are learned per atom (shared mixture weights)."""
    if len(table.atoms) < 2:
        raise ModelError("joint fit expects two or more atoms")
    return fit_mixture_discrete(
        table, tol=tol, k_max=k_max, seed=seed, weight_by_counts=weight_by_counts
    )
