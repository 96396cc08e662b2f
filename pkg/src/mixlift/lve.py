"""Latent-variable elimination over variational models.

All arithmetic stays on mixture components: products and eliminations of
binomial marginals are handled through Normal approximations and the
Gaussian product rule (falling back to the exact finite sum when a
population is small or a parameter extreme), products of kernel density
estimators through analytic Gaussian overlaps.  Oversized mixtures are
collapsed by greedy moment-matched merging.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from mixlift.continuous import Kde, KdeMixture, kde_eval
from mixlift.discrete import MixtureOfIidDiscrete, _logsumexp, _safe_log
from mixlift.model import Atom, ModelError, all_histogram_counts

_NORMAL_MIN_POP = 10
_NORMAL_P_RANGE = (0.05, 0.95)
_P_CLAMP = 1e-9
_DEFAULT_K_CAP = 64
_DEFAULT_S_MAX = 256


@dataclass(frozen=True)
class GaussianApproxComponent:
    """Normal approximation of a binomial/multinomial count marginal."""

    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ModelError("variance must be positive")


def normal_overlap(a: GaussianApproxComponent, b: GaussianApproxComponent) -> float:
    """Analytic overlap integral of two Normal densities."""
    var = a.var + b.var
    return math.exp(-0.5 * (a.mean - b.mean) ** 2 / var) / math.sqrt(2 * math.pi * var)


def _log_normal_pdf(x, mu, var):
    return -0.5 * math.log(2 * math.pi * var) - (x - mu) ** 2 / (2 * var)


@dataclass
class CountMixture:
    """Mixture over count histograms whose components are binomial or
    Normal count marginals per atom.

    Products of binomial-mixture potentials on a shared atom are not
    binomial mixtures; the product of their Normal approximations is a
    Normal with the precision-sum variance, so components become
    ("norm", mean_vector, var_vector) over the atom's free count
    coordinates.  Unproducted components stay ("cat", p_vector).
    """

    weights: np.ndarray
    comps: dict[str, list[tuple]]
    populations: dict[str, int]
    atoms: tuple[str, ...]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-6:
            raise ModelError("CountMixture weights must sum to 1")
        for a in self.atoms:
            if len(self.comps[a]) != len(self.weights):
                raise ModelError("component count mismatch")

    @property
    def k(self) -> int:
        return len(self.weights)

    def component_log_pmf(self, key) -> np.ndarray:
        out = np.zeros(self.k)
        for a, counts in zip(self.atoms, key):
            counts = tuple(int(c) for c in counts)
            for l, marg in enumerate(self.comps[a]):
                out[l] += _hist_log_pmf(marg, counts)
        return out

    def log_eval(self, key) -> float:
        return float(_logsumexp(_safe_log(self.weights) + self.component_log_pmf(key)))

    def eval(self, key) -> float:
        return math.exp(self.log_eval(key))


def _free_coords(counts: np.ndarray) -> np.ndarray:
    return counts[1:2] if len(counts) == 2 else counts[:-1]


def _hist_log_pmf(marg: tuple, counts: tuple) -> float:
    from mixlift.model import log_multinomial_coefficient

    if marg[0] == "cat":
        p = np.clip(np.asarray(marg[1], dtype=float), _P_CLAMP, 1.0)
        ca = np.asarray(counts, dtype=float)
        return log_multinomial_coefficient(counts) + float(ca @ np.log(p))
    if marg[0] == "table":
        return marg[1].get(tuple(counts), -math.inf)
    if marg[0] == "prod":
        return (
            sum(_hist_log_pmf(("cat", p), counts) for p in marg[1]) - marg[2]
        )
    _, mu, var = marg
    coords = _free_coords(np.asarray(counts, dtype=float))
    return float(
        sum(_log_normal_pdf(c, m, v) for c, m, v in zip(coords, mu, var))
    )


def _marginal_dim(marg: tuple) -> int:
    if marg[0] == "cat":
        return len(marg[1])
    if marg[0] == "table":
        return len(next(iter(marg[1])))
    if marg[0] == "prod":
        return len(marg[1][0])
    mu = np.asarray(marg[1])
    return 2 if len(mu) == 1 else len(mu) + 1


def _to_norm_marginal(marg: tuple, m: int) -> tuple[np.ndarray, np.ndarray]:
    """(mean, var) vectors over free count coordinates."""
    if marg[0] == "norm":
        return np.asarray(marg[1], dtype=float), np.asarray(marg[2], dtype=float)
    if marg[0] == "table":
        coords = np.array(
            [_free_coords(np.asarray(c, dtype=float)) for c in marg[1]]
        )
        probs = np.exp(np.array(list(marg[1].values())))
        probs = probs / probs.sum()
        mu = probs @ coords
        var = probs @ (coords - mu) ** 2
        return mu, np.maximum(var, 1e-9)
    if marg[0] == "prod":
        return _prod_norm_fit(marg[1], m)
    p = np.asarray(marg[1], dtype=float)
    c = _atom_coords(p)
    return m * c, np.maximum(m * c * (1 - c), 1e-9)


def _prod_norm_fit(ps: list, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Normal fit over free count coordinates of a product of iid-count
    pmfs with parameter vectors ``ps``.

    Binary atoms get a continuity-corrected stationary point plus a
    third-derivative mean shift, which tracks the exact moments of the
    discrete product closely; wider domains use the plain Laplace fit.
    """
    cats = [("cat", p) for p in ps]
    _, h, r = _saddlepoint_fit(cats, m)
    if len(h) == 2:
        pa = [np.clip(np.asarray(p, dtype=float), _P_CLAMP, 1.0) for p in ps]
        geo = np.exp(np.mean([np.log(p) for p in pa], axis=0))
        q = geo[1] / (geo[0] + geo[1])
        hs = min(max((m + 1.0) * q - 0.5, 1e-3), m - 1e-3)
        lo = hs + 0.5
        hi = m - hs + 0.5
        var = 1.0 / (r * (1.0 / lo + 1.0 / hi))
        g3 = r * (1.0 / lo**2 - 1.0 / hi**2)
        mu = hs + 0.5 * g3 * var * var
        return np.array([mu]), np.array([max(var, 1e-9)])
    var_full = np.maximum(h * (1.0 - h / m) / r, 1e-9)
    return h[:-1], var_full[:-1]


def _flatten_cats(margs: list[tuple]) -> tuple[list[tuple], float]:
    """Expand product marginals into their categorical factors.

    Returns the flat factor list plus the sum of the normalizers the
    expanded products were carrying."""
    flat = []
    extra = 0.0
    for mg in margs:
        if mg[0] == "prod":
            flat.extend(("cat", p) for p in mg[1])
            extra += mg[2]
        else:
            flat.append(mg)
    return flat, extra


def _marginal_product(margs: list[tuple], m: int, counter=None) -> tuple[float, tuple]:
    """Product of count marginals on a kept atom.

    A single marginal passes through.  Small populations multiply the
    explicit pmfs exactly into a table marginal; otherwise the Gaussian
    product rule runs per coordinate and the result stays Normal with
    the precision-sum variance."""
    if len(margs) == 1:
        return 0.0, margs[0]
    explicit = all(mg[0] in ("cat", "table", "prod") for mg in margs)
    if explicit and m < _NORMAL_MIN_POP:
        d = _marginal_dim(margs[0])
        logs = {}
        for counts in all_histogram_counts(m, d):
            logs[counts] = sum(_hist_log_pmf(mg, counts) for mg in margs)
            if counter is not None:
                counter["inner_iterations"] += len(margs)
        log_scale = float(_logsumexp(np.array(list(logs.values()))))
        if log_scale == -math.inf:
            return -math.inf, ("table", {c: -math.inf for c in logs})
        return log_scale, ("table", {c: lp - log_scale for c, lp in logs.items()})
    if all(mg[0] in ("cat", "prod") for mg in margs):
        # Keep the factor list; the product stays exact in shape and its
        # normalizer comes from the saddlepoint fit.  Collapsing pairs to
        # Normals instead drifts from the true product mode when later
        # factors arrive (the Gaussian product rule lands at the
        # precision-weighted mean, not the geometric-mean mode).
        flat, extra = _flatten_cats(margs)
        ps = [mg[1] for mg in flat]
        log_norm, _, _ = _saddlepoint_fit(flat, m, counter=counter)
        return log_norm - extra, ("prod", ps, log_norm)
    mu, var = _to_norm_marginal(margs[0], m)
    log_scale = 0.0
    for marg in margs[1:]:
        mu2, v2 = _to_norm_marginal(marg, m)
        for c in range(len(mu)):
            log_scale += _log_normal_pdf(mu[c], mu2[c], var[c] + v2[c])
        prec = 1.0 / var + 1.0 / v2
        mu = (mu / var + mu2 / v2) / prec
        var = 1.0 / prec
        if counter is not None:
            counter["inner_iterations"] += 1
    return log_scale, ("norm", mu, var)


@dataclass
class LatentCoupling:
    """Potential over named latent variables (e.g. a Gaussian on their
    difference); evaluated during lifted MCMC."""

    name: str
    latents: tuple[str, ...]
    form: str
    params: dict

    def log_eval(self, values: dict) -> float:
        if self.form == "normal_diff":
            a, b = self.latents
            return _log_normal_pdf(
                values[a] - values[b], float(self.params.get("mu", 0.0)),
                float(self.params["sigma2"]),
            )
        if self.form == "table":
            tbl = np.asarray(self.params["table"], dtype=float)
            idx = tuple(int(values[l]) for l in self.latents)
            v = tbl[idx]
            return math.log(v) if v > 0 else -math.inf
        raise ModelError(f"unknown coupling form {self.form!r}")


@dataclass
class ContinuousLatent:
    """A continuous latent with a declared role in the model.

    ``bernoulli_param``: the latent is the shared Bernoulli parameter of
    a binary atom's iid product.  ``mixture_weight``: the latent is the
    weight of the first component of a two-component potential.
    """

    name: str
    role: str  # "bernoulli_param" | "mixture_weight"
    target: str  # atom name or potential name
    support: tuple[float, float] = (0.0, 1.0)


@dataclass
class VariationalModel:
    """Atoms plus variational potentials with per-potential scalar mass.

    Masses are carried in log space and absorb every normalizer dropped
    by update/multiply/eliminate steps; effective populations shrink as
    ground rvs are observed.
    """

    atoms: dict[str, Atom]
    potentials: list
    log_masses: list[float] = None
    names: list[str] = None
    couplings: list[LatentCoupling] = field(default_factory=list)
    latents: list[ContinuousLatent] = field(default_factory=list)

    def __post_init__(self):
        if self.log_masses is None:
            self.log_masses = [0.0] * len(self.potentials)
        if self.names is None:
            self.names = [f"phi{i}" for i in range(len(self.potentials))]
        for pot in self.potentials:
            for a in pot.atoms:
                if a not in self.atoms:
                    raise ModelError(f"potential references undeclared atom {a!r}")

    @property
    def n_eff(self) -> dict[str, int]:
        out = {name: a.population for name, a in self.atoms.items()}
        for pot in self.potentials:
            for a in pot.atoms:
                out[a] = min(out[a], pot.populations[a])
        return out

    def copy(self) -> "VariationalModel":
        return VariationalModel(
            atoms=dict(self.atoms),
            potentials=list(self.potentials),
            log_masses=list(self.log_masses),
            names=list(self.names),
            couplings=list(self.couplings),
            latents=list(self.latents),
        )


@dataclass(frozen=True)
class Observation:
    """Exchangeable observation of some ground rvs of one atom.

    Discrete observations are counts per value; continuous ones are
    value lists.  Indices are never named, preserving exchangeability.
    """

    atom: str
    counts: tuple[int, ...] | None = None
    values: tuple[float, ...] | None = None


def _with_population(mix, atom: str, new_pop: int):
    pops = dict(mix.populations)
    pops[atom] = new_pop
    return replace(mix, populations=pops)


def _reweighted(mix, log_like: np.ndarray):
    logw = _safe_log(mix.weights) + log_like
    log_norm = _logsumexp(logw)
    return replace(mix, weights=np.exp(logw - log_norm)), float(log_norm)


def update_obs(model: VariationalModel, obs: list[Observation]) -> VariationalModel:
    """Condition every potential on exchangeable observations.

    Each observed rv multiplies each component's weight by that
    component's iid likelihood of the value; the normalizer moves into
    the potential's mass and the atom's effective population shrinks.
    """
    out = model.copy()
    for ob in obs:
        atom = out.atoms.get(ob.atom)
        if atom is None:
            raise ModelError(f"observation on undeclared atom {ob.atom!r}")
        if atom.domain.is_discrete:
            if ob.counts is None:
                raise ModelError(f"discrete atom {ob.atom!r} needs counts")
            counts = np.asarray(ob.counts, dtype=float)
            if len(counts) != atom.domain.d or np.any(counts < 0):
                raise ModelError(f"bad observation counts for {ob.atom!r}")
            n_obs = int(counts.sum())
        else:
            if ob.values is None:
                raise ModelError(f"continuous atom {ob.atom!r} needs values")
            for v in ob.values:
                if not atom.domain.contains(v):
                    raise ModelError(f"value {v!r} outside domain of {ob.atom!r}")
            n_obs = len(ob.values)
        for i, pot in enumerate(out.potentials):
            if ob.atom not in pot.atoms:
                continue
            if pot.populations[ob.atom] < n_obs:
                raise ModelError(
                    f"observing {n_obs} rvs of {ob.atom!r} exceeds the remaining "
                    f"population {pot.populations[ob.atom]}"
                )
            if atom.domain.is_discrete:
                p = _component_cat_params(pot, ob.atom)
                log_like = (counts[None, :] * _safe_log(np.clip(p, _P_CLAMP, 1.0))).sum(axis=1)
            else:
                kdes = pot.kdes[ob.atom]
                log_like = np.array(
                    [kde.log_eval(np.asarray(ob.values)).sum() for kde in kdes]
                )
            new_pot, log_norm = _reweighted(pot, log_like)
            new_pot = _with_population(new_pot, ob.atom, pot.populations[ob.atom] - n_obs)
            out.potentials[i] = new_pot
            out.log_masses[i] += log_norm
    return out


def _component_cat_params(pot, atom: str) -> np.ndarray:
    if isinstance(pot, MixtureOfIidDiscrete):
        return pot.params[atom]
    return pot.cats[atom]


def _is_discrete_mixture(pot) -> bool:
    return isinstance(pot, MixtureOfIidDiscrete)


def _atom_coords(p: np.ndarray) -> np.ndarray:
    """Count coordinates used by the Normal approximation: the single
    success count for binary atoms, the first d-1 counts otherwise."""
    d = len(p)
    if d == 2:
        return p[1:2]
    return p[:-1]


def _use_normal(m: int, p_vectors) -> bool:
    if m < _NORMAL_MIN_POP:
        return False
    lo, hi = _NORMAL_P_RANGE
    for p in p_vectors:
        coords = _atom_coords(np.asarray(p))
        if np.any(coords < lo) or np.any(coords > hi):
            return False
    return True


def _normal_product_chain(means, vars_):
    """Sequential Gaussian product: returns (log scale, mean, var)."""
    mu, var = means[0], vars_[0]
    log_scale = 0.0
    for m2, v2 in zip(means[1:], vars_[1:]):
        log_scale += _log_normal_pdf(mu, m2, var + v2)
        prec = 1.0 / var + 1.0 / v2
        mu = (mu / var + m2 / v2) / prec
        var = 1.0 / prec
    return log_scale, mu, var


def _merge_cat_params(p_vectors, m: int) -> tuple[float, np.ndarray]:
    """Product of iid count marginals via per-coordinate Normal products,
    moment-matched back to one categorical parameter vector."""
    ps = [np.asarray(p, dtype=float) for p in p_vectors]
    if len(ps) == 1:
        return 0.0, ps[0]
    d = len(ps[0])
    coords = range(1, 2) if d == 2 else range(d - 1)
    log_scale = 0.0
    new_p = np.empty(d)
    for c in coords:
        means = [m * p[c] for p in ps]
        vars_ = [max(m * p[c] * (1 - p[c]), 1e-9) for p in ps]
        ls, mu, _ = _normal_product_chain(means, vars_)
        log_scale += ls
        new_p[c] = mu / m
    if d == 2:
        new_p[1] = min(max(new_p[1], _P_CLAMP), 1 - _P_CLAMP)
        new_p[0] = 1.0 - new_p[1]
    else:
        head = np.clip(new_p[:-1], _P_CLAMP, 1 - _P_CLAMP)
        scale = min(1.0, (1 - _P_CLAMP) / head.sum())
        head = head * scale
        new_p[:-1] = head
        new_p[-1] = 1.0 - head.sum()
    return log_scale, new_p


def _marginal_overlap(margs: list[tuple], m: int, counter=None) -> float:
    """log sum over count histograms of the product of count marginals.

    A single marginal sums to 1.  All-binomial products use the exact
    finite sum when the population is small or a parameter extreme, the
    analytic Normal overlap otherwise; anything already Normal stays in
    the Normal chain.
    """
    if len(margs) == 1:
        return 0.0
    explicit = all(mg[0] in ("cat", "table", "prod") for mg in margs)
    any_table = any(mg[0] == "table" for mg in margs)
    if explicit:
        flat, extra = _flatten_cats(margs)
        if any_table or not _use_normal(m, [mg[1] for mg in flat]):
            # Exact finite sum over all histograms of m items.
            d = _marginal_dim(margs[0])
            logs = []
            for counts in all_histogram_counts(m, d):
                logs.append(sum(_hist_log_pmf(mg, counts) for mg in margs))
                if counter is not None:
                    counter["inner_iterations"] += len(margs)
            return float(_logsumexp(np.asarray(logs)))
        if all(mg[0] == "cat" for mg in flat):
            ls, _, _ = _saddlepoint_fit(flat, m, counter=counter)
            return ls - extra
    # The final Normal in the product chain integrates to 1, so the
    # accumulated product scale equals the overlap integral.
    ls, _ = _marginal_product(margs, m, counter=counter)
    return ls


def _saddlepoint_fit(margs: list[tuple], m: int, counter=None):
    """Laplace fit of prod_i f_B(h; m, p_i) at its stationary histogram.

    Returns (log of the overlap sum, stationary histogram, factor
    count).  The stationary point is in closed form (coordinates
    proportional to the geometric mean of the per-marginal parameter
    vectors), so the cost is independent of the population.  Unlike the
    plain Gaussian product rule this stays accurate both in location
    (the product mode follows the geometric mean, not the precision-
    weighted mean) and in relative scale when the parameters are well
    separated, where the overlap is tiny but still steers weights.
    """
    ps = [np.clip(np.asarray(mg[1], dtype=float), _P_CLAMP, 1.0) for mg in margs]
    r = len(ps)
    d = len(ps[0])
    geo = np.exp(np.mean([np.log(p) for p in ps], axis=0))
    h = m * geo / geo.sum()
    h = np.maximum(h, 1e-3)
    h = h * (m / h.sum())
    g = 0.0
    for p in ps:
        g += (
            math.lgamma(m + 1)
            - sum(math.lgamma(hv + 1) for hv in h)
            + float(h @ np.log(p))
        )
    # Hessian over the d-1 free coordinates: r (diag(1/h_v) + J / h_d).
    log_det = (
        (d - 1) * math.log(r)
        + float(np.sum(-np.log(h[:-1])))
        + math.log(m / h[-1])
    )
    if counter is not None:
        counter["inner_iterations"] += r
    ls = g + 0.5 * ((d - 1) * math.log(2 * math.pi) - log_det)
    return ls, h, r


def _kde_pair_log_overlap(a: Kde, b: Kde) -> float:
    """log of the per-rv overlap integral of two Gaussian-kernel KDEs."""
    var = a.bandwidth**2 + b.bandwidth**2
    diff = a.centers[:, None] - b.centers[None, :]
    log_n = -0.5 * math.log(2 * math.pi * var) - diff**2 / (2 * var)
    logw = _safe_log(a.kernel_weights())[:, None] + _safe_log(b.kernel_weights())[None, :]
    return float(_logsumexp((log_n + logw).ravel()))


def _kde_product(a: Kde, b: Kde, s_max: int = _DEFAULT_S_MAX) -> tuple[float, Kde]:
    """Pointwise product of two KDEs: a Gaussian mixture over kernel
    pairs.  Returns (log mass, normalized product density)."""
    va, vb = a.bandwidth**2, b.bandwidth**2
    var = va + vb
    diff = a.centers[:, None] - b.centers[None, :]
    log_n = -0.5 * math.log(2 * math.pi * var) - diff**2 / (2 * var)
    logw = (
        _safe_log(a.kernel_weights())[:, None]
        + _safe_log(b.kernel_weights())[None, :]
        + log_n
    ).ravel()
    centers = ((a.centers[:, None] * vb + b.centers[None, :] * va) / var).ravel()
    log_mass = float(_logsumexp(logw))
    w = np.exp(logw - log_mass)
    bw = math.sqrt(va * vb / var)
    if len(centers) > s_max:
        from mixlift.continuous import _systematic_resample

        centers = _systematic_resample(centers, w, s_max)
        return log_mass, Kde(centers=centers, bandwidth=bw)
    return log_mass, Kde(centers=centers, bandwidth=bw, weights=w)


def _kde_product_chain(kdes, s_max=_DEFAULT_S_MAX):
    cur = kdes[0]
    log_scale = 0.0
    for nxt in kdes[1:]:
        lm, cur = _kde_product(cur, nxt, s_max=s_max)
        log_scale += lm
    return log_scale, cur


def _as_kde_mixture(pot) -> KdeMixture:
    if isinstance(pot, KdeMixture):
        return pot
    if isinstance(pot, CountMixture):
        if any(mg[0] != "cat" for a in pot.atoms for mg in pot.comps[a]):
            raise ModelError(
                "cannot combine Normal count components with continuous potentials"
            )
        cats = {a: np.vstack([mg[1] for mg in pot.comps[a]]) for a in pot.atoms}
        return KdeMixture(
            weights=pot.weights,
            kdes={},
            populations=dict(pot.populations),
            atoms=pot.atoms,
            cats=cats,
        )
    return KdeMixture(
        weights=pot.weights,
        kdes={},
        populations=dict(pot.populations),
        atoms=pot.atoms,
        cats=dict(pot.params),
    )


def _combine(potentials, eliminate: str | None, s_max=_DEFAULT_S_MAX, counter=None):
    """Cross-product combine of variational potentials, optionally
    summing one atom out.  Returns (mixture or None, log scale)."""
    if not potentials:
        raise ModelError("no potentials to combine")
    continuous_mode = any(isinstance(p, KdeMixture) and p.kdes for p in potentials)
    pots = [_as_kde_mixture(p) if continuous_mode else p for p in potentials]

    pops: dict[str, int] = {}
    for pot in pots:
        for a in pot.atoms:
            if a in pops and pops[a] != pot.populations[a]:
                raise ModelError(
                    f"potentials disagree on the population of atom {a!r}"
                )
            pops[a] = pot.populations[a]
    out_atoms = []
    for pot in pots:
        for a in pot.atoms:
            if a != eliminate and a not in out_atoms:
                out_atoms.append(a)
    out_atoms = tuple(out_atoms)

    combos = list(itertools.product(*[range(p.k) for p in pots]))
    log_weights = np.empty(len(combos))
    comp_params: list[dict] = []
    for ci, combo in enumerate(combos):
        logw = 0.0
        per_atom_disc: dict[str, list] = {}
        per_atom_kde: dict[str, list] = {}
        for pot, l in zip(pots, combo):
            logw += float(_safe_log(pot.weights[l : l + 1])[0])
            if isinstance(pot, MixtureOfIidDiscrete):
                for a in pot.atoms:
                    per_atom_disc.setdefault(a, []).append(("cat", pot.params[a][l]))
            elif isinstance(pot, CountMixture):
                for a in pot.atoms:
                    per_atom_disc.setdefault(a, []).append(pot.comps[a][l])
            else:
                for a in pot.atoms:
                    if a in pot.kdes:
                        per_atom_kde.setdefault(a, []).append(pot.kdes[a][l])
                    else:
                        per_atom_disc.setdefault(a, []).append(("cat", pot.cats[a][l]))
        params: dict[str, object] = {}
        for a, ps in per_atom_disc.items():
            if a == eliminate:
                logw += _marginal_overlap(ps, pops[a], counter=counter)
            elif continuous_mode:
                # KdeMixture components hold plain categorical vectors,
                # so shared discrete atoms are moment-matched back.
                ls, merged = _merge_cat_params([mg[1] for mg in ps], pops[a])
                logw += ls
                params[a] = ("cat", merged)
                if counter is not None:
                    counter["inner_iterations"] += len(ps)
            else:
                ls, merged = _marginal_product(ps, pops[a], counter=counter)
                logw += ls
                params[a] = merged
        for a, ks in per_atom_kde.items():
            if a == eliminate:
                ls, _ = _kde_product_chain(ks, s_max=s_max)
                logw += pops[a] * ls
                if counter is not None:
                    counter["inner_iterations"] += len(ks)
            else:
                ls, merged = _kde_product_chain(ks, s_max=s_max)
                logw += pops[a] * ls
                params[a] = ("kde", merged)
                if counter is not None:
                    counter["inner_iterations"] += len(ks)
        log_weights[ci] = logw
        comp_params.append(params)

    log_scale = float(_logsumexp(log_weights))
    if log_scale == -math.inf:
        raise ModelError("all combined component weights vanished")
    weights = np.exp(log_weights - log_scale)
    if not out_atoms:
        return None, log_scale

    out_pops = {a: pops[a] for a in out_atoms}
    if continuous_mode:
        kdes = {}
        cats = {}
        for a in out_atoms:
            kind = comp_params[0][a][0]
            if kind == "kde":
                kdes[a] = [cp[a][1] for cp in comp_params]
            else:
                cats[a] = np.vstack([cp[a][1] for cp in comp_params])
        mixture = KdeMixture(
            weights=weights, kdes=kdes, populations=out_pops, atoms=out_atoms, cats=cats
        )
        if not kdes:
            mixture = MixtureOfIidDiscrete(
                weights=weights,
                params=cats,
                populations=out_pops,
                atoms=out_atoms,
            )
    else:
        all_cat = all(cp[a][0] == "cat" for cp in comp_params for a in out_atoms)
        if all_cat:
            params_out = {
                a: np.vstack([cp[a][1] for cp in comp_params]) for a in out_atoms
            }
            mixture = MixtureOfIidDiscrete(
                weights=weights, params=params_out, populations=out_pops, atoms=out_atoms
            )
        else:
            mixture = CountMixture(
                weights=weights,
                comps={a: [cp[a] for cp in comp_params] for a in out_atoms},
                populations=out_pops,
                atoms=out_atoms,
            )
    return mixture, log_scale


def multiply_discrete_potentials(p1: MixtureOfIidDiscrete, p2: MixtureOfIidDiscrete):
    """Component-pairwise product via Normal approximation and the
    Gaussian product rule, moment-matched back to binomial parameters.
    Returns (mixture over the union of atoms, log scale)."""
    return _combine([p1, p2], eliminate=None)


def eliminate_discrete_atom(potentials, atom: str, counter=None):
    """Sum a discrete atom out of the given variational potentials.

    Every cross-component pair contributes the overlap of its count
    marginals (Normal approximation for large populations with moderate
    parameters, exact finite sum otherwise).  Returns (mixture over the
    remaining atoms or None, log scale)."""
    for pot in potentials:
        if atom not in pot.atoms:
            raise ModelError(f"potential does not mention atom {atom!r}")
        if isinstance(pot, KdeMixture) and atom in pot.kdes:
            raise ModelError(f"atom {atom!r} is continuous; use eliminate_continuous_atom")
    return _combine(potentials, eliminate=atom, counter=counter)


def eliminate_continuous_atom(potentials, atom: str, s_max=_DEFAULT_S_MAX, counter=None):
    """Integrate a continuous atom out: per component pair the analytic
    per-rv kernel overlap, raised to the atom's population (log space)."""
    for pot in potentials:
        if atom not in pot.atoms:
            raise ModelError(f"potential does not mention atom {atom!r}")
        if not (isinstance(pot, KdeMixture) and atom in pot.kdes):
            raise ModelError(f"atom {atom!r} is not continuous in every potential")
    return _combine(potentials, eliminate=atom, s_max=s_max, counter=counter)


def multiply_continuous_potentials(p1: KdeMixture, p2: KdeMixture, s_max=_DEFAULT_S_MAX):
    """Component-pairwise product of KDE mixtures; per rv the product of
    two Gaussian-kernel KDEs is again a Gaussian mixture (kernel count
    capped by deterministic resampling)."""
    return _combine([p1, p2], eliminate=None, s_max=s_max)


def _component_moments(pot, atom: str, l: int) -> tuple[float, float]:
    if isinstance(pot, MixtureOfIidDiscrete) or atom in getattr(pot, "cats", {}):
        p = _component_cat_params(pot, atom)[l]
        return float(p[-1] if len(p) == 2 else p[0]), 0.0
    kde = pot.kdes[atom][l]
    return kde.mean(), math.sqrt(kde.variance())


def collapse_mixture(mixture, k_target: int):
    """Greedily merge the cheapest component pair by moment matching
    until at most ``k_target`` components remain.  Weight sum and every
    atom's marginal mixture mean are preserved."""
    if k_target < 1:
        raise ModelError("k_target must be >= 1")
    if mixture.k <= k_target:
        return mixture

    weights = list(mixture.weights)
    if isinstance(mixture, MixtureOfIidDiscrete):
        comps = [
            {a: mixture.params[a][l].copy() for a in mixture.atoms}
            for l in range(mixture.k)
        ]

        def dist(a, b):
            return sum(float(np.sum((a[x] - b[x]) ** 2)) for x in mixture.atoms)

        def merge(wa, ca, wb, cb):
            w = wa + wb
            return {x: (wa * ca[x] + wb * cb[x]) / w for x in mixture.atoms}

    elif isinstance(mixture, CountMixture):
        comps = [
            {a: mixture.comps[a][l] for a in mixture.atoms} for l in range(mixture.k)
        ]

        def dist(a, b):
            total = 0.0
            for x in mixture.atoms:
                n = mixture.populations[x]
                ma, va = _to_norm_marginal(a[x], n)
                mb, vb = _to_norm_marginal(b[x], n)
                total += float(
                    np.sum((ma - mb) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)
                )
            return total

        def merge(wa, ca, wb, cb):
            w = wa + wb
            out = {}
            for x in mixture.atoms:
                if ca[x][0] == "cat" and cb[x][0] == "cat":
                    out[x] = ("cat", (wa * ca[x][1] + wb * cb[x][1]) / w)
                    continue
                n = mixture.populations[x]
                ma, va = _to_norm_marginal(ca[x], n)
                mb, vb = _to_norm_marginal(cb[x], n)
                mu = (wa * ma + wb * mb) / w
                var = (wa * (va + ma**2) + wb * (vb + mb**2)) / w - mu**2
                out[x] = ("norm", mu, np.maximum(var, 1e-9))
            return out

    else:
        comps = [
            {
                a: (
                    mixture.kdes[a][l]
                    if a in mixture.kdes
                    else mixture.cats[a][l].copy()
                )
                for a in mixture.atoms
            }
            for l in range(mixture.k)
        ]

        def dist(a, b):
            total = 0.0
            for x in mixture.atoms:
                if x in mixture.kdes:
                    total += (a[x].mean() - b[x].mean()) ** 2
                    total += (math.sqrt(a[x].variance()) - math.sqrt(b[x].variance())) ** 2
                else:
                    total += float(np.sum((a[x] - b[x]) ** 2))
            return total

        def merge(wa, ca, wb, cb):
            w = wa + wb
            out = {}
            for x in mixture.atoms:
                if x in mixture.kdes:
                    ka, kb = ca[x], cb[x]
                    centers = np.concatenate([ka.centers, kb.centers])
                    kw = np.concatenate(
                        [wa / w * ka.kernel_weights(), wb / w * kb.kernel_weights()]
                    )
                    bw = math.sqrt((wa * ka.bandwidth**2 + wb * kb.bandwidth**2) / w)
                    out[x] = Kde(centers=centers, bandwidth=bw, weights=kw)
                else:
                    out[x] = (wa * ca[x] + wb * cb[x]) / w
            return out

    while len(weights) > k_target:
        best = None
        for i in range(len(weights)):
            for j in range(i + 1, len(weights)):
                cost = (
                    weights[i] * weights[j] / (weights[i] + weights[j])
                ) * dist(comps[i], comps[j])
                if best is None or cost < best[0]:
                    best = (cost, i, j)
        _, i, j = best
        merged = merge(weights[i], comps[i], weights[j], comps[j])
        new_w = weights[i] + weights[j]
        for idx in sorted((i, j), reverse=True):
            del weights[idx]
            del comps[idx]
        weights.append(new_w)
        comps.append(merged)

    w = np.asarray(weights)
    w = w / w.sum()
    if isinstance(mixture, MixtureOfIidDiscrete):
        params = {a: np.vstack([c[a] for c in comps]) for a in mixture.atoms}
        return MixtureOfIidDiscrete(
            weights=w, params=params, populations=dict(mixture.populations),
            atoms=mixture.atoms,
        )
    if isinstance(mixture, CountMixture):
        return CountMixture(
            weights=w,
            comps={a: [c[a] for c in comps] for a in mixture.atoms},
            populations=dict(mixture.populations),
            atoms=mixture.atoms,
        )
    kdes = {a: [c[a] for c in comps] for a in mixture.kdes}
    cats = {a: np.vstack([c[a] for c in comps]) for a in mixture.cats}
    return KdeMixture(
        weights=w, kdes=kdes, populations=dict(mixture.populations),
        atoms=mixture.atoms, cats=cats,
    )


def _elimination_order(model: VariationalModel, query: set[str]) -> list[str]:
    """Fewest-neighboring-potentials first; ties broken by atom name."""
    remaining = [a for a in sorted(model.atoms) if a not in query]
    order = []
    pots = [set(p.atoms) for p in model.potentials]
    while remaining:
        remaining.sort(key=lambda a: (sum(1 for s in pots if a in s), a))
        nxt = remaining.pop(0)
        order.append(nxt)
        touched = [s for s in pots if nxt in s]
        merged = set().union(*touched) - {nxt} if touched else set()
        pots = [s for s in pots if nxt not in s]
        if merged:
            pots.append(merged)
    return order


def latent_variable_elimination(
    model: VariationalModel,
    query: set[str] | list[str],
    obs: list[Observation] | None = None,
    k_cap: int = _DEFAULT_K_CAP,
    s_max: int = _DEFAULT_S_MAX,
    counter=None,
):
    """Full inference: condition on observations, eliminate every
    non-query atom, and return (normalized mixture over the query atoms,
    log total mass)."""
    query = set(query)
    for q in query:
        if q not in model.atoms:
            raise ModelError(f"query atom {q!r} is not declared")
    working = update_obs(model, obs or [])
    pots = list(working.potentials)
    log_mass = float(sum(working.log_masses))

    for atom in _elimination_order(working, query):
        group = [p for p in pots if atom in p.atoms]
        rest = [p for p in pots if atom not in p.atoms]
        if not group:
            continue
        is_cont = any(isinstance(p, KdeMixture) and atom in p.kdes for p in group)
        if is_cont:
            result, log_scale = eliminate_continuous_atom(
                group, atom, s_max=s_max, counter=counter
            )
        else:
            result, log_scale = eliminate_discrete_atom(group, atom, counter=counter)
        log_mass += log_scale
        if result is not None:
            if result.k > k_cap:
                result = collapse_mixture(result, k_cap)
            rest.append(result)
        pots = rest

    if not pots:
        return None, log_mass
    result = pots[0]
    for other in pots[1:]:
        result, log_scale = _combine([result, other], eliminate=None, s_max=s_max)
        log_mass += log_scale
        if result.k > k_cap:
            result = collapse_mixture(result, k_cap)
    return result, log_mass
