"""Lifted Gibbs sampling over latent variables, plus a ground comparator.

The lifted chain never instantiates ground rvs: each step resamples one
latent from its full conditional, which reuses the same per-rv overlap
arithmetic as latent-variable elimination with neighbors held fixed.
The ground chain runs single-site Gibbs/Metropolis over every ground rv
of the grounded variational model, for head-to-head comparisons.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from mixlift.continuous import Kde
from mixlift.discrete import MixtureOfIidDiscrete, _logsumexp, _safe_log
from mixlift.lve import (
    ContinuousLatent,
    LatentCoupling,
    Observation,
    VariationalModel,
    _kde_product_chain,
)
from mixlift.model import Atom, ModelError, binary_domain, continuous_domain


@dataclass
class LatentState:
    """Current assignment of every latent: component indices for discrete
    latents, reals for declared continuous latents."""

    values: dict[str, float | int]

    def copy(self) -> "LatentState":
        return LatentState(dict(self.values))


@dataclass
class ChainResult:
    """Trace, query estimates, and run diagnostics of one chain."""

    trace: dict[str, np.ndarray]
    estimates: dict[str, float]
    steps: int
    burn_in: int
    seed: int
    step_time_us: float
    selection_counts: dict[str, int]
    split_disagreement: float = 0.0


@dataclass(frozen=True)
class Query:
    """Ground-rv-level marginal query on one atom.

    kind ``below``: P(X_new < threshold) for a continuous atom;
    kind ``equals``: P(X_new = value) for a discrete atom.
    """

    atom: str
    kind: str
    threshold: float = 0.0
    value: int = 1

    @property
    def key(self) -> str:
        arg = self.threshold if self.kind == "below" else self.value
        return f"{self.atom}:{self.kind}:{arg}"


def _kde_cdf(kde: Kde, x: float) -> float:
    z = (x - kde.centers) / kde.bandwidth
    return float(kde.kernel_weights() @ ndtr(z))


@dataclass
class McmcPotential:
    """One variational potential in chain-ready form.

    ``weights`` is the static component prior unless ``weight_latent``
    names a continuous latent theta giving weights (theta, 1 - theta).
    ``theta_atom`` marks a single-component Bernoulli potential whose
    success parameter is itself a continuous latent.
    """

    name: str
    atoms: tuple[str, ...]
    populations: dict[str, int]
    weights: np.ndarray | None = None
    weight_latent: str | None = None
    cat_params: dict[str, np.ndarray] = field(default_factory=dict)
    kde_params: dict[str, list] = field(default_factory=dict)
    theta_atom: str | None = None
    theta_latent: str | None = None
    obs_loglik: np.ndarray | None = None
    obs_counts: dict[str, np.ndarray] = field(default_factory=dict)
    obs_values: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def k(self) -> int:
        if self.theta_atom is not None:
            return 1
        if self.weights is not None:
            return len(self.weights)
        return 2  # weight-latent potentials are two-component

    def log_weights(self, state: LatentState) -> np.ndarray:
        if self.theta_atom is not None:
            return np.zeros(1)
        if self.weight_latent is not None:
            theta = float(state.values[self.weight_latent])
            theta = min(max(theta, 1e-12), 1 - 1e-12)
            return np.array([math.log(theta), math.log1p(-theta)])
        return _safe_log(self.weights)

    def cat_vector(self, atom: str, l: int, state: LatentState) -> np.ndarray:
        if self.theta_atom == atom:
            theta = float(state.values[self.theta_latent])
            theta = min(max(theta, 1e-12), 1 - 1e-12)
            return np.array([1 - theta, theta])
        return self.cat_params[atom][l]


@dataclass
class McmcModel:
    """Latent-level view of a variational model for Gibbs sampling."""

    atoms: dict[str, Atom]
    potentials: list[McmcPotential]
    couplings: list[LatentCoupling] = field(default_factory=list)
    continuous_latents: list[ContinuousLatent] = field(default_factory=list)

    def __post_init__(self):
        self._by_atom: dict[str, list[McmcPotential]] = {}
        for pot in self.potentials:
            for a in pot.atoms:
                self._by_atom.setdefault(a, []).append(pot)

    @property
    def n_eff(self) -> dict[str, int]:
        out = {n: a.population for n, a in self.atoms.items()}
        for pot in self.potentials:
            for a in pot.atoms:
                out[a] = min(out[a], pot.populations[a])
        return out

    def discrete_latents(self) -> list[McmcPotential]:
        return [p for p in self.potentials if p.theta_atom is None and p.k > 1]

    def latent_names(self) -> list[str]:
        names = [p.name for p in self.discrete_latents()]
        names += [l.name for l in self.continuous_latents]
        return names


def from_variational(model: VariationalModel) -> McmcModel:
    """Chain-ready view of a plain variational model (static weights)."""
    pots = []
    for name, mix in zip(model.names, model.potentials):
        if isinstance(mix, MixtureOfIidDiscrete):
            pots.append(
                McmcPotential(
                    name=name,
                    atoms=mix.atoms,
                    populations=dict(mix.populations),
                    weights=np.asarray(mix.weights, dtype=float),
                    cat_params={a: np.asarray(p) for a, p in mix.params.items()},
                )
            )
        else:
            pots.append(
                McmcPotential(
                    name=name,
                    atoms=mix.atoms,
                    populations=dict(mix.populations),
                    weights=np.asarray(mix.weights, dtype=float),
                    cat_params={a: np.asarray(p) for a, p in mix.cats.items()},
                    kde_params={a: list(ks) for a, ks in mix.kdes.items()},
                )
            )
    return McmcModel(
        atoms=dict(model.atoms),
        potentials=pots,
        couplings=list(model.couplings),
        continuous_latents=list(model.latents),
    )


def apply_observations(model: McmcModel, obs: list[Observation]) -> McmcModel:
    """Fold observations into per-component likelihoods and effective
    populations; relational structure is untouched."""
    pots = [
        McmcPotential(
            name=p.name,
            atoms=p.atoms,
            populations=dict(p.populations),
            weights=None if p.weights is None else p.weights.copy(),
            weight_latent=p.weight_latent,
            cat_params=dict(p.cat_params),
            kde_params=dict(p.kde_params),
            theta_atom=p.theta_atom,
            theta_latent=p.theta_latent,
            obs_loglik=None if p.obs_loglik is None else p.obs_loglik.copy(),
            obs_counts=dict(p.obs_counts),
            obs_values=dict(p.obs_values),
        )
        for p in model.potentials
    ]
    out = McmcModel(
        atoms=dict(model.atoms),
        potentials=pots,
        couplings=list(model.couplings),
        continuous_latents=list(model.continuous_latents),
    )
    for ob in obs:
        atom = out.atoms.get(ob.atom)
        if atom is None:
            raise ModelError(f"observation on undeclared atom {ob.atom!r}")
        for pot in out.potentials:
            if ob.atom not in pot.atoms:
                continue
            if atom.domain.is_discrete:
                counts = np.asarray(ob.counts, dtype=float)
                n_obs = int(counts.sum())
                if pot.theta_atom == ob.atom:
                    prev = pot.obs_counts.get(ob.atom, np.zeros(atom.domain.d))
                    pot.obs_counts[ob.atom] = prev + counts
                    loglik = np.zeros(1)
                else:
                    p = np.clip(pot.cat_params[ob.atom], 1e-12, 1.0)
                    loglik = (counts[None, :] * np.log(p)).sum(axis=1)
            else:
                vals = np.asarray(ob.values, dtype=float)
                n_obs = len(vals)
                prev = pot.obs_values.get(ob.atom, np.zeros(0))
                pot.obs_values[ob.atom] = np.concatenate([prev, vals])
                loglik = np.array(
                    [kde.log_eval(vals).sum() for kde in pot.kde_params[ob.atom]]
                )
            if pot.populations[ob.atom] < n_obs:
                raise ModelError(
                    f"observing {n_obs} rvs exceeds population of {ob.atom!r}"
                )
            pot.populations[ob.atom] -= n_obs
            if pot.obs_loglik is None:
                pot.obs_loglik = np.zeros(pot.k)
            pot.obs_loglik = pot.obs_loglik + loglik
    return out


def _atom_overlap_log(model: McmcModel, atom: str, choices: dict, state: LatentState) -> float:
    """log per-rv overlap of the chosen component densities of every
    potential touching the atom (1 when a single potential touches it)."""
    pots = model._by_atom[atom]
    if len(pots) <= 1:
        return 0.0
    a = model.atoms[atom]
    if a.domain.is_discrete:
        prod = np.ones(a.domain.d)
        for pot in pots:
            l = choices.get(pot.name, 0)
            prod = prod * pot.cat_vector(atom, l, state)
        s = float(prod.sum())
        return math.log(s) if s > 0 else -math.inf
    kdes = []
    for pot in pots:
        l = choices.get(pot.name, 0)
        kdes.append(pot.kde_params[atom][l])
    log_scale, _ = _kde_product_chain(kdes)
    return log_scale


def _coupling_log(model: McmcModel, state: LatentState, override=None) -> float:
    values = dict(state.values)
    if override:
        values.update(override)
    return sum(c.log_eval(values) for c in model.couplings)


def _discrete_conditional(model: McmcModel, pot: McmcPotential, state: LatentState):
    """Unnormalized log conditional of one potential's component latent."""
    n_eff = model.n_eff
    logs = pot.log_weights(state).copy()
    if pot.obs_loglik is not None:
        logs = logs + pot.obs_loglik
    for l in range(pot.k):
        choices = {
            p.name: int(state.values.get(p.name, 0)) for p in model.discrete_latents()
        }
        choices[pot.name] = l
        for a in pot.atoms:
            ov = _atom_overlap_log(model, a, choices, state)
            logs[l] += n_eff[a] * ov
        coupled = any(pot.name in c.latents for c in model.couplings)
        if coupled:
            logs[l] += _coupling_log(model, state, override={pot.name: l})
    return logs


def _slice_sample(log_f, x0: float, lo: float, hi: float, rng) -> float:
    """Shrinkage slice sampler on a bounded interval."""
    y = log_f(x0) + math.log(rng.uniform())
    left, right = lo, hi
    for _ in range(100):
        x = rng.uniform(left, right)
        if log_f(x) >= y:
            return x
        if x < x0:
            left = x
        else:
            right = x
    return x0


def _continuous_conditional_logf(model: McmcModel, latent: ContinuousLatent, state: LatentState):
    n_eff = model.n_eff

    def log_f(theta: float) -> float:
        override = {latent.name: theta}
        total = _coupling_log(model, state, override=override)
        for pot in model.potentials:
            if pot.weight_latent == latent.name:
                l = int(state.values.get(pot.name, 0))
                t = min(max(theta, 1e-12), 1 - 1e-12)
                total += math.log(t) if l == 0 else math.log1p(-t)
            if pot.theta_latent == latent.name:
                atom = pot.theta_atom
                counts = pot.obs_counts.get(atom)
                t = min(max(theta, 1e-12), 1 - 1e-12)
                if counts is not None:
                    total += counts[1] * math.log(t) + counts[0] * math.log1p(-t)
                if len(model._by_atom[atom]) > 1:
                    tmp = state.copy()
                    tmp.values[latent.name] = theta
                    choices = {
                        p.name: int(state.values.get(p.name, 0))
                        for p in model.discrete_latents()
                    }
                    total += n_eff[atom] * _atom_overlap_log(model, atom, choices, tmp)
        return total

    return log_f


def initial_state(model: McmcModel) -> LatentState:
    values: dict[str, float | int] = {}
    for pot in model.discrete_latents():
        values[pot.name] = 0
    for lat in model.continuous_latents:
        lo, hi = lat.support
        values[lat.name] = 0.5 * (lo + hi)
    return LatentState(values)


def lifted_gibbs_step(model: McmcModel, state: LatentState, rng) -> LatentState:
    """Resample one uniformly chosen latent from its full conditional."""
    names = model.latent_names()
    if not names:
        return state
    name = names[rng.integers(len(names))]
    return _update_latent(model, state, name, rng)


def _update_latent(model: McmcModel, state: LatentState, name: str, rng) -> LatentState:
    new = state.copy()
    pot = next((p for p in model.discrete_latents() if p.name == name), None)
    if pot is not None:
        logs = _discrete_conditional(model, pot, state)
        m = logs.max()
        if m == -math.inf:
            raise ModelError("all conditional weights are zero (inconsistent observations)")
        probs = np.exp(logs - m)
        probs /= probs.sum()
        new.values[name] = int(rng.choice(len(probs), p=probs))
        return new
    lat = next(l for l in model.continuous_latents if l.name == name)
    log_f = _continuous_conditional_logf(model, lat, state)
    lo, hi = lat.support
    new.values[name] = _slice_sample(log_f, float(state.values[name]), lo, hi, rng)
    return new


def _rao_blackwell_estimate(model: McmcModel, query: Query, state: LatentState) -> float:
    """Predictive probability of one unobserved ground rv of the query
    atom, averaging over the governing potential's conditional latent."""
    pots = model._by_atom.get(query.atom)
    if not pots:
        raise ModelError(f"query atom {query.atom!r} not covered by any potential")
    pot = pots[0]
    if pot.theta_atom == query.atom:
        probs = np.ones(1)
        cat = pot.cat_vector(query.atom, 0, state)
        per_comp = np.array([cat[query.value]])
    else:
        logs = (
            _discrete_conditional(model, pot, state)
            if pot.k > 1
            else np.zeros(1)
        )
        probs = np.exp(logs - _logsumexp(logs))
        if query.kind == "below":
            per_comp = np.array(
                [_kde_cdf(kde, query.threshold) for kde in pot.kde_params[query.atom]]
            )
        else:
            per_comp = pot.cat_params[query.atom][:, query.value]
    return float(probs @ per_comp)


def run_lifted_mcmc(
    model: McmcModel | VariationalModel,
    query: Query,
    obs: list[Observation] | None = None,
    steps: int = 10000,
    burn_in: int = 1000,
    seed: int = 0,
    sweep: str = "random",
) -> ChainResult:
    """Run the lifted chain and return Rao-Blackwellized query estimates.

    ``sweep`` is ``random`` (uniform latent choice) or ``systematic``.
    Deterministic given the seed.
    """
    if not steps > burn_in >= 0:
        raise ModelError("need steps > burn_in >= 0")
    if isinstance(model, VariationalModel):
        model = from_variational(model)
    model = apply_observations(model, obs or [])
    rng = np.random.default_rng(seed)
    state = initial_state(model)
    names = model.latent_names()
    trace = {n: np.empty(steps) for n in names}
    selection = {n: 0 for n in names}
    acc = 0.0
    acc_n = 0
    kept_estimates = []
    t0 = time.perf_counter()
    for it in range(steps):
        if sweep == "systematic":
            name = names[it % len(names)]
        else:
            name = names[rng.integers(len(names))]
        selection[name] += 1
        state = _update_latent(model, state, name, rng)
        for n in names:
            trace[n][it] = float(state.values[n])
        if it >= burn_in:
            est = _rao_blackwell_estimate(model, query, state)
            acc += est
            acc_n += 1
            kept_estimates.append(est)
    elapsed = time.perf_counter() - t0
    kept = np.asarray(kept_estimates)
    half = len(kept) // 2
    split = abs(float(kept[:half].mean() - kept[half:].mean())) if half > 0 else 0.0
    return ChainResult(
        trace=trace,
        estimates={query.key: acc / max(acc_n, 1)},
        steps=steps,
        burn_in=burn_in,
        seed=seed,
        step_time_us=elapsed / steps * 1e6,
        selection_counts=selection,
        split_disagreement=split,
    )


def run_ground_mcmc(
    model: McmcModel | VariationalModel,
    query: Query,
    obs: list[Observation] | None = None,
    steps: int = 10000,
    burn_in: int = 1000,
    seed: int = 0,
    population_cap: int = 5000,
) -> ChainResult:
    """Single-site Gibbs/Metropolis over every ground rv of the grounded
    variational model; same estimator interface as the lifted chain."""
    if not steps > burn_in >= 0:
        raise ModelError("need steps > burn_in >= 0")
    if isinstance(model, VariationalModel):
        model = from_variational(model)
    model = apply_observations(model, obs or [])
    n_eff = model.n_eff
    if sum(n_eff.values()) > population_cap:
        raise ModelError(f"ground population {sum(n_eff.values())} exceeds cap")
    rng = np.random.default_rng(seed)

    # Ground values per atom (unobserved rvs only) plus continuous latents.
    values: dict[str, np.ndarray] = {}
    for name, atom in model.atoms.items():
        n = n_eff[name]
        if atom.domain.is_discrete:
            values[name] = rng.integers(0, atom.domain.d, size=n).astype(float)
        else:
            pot = model._by_atom[name][0]
            kde = pot.kde_params[name][0]
            values[name] = np.full(n, kde.mean())
    state = initial_state(model)  # continuous latents only are used here

    def pot_log_density(pot: McmcPotential) -> float:
        """log potential value on the current ground values (component
        latents marginalized pointwise)."""
        logs = pot.log_weights(state).copy()
        if pot.obs_loglik is not None:
            logs = logs + pot.obs_loglik
        for a in pot.atoms:
            vals = values[a]
            if model.atoms[a].domain.is_discrete:
                for l in range(pot.k):
                    p = np.clip(pot.cat_vector(a, l, state), 1e-12, 1.0)
                    logs[l] += float(np.log(p[vals.astype(int)]).sum())
            else:
                for l in range(pot.k):
                    logs[l] += float(pot.kde_params[a][l].log_eval(vals).sum())
        return float(_logsumexp(logs))

    sites = []  # ("rv", atom, index) or ("latent", name, None)
    for name in sorted(model.atoms):
        for i in range(len(values[name])):
            sites.append(("rv", name, i))
    for lat in model.continuous_latents:
        sites.append(("latent", lat.name, None))
    disc_latents = model.discrete_latents()
    for pot in disc_latents:
        sites.append(("complatent", pot.name, None))

    trace = {query.atom: np.empty(steps)}
    selection = {"rv": 0, "latent": 0, "complatent": 0}
    acc = 0.0
    acc_n = 0
    kept = []
    prop_scale = {
        name: max(0.5, math.sqrt(model._by_atom[name][0].kde_params[name][0].variance()))
        for name, atom in model.atoms.items()
        if not atom.domain.is_discrete
    }
    t0 = time.perf_counter()
    for it in range(steps):
        kind, name, idx = sites[rng.integers(len(sites))]
        selection[kind] += 1
        if kind == "rv":
            atom = model.atoms[name]
            pots = model._by_atom[name]
            if atom.domain.is_discrete:
                logs = np.zeros(atom.domain.d)
                old = values[name][idx]
                for v in range(atom.domain.d):
                    values[name][idx] = v
                    logs[v] = sum(pot_log_density(p) for p in pots)
                values[name][idx] = old
                probs = np.exp(logs - logs.max())
                probs /= probs.sum()
                values[name][idx] = float(rng.choice(atom.domain.d, p=probs))
            else:
                old = values[name][idx]
                cur = sum(pot_log_density(p) for p in pots)
                values[name][idx] = old + prop_scale[name] * rng.standard_normal()
                new_lp = sum(pot_log_density(p) for p in pots)
                if math.log(rng.uniform()) >= new_lp - cur:
                    values[name][idx] = old
        elif kind == "latent":
            lat = next(l for l in model.continuous_latents if l.name == name)

            def log_f(theta: float) -> float:
                override = {name: theta}
                total = _coupling_log(model, state, override=override)
                tmp = state.copy()
                tmp.values[name] = theta
                for pot in model.potentials:
                    if pot.weight_latent == name or pot.theta_latent == name:
                        saved = state.values[name]
                        state.values[name] = theta
                        total += pot_log_density(pot)
                        state.values[name] = saved
                        if pot.theta_latent == name and pot.obs_counts.get(pot.theta_atom) is not None:
                            counts = pot.obs_counts[pot.theta_atom]
                            t = min(max(theta, 1e-12), 1 - 1e-12)
                            total += counts[1] * math.log(t) + counts[0] * math.log1p(-t)
                return total

            lo, hi = lat.support
            state.values[name] = _slice_sample(
                log_f, float(state.values[name]), lo, hi, rng
            )
        else:
            # Explicit component latent for static-weight potentials is
            # marginalized inside pot_log_density; nothing to update.
            pass
        # Record the tracked ground rv and the running estimate.
        tracked = values[query.atom][0] if len(values[query.atom]) else math.nan
        trace[query.atom][it] = tracked
        if it >= burn_in:
            if query.kind == "below":
                est = 1.0 if tracked < query.threshold else 0.0
            else:
                est = 1.0 if int(tracked) == query.value else 0.0
            acc += est
            acc_n += 1
            kept.append(est)
    elapsed = time.perf_counter() - t0
    kept_arr = np.asarray(kept)
    half = len(kept_arr) // 2
    split = (
        abs(float(kept_arr[:half].mean() - kept_arr[half:].mean())) if half > 0 else 0.0
    )
    return ChainResult(
        trace=trace,
        estimates={query.key: acc / max(acc_n, 1)},
        steps=steps,
        burn_in=burn_in,
        seed=seed,
        step_time_us=elapsed / steps * 1e6,
        selection_counts=selection,
        split_disagreement=split,
    )


def job_house_model(
    n_people: int = 20,
    n_houses: int = 64,
    mu_down: float = -0.3,
    mu_up: float = 0.1,
    sigma2_down: float = 0.04,
    sigma2_up: float = 0.02,
    sigma2_coupling: float = 0.04,
) -> McmcModel:
    """Employment/house-price model: a Bernoulli-parameter latent over
    the job atom, a market-direction weight latent selecting one of two
    Gaussian iid products over house prices, and a Gaussian coupling on
    the two latents."""
    atoms = {
        "Job": Atom("Job", binary_domain(), n_people),
        "HP": Atom("HP", continuous_domain((-3.0, 3.0)), n_houses),
    }
    hp_pot = McmcPotential(
        name="hp",
        atoms=("HP",),
        populations={"HP": n_houses},
        weight_latent="p_D",
        kde_params={
            "HP": [
                Kde(centers=np.array([mu_down]), bandwidth=math.sqrt(sigma2_down)),
                Kde(centers=np.array([mu_up]), bandwidth=math.sqrt(sigma2_up)),
            ]
        },
    )
    job_pot = McmcPotential(
        name="job",
        atoms=("Job",),
        populations={"Job": n_people},
        theta_atom="Job",
        theta_latent="p_job",
    )
    coupling = LatentCoupling(
        name="job_house",
        latents=("p_job", "p_D"),
        form="normal_diff",
        params={"mu": 0.0, "sigma2": sigma2_coupling},
    )
    return McmcModel(
        atoms=atoms,
        potentials=[hp_pot, job_pot],
        couplings=[coupling],
        continuous_latents=[
            ContinuousLatent("p_job", "bernoulli_param", "Job"),
            ContinuousLatent("p_D", "mixture_weight", "hp"),
        ],
    )


def exact_job_house_query(
    model: McmcModel, query: Query, obs: list[Observation] | None = None, grid: int = 201
) -> float:
    """Exact query value by 2-d quadrature over the tiny latent space
    (p_job, p_D), with the market-direction indicator summed analytically."""
    model = apply_observations(model, obs or [])
    hp = next(p for p in model.potentials if p.weight_latent == "p_D")
    job = next(p for p in model.potentials if p.theta_atom == "Job")
    coupling = model.couplings[0]
    sigma2 = float(coupling.params["sigma2"])
    counts = job.obs_counts.get("Job", np.zeros(2))
    ll_down, ll_up = (
        (hp.obs_loglik[0], hp.obs_loglik[1])
        if hp.obs_loglik is not None
        else (0.0, 0.0)
    )
    kde_down, kde_up = hp.kde_params["HP"]
    if query.kind != "below" or query.atom != "HP":
        raise ModelError("exact reference supports 'below' queries on HP")
    q_down = _kde_cdf(kde_down, query.threshold)
    q_up = _kde_cdf(kde_up, query.threshold)

    eps = 1e-9
    pj = np.linspace(eps, 1 - eps, grid)
    pd = np.linspace(eps, 1 - eps, grid)
    PJ, PD = np.meshgrid(pj, pd, indexing="ij")
    log_post = (
        -0.5 * (PJ - PD) ** 2 / sigma2
        + counts[1] * np.log(PJ)
        + counts[0] * np.log(1 - PJ)
    )
    log_mix = np.logaddexp(np.log(PD) + ll_down, np.log(1 - PD) + ll_up)
    log_post = log_post + log_mix
    post = np.exp(log_post - log_post.max())
    w_down = np.exp(np.log(PD) + ll_down - log_mix)
    integrand = w_down * q_down + (1 - w_down) * q_up
    num = np.trapezoid(np.trapezoid(post * integrand, pd, axis=1), pj)
    den = np.trapezoid(np.trapezoid(post, pd, axis=1), pj)
    return float(num / den)
