"""Core data model: atoms, parfactors, histograms, valuations, grounding.

An atom names a population of n exchangeable random variables sharing one
domain.  Discrete joint states are represented canonically by value
histograms (per-value occupancy counts); ground valuations appear only at
model construction, oracle, and shattering boundaries.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

Counts = tuple[int, ...]
HistKey = tuple[Counts, ...]


class ModelError(ValueError):
    """Invalid model structure or argument/domain mismatch."""


@dataclass(frozen=True)
class AtomDomain:
    """Value domain of one atom: binary, d-valued categorical, or continuous.

    ``support`` is an optional bounded interval used by samplers and
    quadrature on continuous domains.
    """

    kind: str  # "binary" | "categorical" | "continuous"
    d: int | None = None
    support: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind == "binary":
            object.__setattr__(self, "d", 2)
        elif self.kind == "categorical":
            if self.d is None or self.d < 2:
                raise ModelError("categorical domain requires d >= 2")
        elif self.kind == "continuous":
            if self.support is not None and not self.support[0] < self.support[1]:
                raise ModelError("continuous support must satisfy lower < upper")
        else:
            raise ModelError(f"unknown domain kind {self.kind!r}")

    @property
    def is_discrete(self) -> bool:
        return self.kind != "continuous"

    def contains(self, value) -> bool:
        if self.is_discrete:
            return isinstance(value, (int,)) and 0 <= value < self.d
        if self.support is None:
            return True
        lo, hi = self.support
        return lo <= value <= hi


def binary_domain() -> AtomDomain:
    return AtomDomain("binary")


def categorical_domain(d: int) -> AtomDomain:
    return AtomDomain("categorical", d=d)


def continuous_domain(support: tuple[float, float] | None = None) -> AtomDomain:
    return AtomDomain("continuous", support=support)


@dataclass(frozen=True)
class Atom:
    """A named exchangeable population of ``population`` ground rvs."""

    name: str
    domain: AtomDomain
    population: int

    def __post_init__(self):
        if self.population < 1:
            raise ModelError(f"atom {self.name!r}: population must be >= 1")


@dataclass(frozen=True)
class Histogram:
    """Per-value occupancy counts of one discrete atom's population."""

    atom: Atom
    counts: Counts

    def __post_init__(self):
        if not self.atom.domain.is_discrete:
            raise ModelError("histograms are defined only for discrete atoms")
        if len(self.counts) != self.atom.domain.d:
            raise ModelError("histogram length must equal the domain size")
        if any(c < 0 for c in self.counts):
            raise ModelError("histogram counts must be nonnegative")
        if sum(self.counts) != self.atom.population:
            raise ModelError("histogram counts must sum to the population")


@dataclass(frozen=True)
class Valuation:
    """Per-atom vectors of ground values, one entry per ground rv."""

    values: dict[str, tuple]

    def for_atom(self, atom: Atom) -> tuple:
        try:
            vals = self.values[atom.name]
        except KeyError:
            raise ModelError(f"valuation does not cover atom {atom.name!r}")
        if len(vals) != atom.population:
            raise ModelError(
                f"valuation for {atom.name!r} has {len(vals)} entries, "
                f"population is {atom.population}"
            )
        return vals


def histogram_of(valuation: Valuation, atom: Atom) -> Histogram:
    """Count per-value occupancies of the atom's ground values."""
    if not atom.domain.is_discrete:
        raise ModelError(f"atom {atom.name!r} is continuous; no histogram exists")
    vals = valuation.for_atom(atom)
    counts = [0] * atom.domain.d
    for v in vals:
        if not atom.domain.contains(v):
            raise ModelError(f"value {v!r} outside domain of atom {atom.name!r}")
        counts[v] += 1
    return Histogram(atom, tuple(counts))


def multinomial_coefficient(h: Histogram | Counts) -> int:
    """Number of ground valuations mapping to histogram ``h``."""
    counts = h.counts if isinstance(h, Histogram) else tuple(h)
    n = sum(counts)
    out = math.factorial(n)
    for c in counts:
        out //= math.factorial(c)
    return out


def log_multinomial_coefficient(counts: Counts) -> float:
    n = sum(counts)
    return math.lgamma(n + 1) - sum(math.lgamma(c + 1) for c in counts)


def all_histogram_counts(n: int, d: int):
    """All occupancy vectors of n items over d values (compositions of n)."""
    if d == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in all_histogram_counts(n - first, d - 1):
            yield (first,) + rest


def hist_keys(atoms: tuple[Atom, ...], populations: dict[str, int] | None = None):
    """All histogram tuples reachable over a tuple of discrete atoms."""
    spaces = []
    for a in atoms:
        n = populations[a.name] if populations else a.population
        spaces.append(list(all_histogram_counts(n, a.domain.d)))
    yield from itertools.product(*spaces)


@dataclass
class HistTable:
    """Potential over histogram tuples of one or more discrete atoms.

    Values are potentials per grouped ground valuation (footnote-7
    semantics): every ground valuation whose per-atom histograms equal the
    key shares the stored value.  Missing keys read as 0 and are recorded
    in ``missing`` the first time they are read.  When ``log_values`` is
    set, stored numbers are logs (use for populations beyond ~50, where
    linear values under/overflow).
    """

    atoms: tuple[Atom, ...]
    values: dict[HistKey, float]
    log_values: bool = False
    missing: set = field(default_factory=set)

    def __post_init__(self):
        for a in self.atoms:
            if not a.domain.is_discrete:
                raise ModelError("HistTable atoms must be discrete")
        if not self.log_values:
            if any(v < 0 for v in self.values.values()):
                raise ModelError("HistTable values must be nonnegative")
            if all(v == 0 for v in self.values.values()):
                raise ModelError("HistTable values must not be all zero")

    def lookup(self, key: HistKey) -> float:
        if key in self.values:
            v = self.values[key]
            return math.exp(v) if self.log_values else v
        self.missing.add(key)
        return 0.0

    def log_lookup(self, key: HistKey) -> float:
        if key in self.values:
            v = self.values[key]
            return v if self.log_values else (math.log(v) if v > 0 else -math.inf)
        self.missing.add(key)
        return -math.inf

    def keys(self):
        return self.values.keys()


@dataclass
class ParametricDensity:
    """Named closed-form unnormalized density over ground valuations.

    ``fn`` maps per-atom value tuples (ordered as ``atoms``) to a
    nonnegative real; ``log_fn`` is the log-space counterpart (derived
    when omitted).
    """

    name: str
    atoms: tuple[Atom, ...]
    params: dict
    fn: object = None
    log_fn: object = None

    def __post_init__(self):
        if self.fn is None and self.log_fn is None:
            factory = PARAMETRIC_FORMS.get(self.name)
            if factory is None:
                raise ModelError(f"unknown parametric form {self.name!r}")
            self.log_fn = factory(self.atoms, self.params)
        if self.fn is None:
            lf = self.log_fn
            self.fn = lambda *vals: math.exp(lf(*vals))
        if self.log_fn is None:
            f = self.fn
            self.log_fn = lambda *vals: (
                math.log(f(*vals)) if f(*vals) > 0 else -math.inf
            )


def _log_normal_pdf(x: float, mu: float, var: float) -> float:
    return -0.5 * math.log(2.0 * math.pi * var) - (x - mu) ** 2 / (2.0 * var)


def _form_linear_gaussian_pair(atoms, params):
    """Pairwise factor f_N(x - y; mu, sigma2) over every cross pair of rvs."""
    mu = float(params["mu"])
    var = float(params["sigma2"])

    def log_fn(xs, ys):
        total = 0.0
        for x in xs:
            for y in ys:
                total += _log_normal_pdf(x - y, mu, var)
        return total

    return log_fn


def _form_gaussian_iid(atoms, params):
    mu = float(params["mu"])
    var = float(params["sigma2"])

    def log_fn(*value_tuples):
        total = 0.0
        for vals in value_tuples:
            for x in vals:
                total += _log_normal_pdf(x, mu, var)
        return total

    return log_fn


def _form_gaussian_two_mode_iid(atoms, params):
    """0.5 * prod N(x; mu1, var1) + 0.5 * prod N(x; mu2, var2), per atom."""
    mu1, var1 = float(params["mu1"]), float(params["sigma2_1"])
    mu2, var2 = float(params["mu2"]), float(params["sigma2_2"])
    w1 = float(params.get("w1", 0.5))

    def log_fn(*value_tuples):
        la = math.log(w1)
        lb = math.log1p(-w1)
        for vals in value_tuples:
            for x in vals:
                la += _log_normal_pdf(x, mu1, var1)
                lb += _log_normal_pdf(x, mu2, var2)
        m = max(la, lb)
        if m == -math.inf:
            return -math.inf
        return m + math.log(math.exp(la - m) + math.exp(lb - m))

    return log_fn


PARAMETRIC_FORMS = {
    "linear_gaussian_pair": _form_linear_gaussian_pair,
    "gaussian_iid": _form_gaussian_iid,
    "gaussian_two_mode_iid": _form_gaussian_two_mode_iid,
}


@dataclass(frozen=True)
class Parfactor:
    """Parameter variables, an atom tuple, and a potential.

    Parameter-variable domains are opaque sets of constants given by
    size only; substitutions exist to count ground factors.
    """

    params: tuple[tuple[str, int], ...]
    atoms: tuple[Atom, ...]
    potential: object
    name: str = "g"

    def __post_init__(self):
        pot_atoms = getattr(self.potential, "atoms", None)
        if pot_atoms is not None:
            pot_names = tuple(
                a.name if isinstance(a, Atom) else a for a in pot_atoms
            )
            if pot_names != tuple(a.name for a in self.atoms):
                raise ModelError(
                    f"parfactor {self.name!r}: potential arity does not match atoms"
                )


@dataclass(frozen=True)
class GroundFactor:
    bindings: tuple[tuple[str, str], ...]
    atoms: tuple[Atom, ...]
    potential: object


def ground(g: Parfactor, bindings: dict[str, int] | None = None) -> list[GroundFactor]:
    """One ground factor per substitution of the parameter variables."""
    sizes = dict(g.params)
    if bindings:
        sizes.update(bindings)
    for pname, size in sizes.items():
        if size is None:
            raise ModelError(f"unbound parameter variable {pname!r}")
    names = [p for p, _ in g.params]
    spaces = [[f"{p}{i}" for i in range(sizes[p])] for p in names]
    out = []
    for combo in itertools.product(*spaces):
        out.append(GroundFactor(tuple(zip(names, combo)), g.atoms, g.potential))
    return out


@dataclass
class Rhm:
    """A relational hybrid model: declared atoms plus parfactors."""

    atoms: dict[str, Atom]
    parfactors: list[Parfactor]

    def __post_init__(self):
        for g in self.parfactors:
            for a in g.atoms:
                if a.name not in self.atoms:
                    raise ModelError(f"parfactor atom {a.name!r} is not declared")

    def atom(self, name: str) -> Atom:
        return self.atoms[name]


def eval_potential(p, v) -> float:
    """Evaluate a potential at a ground valuation or a histogram tuple.

    HistTables take histogram tuples; parametric densities take ground
    valuations; variational mixtures accept either form for discrete
    atoms (histogram evaluation uses the grouping identity, i.e. the
    binomial/multinomial pmf).
    """
    out = log_eval_potential(p, v)
    return math.exp(out) if out > -math.inf else 0.0


def log_eval_potential(p, v) -> float:
    from mixlift.continuous import KdeMixture
    from mixlift.discrete import MixtureOfIidDiscrete

    if isinstance(p, HistTable):
        key = _as_hist_key(v, p.atoms)
        return p.log_lookup(key)
    if isinstance(p, ParametricDensity):
        if isinstance(v, Valuation):
            vals = [v.for_atom(a) for a in p.atoms]
        else:
            vals = list(v)
        if len(vals) != len(p.atoms):
            raise ModelError("valuation arity does not match the potential")
        return p.log_fn(*vals)
    if isinstance(p, MixtureOfIidDiscrete):
        key = _as_hist_key_names(v, p.atoms, p.populations)
        return p.log_eval(key)
    if isinstance(p, KdeMixture):
        return p.log_eval_valuation(v)
    raise ModelError(f"cannot evaluate potential of type {type(p).__name__}")


def _as_hist_key(v, atoms: tuple[Atom, ...]) -> HistKey:
    if isinstance(v, Valuation):
        return tuple(histogram_of(v, a).counts for a in atoms)
    key = []
    for part, a in zip(v, atoms):
        counts = part.counts if isinstance(part, Histogram) else tuple(part)
        if len(counts) != a.domain.d or sum(counts) != a.population:
            raise ModelError(f"histogram does not match atom {a.name!r}")
        key.append(counts)
    if len(key) != len(atoms):
        raise ModelError("histogram tuple arity does not match the potential")
    return tuple(key)


def _as_hist_key_names(v, atom_names, populations) -> HistKey:
    if isinstance(v, Valuation):
        raise ModelError(
            "mixture histogram evaluation requires histogram tuples; "
            "convert valuations with histogram_of first"
        )
    key = []
    for part, name in zip(v, atom_names):
        counts = part.counts if isinstance(part, Histogram) else tuple(part)
        if sum(counts) != populations[name]:
            raise ModelError(f"histogram does not match population of {name!r}")
        key.append(counts)
    return tuple(key)


def shatter_non_exchangeable(model: Rhm, atom: Atom) -> Rhm:
    """Replace one atom by population-many singleton atoms.

    Potentials touching the atom are wrapped so the joint density over
    ground valuations is unchanged; callers flag the atom themselves.
    """
    if atom.name not in model.atoms:
        raise ModelError(f"atom {atom.name!r} is not declared")
    n = atom.population
    singles = tuple(
        Atom(f"{atom.name}__{i}", atom.domain, 1) for i in range(n)
    )
    new_atoms = {a.name: a for a in model.atoms.values() if a.name != atom.name}
    for s in singles:
        new_atoms[s.name] = s

    new_parfactors = []
    for g in model.parfactors:
        if all(a.name != atom.name for a in g.atoms):
            new_parfactors.append(g)
            continue
        expanded: list[Atom] = []
        reassembly = []  # (kind, payload) per original slot
        for a in g.atoms:
            if a.name == atom.name:
                start = len(expanded)
                expanded.extend(singles)
                reassembly.append(("merge", (start, n)))
            else:
                reassembly.append(("single", len(expanded)))
                expanded.append(a)
        inner = g.potential

        def log_fn(*vals, _inner=inner, _plan=tuple(reassembly), _atoms=g.atoms):
            regrouped = []
            for kind, payload in _plan:
                if kind == "single":
                    regrouped.append(vals[payload])
                else:
                    start, count = payload
                    merged = tuple(vals[start + i][0] for i in range(count))
                    regrouped.append(merged)
            if isinstance(_inner, HistTable):
                key = tuple(
                    _counts_of(vs, a.domain.d) for vs, a in zip(regrouped, _atoms)
                )
                return _inner.log_lookup(key)
            return log_eval_potential(_inner, regrouped)

        pot = ParametricDensity(
            name=f"shattered:{g.name}",
            atoms=tuple(expanded),
            params={},
            log_fn=log_fn,
        )
        new_parfactors.append(
            Parfactor(g.params, tuple(expanded), pot, name=f"{g.name}__shattered")
        )
    return Rhm(new_atoms, new_parfactors)


def _counts_of(vals: tuple, d: int) -> Counts:
    counts = [0] * d
    for v in vals:
        counts[v] += 1
    return tuple(counts)
