"""Line-oriented model file format plus a JSON export of the same schema.

The text format is human-writable: explicit section headers (ATOMS,
PARFACTORS, LATENT-COUPLINGS, EXTENDIBILITY), one declaration per line,
with JSON payloads for numeric tables.  ``serialize_model`` emits a
canonical form (sorted entries, sorted JSON keys) so that parse then
serialize is the identity on canonical documents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from mixlift.continuous import Kde, KdeMixture
from mixlift.discrete import MixtureOfIidDiscrete
from mixlift.lve import ContinuousLatent, LatentCoupling, VariationalModel
from mixlift.model import (
    Atom,
    HistTable,
    ModelError,
    ParametricDensity,
    Parfactor,
    Rhm,
    binary_domain,
    categorical_domain,
    continuous_domain,
)

_SECTIONS = ("ATOMS", "PARFACTORS", "LATENT-COUPLINGS", "EXTENDIBILITY")


@dataclass
class ParfactorSpec:
    """One parsed parfactor line: built potential plus raw payload."""

    name: str
    atom_names: tuple[str, ...]
    kind: str
    payload: dict
    potential: object = None


@dataclass
class ModelDocument:
    """Parsed model file: atoms, parfactors, latents, extension specs."""

    atoms: dict[str, Atom] = field(default_factory=dict)
    parfactors: list[ParfactorSpec] = field(default_factory=list)
    couplings: list[LatentCoupling] = field(default_factory=list)
    latents: list[ContinuousLatent] = field(default_factory=list)
    extendibility: dict[str, int] = field(default_factory=dict)

    def is_variational(self) -> bool:
        return all(
            s.kind in ("mixture_discrete", "mixture_kde", "bernoulli_theta")
            for s in self.parfactors
        )


def _parse_atom(fields: list[str]) -> Atom:
    if len(fields) < 3:
        raise ModelError(f"atom line needs name, kind, population: {fields}")
    name, kind = fields[0], fields[1]
    if kind == "binary":
        return Atom(name, binary_domain(), int(fields[2]))
    if kind == "categorical":
        if len(fields) < 4:
            raise ModelError("categorical atom needs a value count and population")
        return Atom(name, categorical_domain(int(fields[2])), int(fields[3]))
    if kind == "continuous":
        support = None
        if len(fields) >= 5:
            support = (float(fields[3]), float(fields[4]))
        return Atom(name, continuous_domain(support), int(fields[2]))
    raise ModelError(f"unknown atom kind {kind!r}")


def _key_from_json(raw) -> tuple:
    return tuple(tuple(int(c) for c in counts) for counts in raw)


def _build_potential(spec: ParfactorSpec, atoms: dict[str, Atom]):
    atom_objs = tuple(atoms[a] for a in spec.atom_names)
    pops = {a.name: a.population for a in atom_objs}
    pl = spec.payload
    if spec.kind == "histogram":
        values = {_key_from_json(k): float(v) for k, v in pl["rows"]}
        return HistTable(atoms=atom_objs, values=values, log_values=bool(pl.get("log", False)))
    if spec.kind == "parametric":
        return ParametricDensity(
            name=pl["form"], atoms=atom_objs, params=dict(pl["params"])
        )
    if spec.kind == "mixture_discrete":
        return MixtureOfIidDiscrete(
            weights=np.asarray(pl["weights"], dtype=float),
            params={a: np.asarray(p, dtype=float) for a, p in pl["params"].items()},
            populations=pops,
            atoms=tuple(spec.atom_names),
        )
    if spec.kind == "mixture_kde":
        kdes = {
            a: [
                Kde(
                    centers=np.asarray(k["centers"], dtype=float),
                    bandwidth=float(k["bandwidth"]),
                    weights=None
                    if k.get("weights") is None
                    else np.asarray(k["weights"], dtype=float),
                )
                for k in ks
            ]
            for a, ks in pl["kdes"].items()
        }
        cats = {
            a: np.asarray(p, dtype=float) for a, p in pl.get("cats", {}).items()
        }
        return KdeMixture(
            weights=np.asarray(pl["weights"], dtype=float),
            kdes=kdes,
            populations=pops,
            atoms=tuple(spec.atom_names),
            cats=cats,
        )
    if spec.kind == "bernoulli_theta":
        if "latent" not in pl:
            raise ModelError("bernoulli_theta payload needs a 'latent' name")
        return None  # built by the MCMC view; no standalone potential
    raise ModelError(f"unknown parfactor kind {spec.kind!r}")


def parse_model(text: str) -> ModelDocument:
    doc = ModelDocument()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in _SECTIONS:
            section = line
            continue
        if section is None:
            raise ModelError(f"line {lineno}: content before any section header")
        try:
            _parse_line(doc, section, line)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise ModelError(f"line {lineno}: {exc}") from exc
    for spec in doc.parfactors:
        for a in spec.atom_names:
            if a not in doc.atoms:
                raise ModelError(f"parfactor {spec.name!r} uses undeclared atom {a!r}")
        spec.potential = _build_potential(spec, doc.atoms)
    return doc


def _parse_line(doc: ModelDocument, section: str, line: str) -> None:
    if section == "ATOMS":
        fields = line.split()
        if fields[0] == "atom":
            fields = fields[1:]
        atom = _parse_atom(fields)
        if atom.name in doc.atoms:
            raise ModelError(f"atom {atom.name!r} declared twice")
        doc.atoms[atom.name] = atom
        return
    if section == "PARFACTORS":
        if line.startswith("parfactor "):
            line = line.split(None, 1)[1]
        fields = line.split(None, 3)
        if len(fields) < 3:
            raise ModelError(f"parfactor line needs name, atoms, kind: {line!r}")
        name, atoms_csv, kind = fields[0], fields[1], fields[2]
        payload = json.loads(fields[3]) if len(fields) > 3 and fields[3] else {}
        doc.parfactors.append(
            ParfactorSpec(
                name=name,
                atom_names=tuple(atoms_csv.split(",")),
                kind=kind,
                payload=payload,
            )
        )
        return
    if section == "LATENT-COUPLINGS":
        fields = line.split(None, 4)
        if fields[0] == "coupling":
            if len(fields) < 4:
                raise ModelError(f"coupling line needs name, form, latents: {line!r}")
            payload = json.loads(fields[4]) if len(fields) > 4 else {}
            doc.couplings.append(
                LatentCoupling(
                    name=fields[1],
                    latents=tuple(fields[3].split(",")),
                    form=fields[2],
                    params=payload,
                )
            )
            return
        if fields[0] == "latent":
            parts = line.split()
            if len(parts) < 4:
                raise ModelError(f"latent line needs name, role, target: {line!r}")
            support = (0.0, 1.0)
            if len(parts) >= 6:
                support = (float(parts[4]), float(parts[5]))
            doc.latents.append(
                ContinuousLatent(
                    name=parts[1], role=parts[2], target=parts[3], support=support
                )
            )
            return
        raise ModelError(f"unknown latent-coupling declaration: {line!r}")
    if section == "EXTENDIBILITY":
        parts = line.split()
        if parts[0] == "extend":
            parts = parts[1:]
        if len(parts) != 2:
            raise ModelError(f"extendibility line needs atom and n_bar: {line!r}")
        doc.extendibility[parts[0]] = int(parts[1])
        return
    raise ModelError(f"unknown section {section!r}")


def _json_compact(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _payload_of(spec: ParfactorSpec) -> dict:
    """Canonical payload rebuilt from the potential when one exists."""
    pot = spec.potential
    if isinstance(pot, HistTable):
        rows = sorted(
            ([[list(c) for c in k], float(v)] for k, v in pot.values.items()),
            key=lambda r: r[0],
        )
        out = {"rows": rows}
        if pot.log_values:
            out["log"] = True
        return out
    if isinstance(pot, ParametricDensity):
        return {"form": pot.name, "params": {k: float(v) for k, v in pot.params.items()}}
    if isinstance(pot, MixtureOfIidDiscrete):
        return {
            "weights": np.asarray(pot.weights, dtype=float).tolist(),
            "params": {
                a: np.asarray(p, dtype=float).tolist() for a, p in pot.params.items()
            },
        }
    if isinstance(pot, KdeMixture):
        return {
            "weights": np.asarray(pot.weights, dtype=float).tolist(),
            "kdes": {
                a: [
                    {
                        "centers": np.asarray(k.centers, dtype=float).tolist(),
                        "bandwidth": float(k.bandwidth),
                        "weights": None
                        if k.weights is None
                        else np.asarray(k.weights, dtype=float).tolist(),
                    }
                    for k in ks
                ]
                for a, ks in pot.kdes.items()
            },
            "cats": {
                a: np.asarray(p, dtype=float).tolist() for a, p in pot.cats.items()
            },
        }
    return dict(spec.payload)


def serialize_model(doc: ModelDocument) -> str:
    lines = ["ATOMS"]
    for name in sorted(doc.atoms):
        a = doc.atoms[name]
        if a.domain.kind == "binary":
            lines.append(f"atom {a.name} binary {a.population}")
        elif a.domain.kind == "categorical":
            lines.append(f"atom {a.name} categorical {a.domain.d} {a.population}")
        else:
            if a.domain.support is not None:
                lo, hi = a.domain.support
                lines.append(f"atom {a.name} continuous {a.population} {lo!r} {hi!r}")
            else:
                lines.append(f"atom {a.name} continuous {a.population}")
    lines.append("PARFACTORS")
    for spec in sorted(doc.parfactors, key=lambda s: s.name):
        payload = _json_compact(_payload_of(spec))
        atoms_csv = ",".join(spec.atom_names)
        lines.append(f"parfactor {spec.name} {atoms_csv} {spec.kind} {payload}")
    if doc.couplings or doc.latents:
        lines.append("LATENT-COUPLINGS")
        for c in sorted(doc.couplings, key=lambda c: c.name):
            payload = _json_compact({k: float(v) for k, v in c.params.items()})
            lines.append(f"coupling {c.name} {c.form} {','.join(c.latents)} {payload}")
        for l in sorted(doc.latents, key=lambda l: l.name):
            lo, hi = l.support
            lines.append(f"latent {l.name} {l.role} {l.target} {lo!r} {hi!r}")
    if doc.extendibility:
        lines.append("EXTENDIBILITY")
        for atom in sorted(doc.extendibility):
            lines.append(f"extend {atom} {doc.extendibility[atom]}")
    return "\n".join(lines) + "\n"


def to_json_document(doc: ModelDocument) -> str:
    """Machine-oriented export of the same schema."""
    atoms = []
    for name in sorted(doc.atoms):
        a = doc.atoms[name]
        entry = {"name": a.name, "kind": a.domain.kind, "population": a.population}
        if a.domain.kind == "categorical":
            entry["d"] = a.domain.d
        if a.domain.kind == "continuous" and a.domain.support is not None:
            entry["support"] = list(a.domain.support)
        atoms.append(entry)
    obj = {
        "atoms": atoms,
        "parfactors": [
            {
                "name": s.name,
                "atoms": list(s.atom_names),
                "kind": s.kind,
                "payload": _payload_of(s),
            }
            for s in sorted(doc.parfactors, key=lambda s: s.name)
        ],
        "couplings": [
            {
                "name": c.name,
                "form": c.form,
                "latents": list(c.latents),
                "params": {k: float(v) for k, v in c.params.items()},
            }
            for c in sorted(doc.couplings, key=lambda c: c.name)
        ],
        "latents": [
            {
                "name": l.name,
                "role": l.role,
                "target": l.target,
                "support": list(l.support),
            }
            for l in sorted(doc.latents, key=lambda l: l.name)
        ],
        "extendibility": {a: doc.extendibility[a] for a in sorted(doc.extendibility)},
    }
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def from_json_document(text: str) -> ModelDocument:
    obj = json.loads(text)
    doc = ModelDocument()
    for entry in obj.get("atoms", []):
        kind = entry["kind"]
        if kind == "binary":
            a = Atom(entry["name"], binary_domain(), int(entry["population"]))
        elif kind == "categorical":
            a = Atom(entry["name"], categorical_domain(int(entry["d"])), int(entry["population"]))
        else:
            support = tuple(entry["support"]) if entry.get("support") else None
            a = Atom(entry["name"], continuous_domain(support), int(entry["population"]))
        doc.atoms[a.name] = a
    for entry in obj.get("parfactors", []):
        doc.parfactors.append(
            ParfactorSpec(
                name=entry["name"],
                atom_names=tuple(entry["atoms"]),
                kind=entry["kind"],
                payload=entry["payload"],
            )
        )
    for entry in obj.get("couplings", []):
        doc.couplings.append(
            LatentCoupling(
                name=entry["name"],
                latents=tuple(entry["latents"]),
                form=entry["form"],
                params=entry["params"],
            )
        )
    for entry in obj.get("latents", []):
        doc.latents.append(
            ContinuousLatent(
                name=entry["name"],
                role=entry["role"],
                target=entry["target"],
                support=tuple(entry["support"]),
            )
        )
    doc.extendibility = {
        a: int(v) for a, v in obj.get("extendibility", {}).items()
    }
    for spec in doc.parfactors:
        spec.potential = _build_potential(spec, doc.atoms)
    return doc


def build_rhm(doc: ModelDocument) -> Rhm:
    """Relational model view: every parfactor must have a potential."""
    parfactors = []
    for spec in doc.parfactors:
        if spec.potential is None:
            raise ModelError(
                f"parfactor {spec.name!r} ({spec.kind}) has no standalone potential"
            )
        atom_objs = tuple(doc.atoms[a] for a in spec.atom_names)
        logvars = tuple(
            (str(n), int(s)) for n, s in spec.payload.get("logvars", [])
        )
        parfactors.append(
            Parfactor(params=logvars, atoms=atom_objs, potential=spec.potential, name=spec.name)
        )
    return Rhm(atoms=dict(doc.atoms), parfactors=parfactors)


def build_variational(doc: ModelDocument) -> VariationalModel:
    """Variational view: requires every parfactor to be a fitted mixture."""
    pots = []
    names = []
    for spec in doc.parfactors:
        if spec.kind not in ("mixture_discrete", "mixture_kde"):
            raise ModelError(
                f"parfactor {spec.name!r} is {spec.kind}, not a fitted mixture"
            )
        pots.append(spec.potential)
        names.append(spec.name)
    return VariationalModel(
        atoms=dict(doc.atoms),
        potentials=pots,
        names=names,
        couplings=list(doc.couplings),
        latents=list(doc.latents),
    )


def build_mcmc(doc: ModelDocument):
    """Chain-ready view; supports weight-latent and Bernoulli-parameter
    potentials that the plain variational view cannot express."""
    from mixlift.mcmc import McmcModel, McmcPotential

    pots = []
    for spec in doc.parfactors:
        pops = {a: doc.atoms[a].population for a in spec.atom_names}
        if spec.kind == "bernoulli_theta":
            pots.append(
                McmcPotential(
                    name=spec.name,
                    atoms=spec.atom_names,
                    populations=pops,
                    theta_atom=spec.atom_names[0],
                    theta_latent=spec.payload["latent"],
                )
            )
            continue
        pot = spec.potential
        weight_latent = spec.payload.get("weight_latent")
        if isinstance(pot, MixtureOfIidDiscrete):
            pots.append(
                McmcPotential(
                    name=spec.name,
                    atoms=spec.atom_names,
                    populations=pops,
                    weights=None if weight_latent else np.asarray(pot.weights, dtype=float),
                    weight_latent=weight_latent,
                    cat_params={a: np.asarray(p) for a, p in pot.params.items()},
                )
            )
        elif isinstance(pot, KdeMixture):
            pots.append(
                McmcPotential(
                    name=spec.name,
                    atoms=spec.atom_names,
                    populations=pops,
                    weights=None if weight_latent else np.asarray(pot.weights, dtype=float),
                    weight_latent=weight_latent,
                    cat_params={a: np.asarray(p) for a, p in pot.cats.items()},
                    kde_params={a: list(ks) for a, ks in pot.kdes.items()},
                )
            )
        else:
            raise ModelError(
                f"parfactor {spec.name!r} ({spec.kind}) is not chain-ready; lift it first"
            )
    return McmcModel(
        atoms=dict(doc.atoms),
        potentials=pots,
        couplings=list(doc.couplings),
        continuous_latents=list(doc.latents),
    )
