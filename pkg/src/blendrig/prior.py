"""Grouped, conflict-aware random sampling of plausible expressions."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .mesh import ARKIT_NAMES

PRIOR_SCHEMA = "blendrig-prior"


class PriorSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Group:
    name: str
    members: tuple
    region: str
    symmetric: bool = False


@dataclass(frozen=True)
class Rule:
    kind: str  # "le" (lhs <= rhs) or "exclusive"
    names: tuple

    def describe(self) -> str:
        if self.kind == "le":
            return f"{self.names[0]} <= {self.names[1]}"
        return "at most one of " + ", ".join(self.names)


@dataclass(frozen=True)
class Violation:
    rule: str
    names: tuple
    message: str


@dataclass(frozen=True, eq=False)
class PriorSpec:
    names: tuple
    regions: dict  # region -> max simultaneous groups
    groups: tuple
    rules: tuple
    ranges: np.ndarray  # (52, 2) activation range per coefficient

    def __post_init__(self):
        idx = {n: i for i, n in enumerate(self.names)}
        seen = {}
        for g in self.groups:
            if g.region not in self.regions:
                raise PriorSpecError(f"group {g.name!r} names unknown region {g.region!r}")
            if g.symmetric and len(g.members) != 2:
                raise PriorSpecError(f"symmetric group {g.name!r} must be a left/right pair")
            for m in g.members:
                if m not in idx:
                    raise PriorSpecError(f"group {g.name!r} names unknown coefficient {m!r}")
                if m in seen:
                    raise PriorSpecError(f"{m!r} is in groups {seen[m]!r} and {g.name!r}")
                seen[m] = g.name
        missing = set(self.names) - set(seen)
        if missing:
            raise PriorSpecError(f"coefficients without a group: {sorted(missing)}")
        for r in self.rules:
            if r.kind not in ("le", "exclusive"):
                raise PriorSpecError(f"unknown rule type {r.kind!r}")
            if r.kind == "le" and len(r.names) != 2:
                raise PriorSpecError("ordering rules compare exactly two coefficients")
            for n in r.names:
                if n not in idx:
                    raise PriorSpecError(f"rule {r.describe()!r} names unknown coefficient {n!r}")
        rng = np.asarray(self.ranges, dtype=float)
        if rng.shape != (len(self.names), 2) or np.any(rng[:, 0] < 0) or np.any(rng[:, 1] > 1) \
                or np.any(rng[:, 0] > rng[:, 1]):
            raise PriorSpecError("activation ranges must satisfy 0 <= lo <= hi <= 1")
        object.__setattr__(self, "ranges", rng)
        object.__setattr__(self, "_index", idx)

    def index(self, name: str) -> int:
        return self._index[name]

    def member_indices(self, group: Group) -> np.ndarray:
        return np.array([self._index[m] for m in group.members])

    def groups_in(self, region: str):
        return [g for g in self.groups if g.region == region]

    def to_dict(self) -> dict:
        return {
            "schema": PRIOR_SCHEMA,
            "version": 1,
            "regions": {r: {"max_active": int(k)} for r, k in self.regions.items()},
            "groups": {g.name: {"members": list(g.members), "region": g.region, "symmetric": g.symmetric}
                       for g in self.groups},
            "ranges": {n: list(map(float, self.ranges[i])) for i, n in enumerate(self.names)
                       if tuple(self.ranges[i]) != (0.0, 1.0)},
            "rules": [{"type": "le", "lhs": r.names[0], "rhs": r.names[1]} if r.kind == "le"
                      else {"type": "exclusive", "names": list(r.names)} for r in self.rules],
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def prior_from_dict(d: dict, names=ARKIT_NAMES) -> PriorSpec:
    if d.get("schema", PRIOR_SCHEMA) != PRIOR_SCHEMA:
        raise PriorSpecError(f"not a prior spec: schema={d.get('schema')!r}")
    names = tuple(names)
    regions = {r: int(v["max_active"]) for r, v in d["regions"].items()}
    groups = tuple(
        Group(k, tuple(v["members"]), v["region"], bool(v.get("symmetric", False)))
        for k, v in d["groups"].items()
    )
    rules = []
    for r in d.get("rules", []):
        if r["type"] == "le":
            rules.append(Rule("le", (r["lhs"], r["rhs"])))
        else:
            rules.append(Rule(r["type"], tuple(r.get("names", ()))))
    ranges = np.tile([0.0, 1.0], (len(names), 1))
    for n, (lo, hi) in d.get("ranges", {}).items():
        if n not in names:
            raise PriorSpecError(f"range given for unknown coefficient {n!r}")
        ranges[names.index(n)] = (lo, hi)
    return PriorSpec(names, regions, groups, tuple(rules), ranges)


def load_prior(path=None) -> PriorSpec:
    """Read a prior spec file; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("blendrig").joinpath("data/default_prior.json").read_text()
    else:
        text = Path(path).read_text()
    return prior_from_dict(json.loads(text))


def default_prior() -> PriorSpec:
    return load_prior(None)


def _project_rules(w: np.ndarray, spec: PriorSpec):
    for r in spec.rules:
        idx = [spec.index(n) for n in r.names]
        if r.kind == "le":
            a, b = idx
            w[a] = min(w[a], w[b])
        else:
            vals = w[idx]
            keep = idx[int(np.argmax(vals))]
            for i in idx:
                if i != keep:
                    w[i] = 0.0


def sample_coefficients(spec: PriorSpec, seed, force_symmetric: bool | None = None) -> np.ndarray:
    """Draw one coefficient vector.

    ``seed`` is anything ``numpy.random.default_rng`` accepts (an int, a
    sequence of ints or a ``SeedSequence``) or a ``Generator`` to draw from.
    ``force_symmetric`` pins the coin flip for paired groups.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = np.zeros(len(spec.names))
    lo, hi = spec.ranges[:, 0], spec.ranges[:, 1]
    for region, cap in spec.regions.items():
        groups = spec.groups_in(region)
        k = int(rng.integers(0, min(cap, len(groups)) + 1))
        for gi in np.sort(rng.choice(len(groups), size=k, replace=False)):
            g = groups[gi]
            idx = spec.member_indices(g)
            if g.symmetric:
                same = bool(rng.integers(2)) if force_symmetric is None else force_symmetric
                if same:
                    i = idx[0]
                    w[idx] = rng.uniform(lo[i], hi[i])
                    continue
            w[idx] = rng.uniform(lo[idx], hi[idx])
    _project_rules(w, spec)
    return w


def sample_batch(spec: PriorSpec, n: int, seed: int) -> np.ndarray:
    """``n`` samples; sample ``i`` uses the independent stream ``(seed, i)``."""
    return np.stack([sample_coefficients(spec, [seed, i]) for i in range(n)])


def active_groups(w, spec: PriorSpec, region: str, eps: float = 0.0) -> list:
    w = np.asarray(w)
    return [g.name for g in spec.groups_in(region) if np.any(w[spec.member_indices(g)] > eps)]


def validate(w, spec: PriorSpec) -> list:
    """Every range, region-cardinality and conflict-rule violation of ``w``."""
    w = np.asarray(w, dtype=float)
    out = []
    if w.shape != (len(spec.names),):
        return [Violation("shape", (), f"expected {len(spec.names)} coefficients, got {w.shape}")]
    for i, n in enumerate(spec.names):
        if not (0.0 <= w[i] <= spec.ranges[i, 1]):
            out.append(Violation("range", (n,), f"{n}={w[i]:.6g} outside [0, {spec.ranges[i, 1]:g}]"))
    for region, cap in spec.regions.items():
        act = active_groups(w, spec, region)
        if len(act) > cap:
            out.append(Violation(f"max_active:{region}", tuple(act),
                                 f"{len(act)} active {region} groups exceed the cap of {cap}"))
    for r in spec.rules:
        idx = [spec.index(n) for n in r.names]
        if r.kind == "le" and w[idx[0]] > w[idx[1]]:
            out.append(Violation("le", r.names, f"{r.describe()} violated "
                                 f"({w[idx[0]]:.6g} > {w[idx[1]]:.6g})"))
        elif r.kind == "exclusive":
            on = tuple(n for n, i in zip(r.names, idx) if w[i] > 0)
            if len(on) > 1:
                out.append(Violation("exclusive", on, f"{r.describe()} violated by {', '.join(on)}"))
    return out

