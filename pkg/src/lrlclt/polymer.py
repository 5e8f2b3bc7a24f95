"""Bonds, polymers, polymer enumeration, single-site densities and polymer activities."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from lrlclt.errors import BudgetExceeded, DomainError
from lrlclt.gibbs import decode
from lrlclt.model import BoundaryCondition, Region, Site, SpinModel, as_region, distance, exterior_field, pair_couplings

Bond = tuple  # sorted tuple of one or two distinct sites

ACTIVITY_KINDS = ("zeta_t", "zeta_hat", "eta_c", "zeta_tilde")
ACTIVITY_BUDGET = 2**20
POLYMER_BUDGET = 2**21


def make_bond(*sites: Site) -> Bond:
    sites = tuple(sorted({tuple(s) for s in sites}))
    if len(sites) not in (1, 2):
        raise DomainError(f"a bond holds one or two distinct sites, got {sites}")
    return sites


def is_connected(bonds: Iterable[Bond]) -> bool:
    """True iff any two bonds are joined by a chain of pairwise-intersecting bonds."""
    bonds = [tuple(b) for b in bonds]
    if not bonds:
        raise DomainError("connectivity of an empty bond set is undefined")
    by_site: dict = {}
    for i, b in enumerate(bonds):
        for s in b:
            by_site.setdefault(s, []).append(i)
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for s in bonds[i]:
            for j in by_site[s]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
    return len(seen) == len(bonds)


@dataclass(frozen=True)
class Polymer:
    """A connected set of singleton and pair bonds."""

    bonds: tuple[Bond, ...]

    def __post_init__(self):
        bonds = tuple(sorted({make_bond(*b) for b in self.bonds}, key=_bond_key))
        if not is_connected(bonds):
            raise DomainError(f"bonds {bonds} do not form a connected polymer")
        object.__setattr__(self, "bonds", bonds)

    @cached_property
    def support(self) -> tuple[Site, ...]:
        return tuple(sorted({s for b in self.bonds for s in b}))

    @property
    def gamma1(self) -> tuple[Bond, ...]:
        return tuple(b for b in self.bonds if len(b) == 1)

    @property
    def gamma2(self) -> tuple[Bond, ...]:
        return tuple(b for b in self.bonds if len(b) == 2)

    @property
    def in_r2(self) -> bool:
        """Only pair bonds."""
        return all(len(b) == 2 for b in self.bonds)

    def __len__(self) -> int:
        return len(self.bonds)

    def sort_key(self):
        return (self.support[0], len(self.bonds), tuple(_bond_key(b) for b in self.bonds))

    def to_json(self) -> dict:
        return {"sites": [list(s) for s in self.support], "bonds": [[list(s) for s in b] for b in self.bonds]}


def _bond_key(b: Bond):
    # singletons first at equal leading site, then by the partner
    return (b[0], len(b), b[1:])


def candidate_bonds(region, max_pair_range: int, restrict_to_r2: bool = False) -> list[Bond]:
    region = as_region(region)
    sites = region.sites
    bonds = [] if restrict_to_r2 else [(s,) for s in sites]
    for i, x in enumerate(sites):
        for y in sites[i + 1:]:
            if distance(x, y) <= max_pair_range:
                bonds.append((x, y))
    return sorted(bonds, key=_bond_key)


def enumerate_polymers(region, phi, max_bonds: int, max_pair_range: int | None = None,
                       restrict_to_r2: bool = False, budget: int = POLYMER_BUDGET) -> Iterator[Polymer]:
    """Every polymer supported in ``region`` with at most ``max_bonds`` bonds, in canonical order.

    Connected bond sets are grown with the ESU scheme on the bond intersection
    graph, which produces each set exactly once.
    """
    if max_bonds < 1:
        raise DomainError("max_bonds must be at least 1")
    radius = phi.radius
    if max_pair_range is None:
        max_pair_range = radius
    if max_pair_range > radius:
        raise DomainError(f"max_pair_range {max_pair_range} exceeds the truncation radius {radius}")
    bonds = candidate_bonds(region, max_pair_range, restrict_to_r2)
    by_site: dict = {}
    for i, b in enumerate(bonds):
        for s in b:
            by_site.setdefault(s, []).append(i)
    nbrs = [sorted({j for s in b for j in by_site[s]} - {i}) for i, b in enumerate(bonds)]

    found: list[tuple[int, ...]] = []

    def extend(sub: list[int], closed: set[int], ext: list[int], root: int):
        found.append(tuple(sub))
        if len(found) > budget:
            raise BudgetExceeded("polymer enumeration", len(found), budget)
        if len(sub) == max_bonds:
            return
        ext = list(ext)
        while ext:
            w = ext.pop()
            fresh = [u for u in nbrs[w] if u > root and u not in closed]
            extend(sub + [w], closed | set(fresh), ext + fresh, root)

    for v in range(len(bonds)):
        first = [u for u in nbrs[v] if u > v]
        extend([v], {v, *nbrs[v]}, first, v)

    polymers = [Polymer(tuple(bonds[i] for i in ids)) for ids in found]
    polymers.sort(key=Polymer.sort_key)
    return iter(polymers)


@dataclass(frozen=True, eq=False)
class ActivityContext:
    """Everything an activity needs: the measure's data, t and the variance scale D_k."""

    model: SpinModel
    region: Region
    beta: float
    bc: BoundaryCondition
    t: float = 0.0
    D_k: float | None = None
    masses: np.ndarray = field(default=None, repr=False)
    log_norms: np.ndarray = field(default=None, repr=False)
    couplings: np.ndarray = field(default=None, repr=False)

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.region.sites)}

    @property
    def scaled_t(self) -> float:
        if self.t == 0:
            return 0.0
        if self.D_k is None or not self.D_k > 0:
            raise DomainError("t != 0 activities need a positive D_k")
        return self.t / math.sqrt(self.D_k)

    @cached_property
    def phase(self) -> np.ndarray:
        """exp(i t f(e) / sqrt(D_k)) per label."""
        return np.exp(1j * self.scaled_t * self.model.space.f_array)

    def pair_xi(self, x: Site, y: Site) -> np.ndarray:
        """q x q table of exp(-beta Phi_{x,y}) - 1 (pair factor included)."""
        c = self.couplings[self.index[x], self.index[y]]
        return np.expm1(-self.beta * c * self.model.potential.matrix_array)


def make_context(model: SpinModel, region, beta: float, bc: BoundaryCondition, t: float = 0.0,
                 D_k: float | None = None) -> ActivityContext:
    region = as_region(region)
    h = exterior_field(model, region, bc)
    log_w = np.log(model.space.weight_array)[None, :] - beta * h
    log_norms = np.logaddexp.reduce(log_w, axis=1)
    masses = np.exp(log_w - log_norms[:, None])
    ctx = ActivityContext(model, region, float(beta), bc, float(t), D_k, masses, log_norms,
                          pair_couplings(model, region))
    ctx.scaled_t  # validates D_k
    return ctx


def single_site_density(ctx: ActivityContext, x: Site) -> np.ndarray:
    """p_x(e) proportional to lambda(e) exp(-beta h_x(e)), as a vector over labels."""
    if x not in ctx.index:
        raise DomainError(f"site {x} is outside the region")
    return ctx.masses[ctx.index[x]].copy()


def activity(ctx: ActivityContext, R: Polymer | None, kind: str = "zeta_t", c: float = 0.0) -> complex | float:
    """Activity of ``R`` by direct summation over the labels of its support.

    zeta_t: singleton bonds carry exp(i t f / sqrt(D_k)) - 1, pair bonds exp(-beta Phi) - 1.
    zeta_hat: pair bonds only, with |exp(-beta Phi) - 1|; equals 1 on the empty polymer.
    eta_c: exp(c |support|) * zeta_hat.
    zeta_tilde: pair bonds only, integrand multiplied by exp(i t f / sqrt(D_k)) on every site.
    """
    if kind not in ACTIVITY_KINDS:
        raise DomainError(f"unknown activity kind {kind!r}")
    if R is None or (isinstance(R, Polymer) is False and not R):
        if kind in ("zeta_hat", "eta_c"):
            return 1.0
        raise DomainError(f"{kind} is not defined on the empty polymer")
    if kind != "zeta_t" and not R.in_r2:
        raise DomainError(f"{kind} is defined on pair-bond polymers only")

    sites = R.support
    m, q = len(sites), ctx.model.space.q
    if q**m > ACTIVITY_BUDGET:
        raise BudgetExceeded(f"activity over {m} sites", q**m, ACTIVITY_BUDGET)
    loc = {s: j for j, s in enumerate(sites)}
    dig = decode(np.arange(q**m), m, q)
    rows = np.array([ctx.index[s] for s in sites])
    integrand = np.prod(ctx.masses[rows[None, :], dig], axis=1).astype(complex)

    for b in R.bonds:
        if len(b) == 1:
            integrand *= ctx.phase[dig[:, loc[b[0]]]] - 1.0
        else:
            xi = ctx.pair_xi(*b)
            vals = xi[dig[:, loc[b[0]]], dig[:, loc[b[1]]]]
            integrand *= np.abs(vals) if kind in ("zeta_hat", "eta_c") else vals
    if kind == "zeta_tilde":
        integrand *= np.prod(ctx.phase[dig], axis=1)

    total = complex(integrand.sum())
    if kind == "zeta_hat":
        return total.real
    if kind == "eta_c":
        return math.exp(c * m) * total.real
    return total


def polymers_to_json(ctx: ActivityContext, polymers: Sequence[Polymer], kinds: Sequence[str] = ("zeta_t",),
                     c: float = 0.0) -> str:
    rows = []
    for R in polymers:
        row = R.to_json()
        for kind in kinds:
            if kind != "zeta_t" and not R.in_r2:
                continue
            a = complex(activity(ctx, R, kind, c))
            row[kind] = [a.real, a.imag]
        rows.append(row)
    return json.dumps(rows, indent=1)
