"""Lattices, spin spaces, two-body potentials, boundary conditions and Hamiltonians.

Sites are plain integer tuples. Distances on the lattice use the max-norm
``||x|| = max_i |x_i|``, which keeps boxes, truncation balls and sublattices
aligned. Configurations are stored internally as label *indices* into the
spin space.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from lrlclt.errors import DomainError

Site = tuple[int, ...]

FAMILIES = ("long_range_ising", "geometric", "table", "zero")
CONVENTIONS = ("unordered", "ordered")


def lattice_norm(x: Sequence[int]) -> int:
    return max((abs(int(c)) for c in x), default=0)


def distance(x: Site, y: Site) -> int:
    return max(abs(a - b) for a, b in zip(x, y))


def shell_count(r: int, d: int) -> int:
    """Number of sites of Z^d at max-norm distance exactly ``r`` from the origin."""
    if r == 0:
        return 1
    return (2 * r + 1) ** d - (2 * r - 1) ** d


def ball_offsets(radius: int, d: int) -> list[Site]:
    """All non-zero displacements with max-norm at most ``radius``, sorted."""
    rng = range(-radius, radius + 1)
    return [v for v in itertools.product(rng, repeat=d) if any(v)]


@dataclass(frozen=True)
class Box:
    """The cube [-k, k]^d."""

    k: int
    d: int = 1

    def __post_init__(self):
        if self.k < 0 or self.d < 1:
            raise DomainError(f"invalid box k={self.k}, d={self.d}")

    @cached_property
    def sites(self) -> tuple[Site, ...]:
        return tuple(itertools.product(range(-self.k, self.k + 1), repeat=self.d))

    def __contains__(self, x) -> bool:
        return len(x) == self.d and all(-self.k <= c <= self.k for c in x)

    def __len__(self) -> int:
        return (2 * self.k + 1) ** self.d

    def region(self) -> Region:
        return Region(self.sites)


@dataclass(frozen=True)
class Region:
    """An arbitrary finite set of sites, kept in lexicographic order."""

    sites: tuple[Site, ...]

    def __post_init__(self):
        sites = tuple(sorted({tuple(int(c) for c in s) for s in self.sites}))
        if not sites:
            raise DomainError("a region needs at least one site")
        if len({len(s) for s in sites}) != 1:
            raise DomainError("all sites of a region must share one dimension")
        object.__setattr__(self, "sites", sites)

    @classmethod
    def chain(cls, n: int, start: int = 0) -> Region:
        return cls(tuple((start + i,) for i in range(n)))

    @property
    def d(self) -> int:
        return len(self.sites[0])

    @cached_property
    def _members(self) -> frozenset:
        return frozenset(self.sites)

    def __contains__(self, x) -> bool:
        return tuple(x) in self._members

    def __len__(self) -> int:
        return len(self.sites)

    def shifted(self, v: Site) -> Region:
        return Region(tuple(tuple(a + b for a, b in zip(s, v)) for s in self.sites))


def as_region(region) -> Region:
    if isinstance(region, Region):
        return region
    if isinstance(region, Box):
        return region.region()
    return Region(tuple(region))


@dataclass(frozen=True)
class SpinSpace:
    """Finite single-site space E with a positive measure lambda and an integer observable f."""

    labels: tuple
    weights: tuple[float, ...]
    f: tuple[int, ...]

    def __post_init__(self):
        labels, weights, f = tuple(self.labels), tuple(float(w) for w in self.weights), tuple(self.f)
        if not labels or not (len(labels) == len(weights) == len(f)):
            raise DomainError("labels, weights and f must be non-empty and of equal length")
        if len(set(labels)) != len(labels):
            raise DomainError("spin labels must be distinct")
        if any(not (w > 0 and math.isfinite(w)) for w in weights):
            raise DomainError("all weights must be positive and finite")
        if any(int(v) != v for v in f):
            raise DomainError("the observable f must be integer valued")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "f", tuple(int(v) for v in f))

    @classmethod
    def ising(cls) -> SpinSpace:
        return cls(labels=(-1, 1), weights=(1.0, 1.0), f=(-1, 1))

    @property
    def q(self) -> int:
        return len(self.labels)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    @property
    def f_norm(self) -> int:
        return max(abs(v) for v in self.f)

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def f_array(self) -> np.ndarray:
        return np.asarray(self.f, dtype=np.int64)

    def index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"unknown spin label {label!r}") from None

    def lambda_of(self, values: Sequence[float]) -> float:
        return math.fsum(w * v for w, v in zip(self.weights, values))

    @property
    def var_lambda(self) -> float:
        """Variance of f under the normalised single-site law lambda / lambda(E)."""
        mean = self.lambda_of(self.f) / self.total_mass
        return self.lambda_of([(v - mean) ** 2 for v in self.f]) / self.total_mass

    @property
    def is_degenerate(self) -> bool:
        return len(set(self.f)) < 2


def coupling_J(distance: int, J: float, alpha: float) -> float:
    """Long-range Ising coupling: J at distance one, distance**(alpha - 2) beyond."""
    if int(distance) != distance or distance < 1:
        raise DomainError(f"distance must be a positive integer, got {distance!r}")
    if not J > 0:
        raise DomainError(f"J must be positive, got {J!r}")
    if not 0 <= alpha < 1:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha!r}")
    if distance == 1:
        return float(J)
    return float(distance) ** (-2.0 + alpha)


@dataclass(frozen=True)
class PairPotential:
    """Translation-invariant two-body potential Phi_{x,y}(a, b) = coupling(||x - y||) * matrix[a][b].

    ``coupling`` is the untruncated family; ``kernel`` applies the
    computational cutoff ``truncation_radius``. Norms and constants are taken
    from the untruncated family, with analytic tails where the family has one.
    """

    family: str
    params: Mapping = field(default_factory=dict)
    matrix: tuple = ((0.0,),)
    truncation_radius: float = 1
    d: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown potential family {self.family!r}")
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError("interaction matrix must be square")
        if not np.allclose(m, m.T, rtol=0, atol=0):
            raise DomainError("interaction matrix must be symmetric")
        object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in m))
        R = self.truncation_radius
        if R != math.inf and (int(R) != R or R < 1):
            raise DomainError(f"truncation radius must be a positive integer, got {R!r}")
        if R == math.inf and self.family == "table":
            raise DomainError("table potentials carry their own finite range")
        if self.family == "long_range_ising":
            coupling_J(1, self.params["J"], self.params["alpha"])
        if self.family == "geometric" and not self.params["base"] > 1:
            raise DomainError("geometric potentials need base > 1")
        if self.d < 1:
            raise DomainError("d must be at least 1")

    @property
    def q(self) -> int:
        return len(self.matrix)

    @cached_property
    def matrix_array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    @cached_property
    def matrix_sup(self) -> float:
        return float(np.max(np.abs(self.matrix_array)))

    @property
    def radius(self) -> int:
        """Finite interaction radius used by finite-volume computations."""
        if self.truncation_radius == math.inf:
            if self.family == "zero":
                return 1
            raise DomainError("an infinite truncation radius cannot be used in a finite computation")
        return int(self.truncation_radius)

    def coupling(self, r: int) -> float:
        p = self.params
        if self.family == "long_range_ising":
            return coupling_J(r, p["J"], p["alpha"])
        if self.family == "geometric":
            return float(p["amplitude"]) * float(p["base"]) ** (-r)
        if self.family == "table":
            cs = p["couplings"]
            return float(cs[r - 1]) if r <= len(cs) else 0.0
        return 0.0

    def truncated_coupling(self, r: int) -> float:
        if r < 1 or r > self.truncation_radius:
            return 0.0
        return self.coupling(r)

    def kernel(self, displacement: Sequence[int], a: int, b: int) -> float:
        """Energy of a pair at ``displacement`` carrying label indices ``a`` and ``b``."""
        return self.truncated_coupling(lattice_norm(displacement)) * self.matrix[a][b]

    def pair_sup(self, r: int) -> float:
        """Sup-norm of Phi_{x,y} for ||x - y|| = r (untruncated)."""
        return abs(self.coupling(r)) * self.matrix_sup

    def is_monotone(self) -> bool:
        return self.family in ("long_range_ising", "geometric", "zero")

    def tail_sum(self, R: int, power: float = 1.0) -> float | None:
        """Upper bound on sum over ||y|| > R of pair_sup(||y||)**power.

        Returns ``math.inf`` for a known divergent tail and ``None`` when the
        family has no analytic remainder.
        """
        d, m, p = self.d, self.matrix_sup, self.params
        if self.family == "zero" or m == 0:
            return 0.0
        if self.family == "table":
            cs = p["couplings"]
            return math.fsum(
                shell_count(r, d) * (abs(cs[r - 1]) * m) ** power for r in range(R + 1, len(cs) + 1)
            )
        if self.family == "long_range_ising":
            s = (2.0 - p["alpha"]) * power
            # shell_count(r) <= 2d 3^(d-1) r^(d-1); sum_{r>R} r^(d-1-s) <= R^(d-s)/(s-d)
            if s <= d:
                return math.inf
            R = max(R, 1)
            return 2 * d * 3 ** (d - 1) * m**power * R ** (d - s) / (s - d)
        if self.family == "geometric":
            if d != 1:
                return None
            amp, base = abs(float(p["amplitude"])), float(p["base"])
            ratio = base**-power
            return 2 * (amp * m) ** power * ratio ** (R + 1) / (1 - ratio)
        return None

    def tail_sup(self, R: int) -> float:
        """sup over ||y|| > R of pair_sup(||y||)."""
        if self.family == "table":
            cs = self.params["couplings"]
            return max((abs(c) * self.matrix_sup for c in cs[R:]), default=0.0)
        if self.family == "long_range_ising" and R == 0:
            return max(self.pair_sup(1), self.pair_sup(2))
        return self.pair_sup(R + 1)

    def truncated(self) -> PairPotential:
        """The finite-range potential that finite-volume computations actually use."""
        R = self.radius
        return PairPotential(
            family="table",
            params={"couplings": tuple(self.coupling(r) for r in range(1, R + 1))},
            matrix=self.matrix,
            truncation_radius=R,
            d=self.d,
        )


def long_range_ising(J: float = 1.0, alpha: float = 0.0, truncation_radius: float = 64, spins=(-1, 1), d: int = 1) -> PairPotential:
    s = np.asarray(spins, dtype=float)
    return PairPotential(
        family="long_range_ising",
        params={"J": float(J), "alpha": float(alpha)},
        matrix=tuple(map(tuple, -np.outer(s, s))),
        truncation_radius=truncation_radius,
        d=d,
    )


def geometric_potential(amplitude: float, base: float, truncation_radius: float, matrix, d: int = 1) -> PairPotential:
    return PairPotential(
        family="geometric",
        params={"amplitude": float(amplitude), "base": float(base)},
        matrix=matrix,
        truncation_radius=truncation_radius,
        d=d,
    )


def table_potential(couplings: Sequence[float], matrix, d: int = 1) -> PairPotential:
    couplings = tuple(float(c) for c in couplings)
    return PairPotential(family="table", params={"couplings": couplings}, matrix=matrix,
                         truncation_radius=max(len(couplings), 1), d=d)


def zero_potential(q: int = 2, truncation_radius: float = 1, d: int = 1) -> PairPotential:
    return PairPotential(family="zero", matrix=tuple((0.0,) * q for _ in range(q)),
                         truncation_radius=truncation_radius, d=d)


@dataclass(frozen=True)
class NormReport:
    radius: int
    partial_sum: float
    tail_bound: float | None

    @property
    def upper(self) -> float:
        return math.inf if self.tail_bound is None else self.partial_sum + self.tail_bound


def potential_norm(phi: PairPotential, R: int) -> NormReport:
    """Partial absolute-summability norm at the origin plus the analytic tail, if any."""
    if R < 1:
        raise DomainError("R must be at least 1")
    partial = math.fsum(shell_count(r, phi.d) * phi.pair_sup(r) for r in range(1, R + 1))
    return NormReport(R, partial, phi.tail_sum(R))


@dataclass(frozen=True)
class CampaninoProbe:
    radii: tuple[int, ...]
    sqrt_partial_sums: tuple[float, ...]
    tail_sups: tuple[float, ...]
    growth_exponent: float
    analytic: bool
    sqrt_series_converges: bool
    tail_positive: bool

    @property
    def condition_holds(self) -> bool:
        return self.sqrt_series_converges and self.tail_positive


def campanino_condition_probe(phi: PairPotential, radii: Sequence[int]) -> CampaninoProbe:
    """Probe the square-root summability and the non-vanishing tail of a potential.

    The growth exponent is the fitted power of R in the partial sums of
    ||Phi||^(1/2); a negative value indicates convergence. Families with an
    analytic tail override the fit.
    """
    radii = tuple(int(r) for r in radii)
    if not radii or any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] < 1:
        raise DomainError("radii must be a non-empty increasing list of positive integers")
    sums, sups = [], []
    running, r_done = 0.0, 0
    for R in radii:
        running += math.fsum(shell_count(r, phi.d) * phi.pair_sup(r) ** 0.5 for r in range(r_done + 1, R + 1))
        r_done = R
        sums.append(running)
        sups.append(phi.tail_sup(R - 1))

    exponent = _fit_growth(radii, sums)
    if phi.family == "long_range_ising":
        exponent = phi.d - 1 + phi.params["alpha"] / 2
    tail = phi.tail_sum(radii[-1], power=0.5)
    analytic = tail is not None
    converges = math.isfinite(tail) if analytic else exponent < 0
    return CampaninoProbe(radii, tuple(sums), tuple(sups), exponent, analytic, converges,
                          all(s > 0 for s in sups))


def _fit_growth(radii: Sequence[int], sums: Sequence[float]) -> float:
    # slope of log(increment per unit radius) against log R, plus one
    xs, ys, incs = [], [], []
    for (r0, s0), (r1, s1) in zip(zip(radii, sums), zip(radii[1:], sums[1:])):
        inc = (s1 - s0) / (r1 - r0)
        incs.append(inc)
        if inc > 0:
            xs.append(math.log(0.5 * (r0 + r1)))
            ys.append(math.log(inc))
    if incs and not xs:
        return -math.inf
    if len(xs) < 2:
        return math.nan
    return float(np.polyfit(xs, ys, 1)[0]) + 1.0


@dataclass(frozen=True)
class BoundaryCondition:
    """Exterior configuration omega, evaluated lazily site by site.

    rule ``free`` drops every exterior term; ``constant`` puts one label
    everywhere; ``explicit`` reads a finite assignment and fails on missing
    sites; ``composite`` reads an inner assignment first and falls back to
    ``base`` (the decimation boundary).
    """

    rule: str
    label: object = None
    assignment: Mapping | None = None
    base: BoundaryCondition | None = None

    def __post_init__(self):
        if self.rule not in ("free", "constant", "explicit", "composite"):
            raise DomainError(f"unknown boundary rule {self.rule!r}")
        if self.rule == "constant" and self.label is None:
            raise DomainError("constant boundary needs a label")
        if self.rule in ("explicit", "composite") and self.assignment is None:
            raise DomainError(f"{self.rule} boundary needs an assignment")
        if self.rule == "composite" and self.base is None:
            raise DomainError("composite boundary needs a base boundary")

    @classmethod
    def free(cls) -> BoundaryCondition:
        return cls("free")

    @classmethod
    def constant(cls, label) -> BoundaryCondition:
        return cls("constant", label=label)

    @classmethod
    def explicit(cls, assignment: Mapping) -> BoundaryCondition:
        return cls("explicit", assignment={tuple(k): v for k, v in assignment.items()})

    @classmethod
    def composite(cls, inner: Mapping, base: BoundaryCondition) -> BoundaryCondition:
        return cls("composite", assignment={tuple(k): v for k, v in inner.items()}, base=base)

    @property
    def is_free(self) -> bool:
        return self.rule == "free" or (self.rule == "composite" and not self.assignment and self.base.is_free)

    def spin_at(self, site: Site):
        """Label at an exterior site, or ``None`` when the term is dropped."""
        if self.rule == "free":
            return None
        if self.rule == "constant":
            return self.label
        if site in self.assignment:
            return self.assignment[site]
        if self.rule == "composite":
            return self.base.spin_at(site)
        raise DomainError(f"explicit boundary condition undefined at {site}")

    def shifted(self, v: Site) -> BoundaryCondition:
        def move(a):
            return {tuple(x + y for x, y in zip(s, v)): lab for s, lab in a.items()}

        if self.rule in ("free", "constant"):
            return self
        if self.rule == "explicit":
            return BoundaryCondition.explicit(move(self.assignment))
        return BoundaryCondition.composite(move(self.assignment), self.base.shifted(v))


@dataclass(frozen=True)
class SpinModel:
    space: SpinSpace
    potential: PairPotential
    convention: str = "unordered"

    def __post_init__(self):
        if self.potential.q != self.space.q:
            raise DomainError("potential matrix size does not match the spin space")
        if self.convention not in CONVENTIONS:
            raise DomainError(f"unknown pair convention {self.convention!r}")

    @property
    def d(self) -> int:
        return self.potential.d

    @property
    def pair_factor(self) -> float:
        # ordered sums over x != y visit every interior pair twice
        return 2.0 if self.convention == "ordered" else 1.0

    @classmethod
    def long_range_ising(cls, J=1.0, alpha=0.0, truncation_radius=64, convention="unordered") -> SpinModel:
        return cls(SpinSpace.ising(), long_range_ising(J, alpha, truncation_radius), convention)


def pair_couplings(model: SpinModel, region) -> np.ndarray:
    """Symmetric matrix of interior couplings (pair factor included), zero on the diagonal."""
    sites = as_region(region).sites
    n = len(sites)
    out = np.zeros((n, n))
    phi = model.potential
    for i in range(n):
        for j in range(i + 1, n):
            c = phi.truncated_coupling(distance(sites[i], sites[j])) * model.pair_factor
            out[i, j] = out[j, i] = c
    return out


def exterior_field(model: SpinModel, region, bc: BoundaryCondition) -> np.ndarray:
    """h[i, e] = sum over exterior y within the cutoff of Phi(e, omega_y) for the i-th site."""
    region = as_region(region)
    phi = model.potential
    n, q = len(region), model.space.q
    h = np.zeros((n, q))
    if bc.rule == "free":
        return h
    offsets = ball_offsets(phi.radius, region.d)
    M = phi.matrix_array
    for i, x in enumerate(region.sites):
        acc = np.zeros(q)
        for v in offsets:
            y = tuple(a + b for a, b in zip(x, v))
            if y in region:
                continue
            lab = bc.spin_at(y)
            if lab is None:
                continue
            c = phi.truncated_coupling(lattice_norm(v))
            if c:
                acc += c * M[:, model.space.index(lab)]
        h[i] = acc
    return h


def config_indices(model: SpinModel, region, sigma) -> np.ndarray:
    region = as_region(region)
    if isinstance(sigma, Mapping):
        missing = [s for s in region.sites if s not in sigma]
        if missing:
            raise DomainError(f"configuration missing sites {missing[:3]}")
        labels = [sigma[s] for s in region.sites]
    else:
        labels = list(sigma)
        if len(labels) != len(region):
            raise DomainError(f"configuration has {len(labels)} spins for {len(region)} sites")
    return np.array([model.space.index(lab) for lab in labels], dtype=np.int64)


def hamiltonian(model: SpinModel, region, sigma, bc: BoundaryCondition) -> float:
    """H_Lambda^omega(sigma) with the model's pair convention."""
    region = as_region(region)
    idx = config_indices(model, region, sigma)
    C = pair_couplings(model, region)
    M = model.potential.matrix_array
    h = exterior_field(model, region, bc)
    iu = np.triu_indices(len(idx), 1)
    interior = math.fsum(C[iu] * M[idx[iu[0]], idx[iu[1]]])
    boundary = math.fsum(h[np.arange(len(idx)), idx])
    return interior + boundary


def random_exterior(sites: Iterable[Site], labels: Sequence, rng: np.random.Generator) -> dict:
    """Uniformly random labels on ``sites``; sites are visited in sorted order."""
    sites = sorted(sites)
    picks = rng.integers(0, len(labels), size=len(sites))
    return {s: labels[int(i)] for s, i in zip(sites, picks)}


def exterior_sites(region, radius: int) -> list[Site]:
    """Sites outside ``region`` within ``radius`` of it."""
    region = as_region(region)
    out = set()
    for x in region.sites:
        for v in ball_offsets(radius, region.d):
            y = tuple(a + b for a, b in zip(x, v))
            if y not in region:
                out.add(y)
    return sorted(out)
