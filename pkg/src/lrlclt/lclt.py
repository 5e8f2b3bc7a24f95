"""Lattice span, integral and local CLT reports, the four-integral majorant, and characteristic-function bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate
from scipy.special import erfc, ndtr

from lrlclt.errors import DomainError
from lrlclt.gibbs import ExactGibbs, McResult, SkStatistics, build_exact, charfn_from_mass, decode
from lrlclt.model import BoundaryCondition, Region, SpinModel, SpinSpace, as_region, random_exterior

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class SpanInfo:
    a: int
    h: int
    p: int
    q: int

    def b_range(self, n_sites: int) -> range:
        """Admissible b for a sum of ``n_sites`` values: S = n a + b h."""
        return range(n_sites * self.p, n_sites * self.q + 1)


def detect_span(space: SpinSpace) -> SpanInfo:
    """a = min f and h = gcd of the differences of the distinct f values."""
    vals = sorted(set(space.f))
    if len(vals) < 2:
        raise DomainError("f takes a single value; its lattice span is undefined")
    h = reduce(math.gcd, (v - vals[0] for v in vals[1:]))
    return SpanInfo(vals[0], h, 0, (vals[-1] - vals[0]) // h)


def _as_stats(src) -> SkStatistics:
    if isinstance(src, ExactGibbs):
        return src.stats
    if isinstance(src, SkStatistics):
        return src
    raise DomainError(f"expected exact statistics, got {type(src).__name__}")


def kolmogorov_distance(stats: SkStatistics) -> float:
    """sup_x |P(Sbar <= x) - Phi(x)|, checked on both sides of every atom."""
    if stats.variance <= 0:
        raise DomainError("D_k = 0")
    vals = stats.values.astype(float)
    order = np.argsort(vals)
    vals, probs = vals[order], stats.probabilities[order]
    z = (vals - stats.mean) / math.sqrt(stats.variance)
    after = np.minimum(np.cumsum(probs), 1.0)
    before = after - probs
    cdf = ndtr(z)
    return float(max(np.max(np.abs(after - cdf)), np.max(np.abs(before - cdf))))


@dataclass(frozen=True)
class IcltRow:
    k: int
    n_sites: int
    D_k: float
    ratio: float
    kolmogorov: float


def iclt_report(runs: Mapping[int, ExactGibbs]) -> list[IcltRow]:
    """Per k: D_k / |Lambda_k| and the Kolmogorov distance of Sbar_k to the standard normal."""
    rows = []
    for k in sorted(runs):
        g = runs[k]
        st = _as_stats(g)
        if st.variance <= 0:
            raise DomainError(f"D_k = 0 at k = {k}")
        rows.append(IcltRow(k, g.n_sites, st.variance, st.variance / g.n_sites, kolmogorov_distance(st)))
    return rows


@dataclass(frozen=True)
class LcltRow:
    n_sites: int
    D_k: float
    mean: float
    sup: float
    argmax_b: int
    table: np.ndarray = field(repr=False)
    method: str = "exact"
    radius: float = 0.0

    @property
    def mass_total(self) -> float:
        return float(self.table[:, 2].sum())


def lclt_discrepancy(src, span: SpanInfo, n_sites: int | None = None) -> LcltRow:
    """sup_b |(sqrt(D_k)/h) P(S_k = n a + b h) - phi(z_{k,b})| with the full per-b table.

    Table columns: b, s, P, scaled mass, gaussian density, |difference|, radius.
    With an MC result the mean, D_k and masses are estimates and every row
    carries the propagated 3-sigma radius.
    """
    if isinstance(src, McResult):
        samples = src.samples
        mean, var = float(samples.mean()), float(samples.var())
        mass, radii, method = src.mass, src.radius, "mc"
        if n_sites is None:
            raise DomainError("n_sites is required with Monte Carlo input")
    else:
        st = _as_stats(src)
        mean, var, mass, radii, method = st.mean, st.variance, st.mass, {}, "exact"
        n_sites = src.n_sites if n_sites is None else n_sites
    if var <= 0:
        raise DomainError("D_k = 0")
    sd = math.sqrt(var)
    rows = []
    for b in span.b_range(n_sites):
        s = n_sites * span.a + b * span.h
        p = mass.get(s, 0.0)
        z = (s - mean) / sd
        gauss = INV_SQRT_2PI * math.exp(-0.5 * z * z)
        scaled = sd / span.h * p
        rows.append((b, s, p, scaled, gauss, abs(scaled - gauss), sd / span.h * radii.get(s, 0.0)))
    table = np.array(rows, dtype=float)
    i = int(np.argmax(table[:, 5]))
    radius = float(table[:, 6].max()) if method == "mc" else 0.0
    return LcltRow(n_sites, var, mean, float(table[i, 5]), int(table[i, 0]), table, method, radius)


def centered_modulus(stats: SkStatistics):
    """t -> |mu(exp(i t Sbar_k))| as a vectorised function."""
    vals = (stats.values - stats.mean) / math.sqrt(stats.variance)
    probs = stats.probabilities
    return lambda t: np.abs(charfn_from_mass(vals, probs, np.atleast_1d(t)))


def centered_charfn(stats: SkStatistics):
    vals = (stats.values - stats.mean) / math.sqrt(stats.variance)
    probs = stats.probabilities
    return lambda t: charfn_from_mass(vals, probs, np.atleast_1d(t))


def _trapezoid(fn, a: float, b: float, points: int) -> tuple[float, float]:
    # returns (fine estimate, |fine - coarse| / 3)
    if b <= a:
        return 0.0, 0.0
    coarse = integrate.trapezoid(fn(np.linspace(a, b, points)), dx=(b - a) / (points - 1))
    fine = integrate.trapezoid(fn(np.linspace(a, b, 2 * points - 1)), dx=(b - a) / (2 * points - 2))
    return float(fine), abs(fine - coarse) / 3.0


@dataclass(frozen=True)
class IntegralReport:
    B: float
    delta: float
    I1: float
    I2: float
    I3: float
    I4: float
    error: float
    converged: bool

    @property
    def total(self) -> float:
        return self.I1 + self.I2 + self.I3 + self.I4

    @property
    def majorant(self) -> float:
        return self.total / (2 * math.pi)


def integral_decomposition(src, span: SpanInfo, B: float, delta: float, points: int = 4096,
                           tol: float = 1e-6) -> IntegralReport:
    """The four integrals bounding 2 pi times the LCLT discrepancy, by trapezoid with a halving check.

    Integrands are even in t, so each integral is twice its positive half.
    """
    st = _as_stats(src)
    if st.variance <= 0:
        raise DomainError("D_k = 0")
    sd = math.sqrt(st.variance)
    edge, top = delta * sd, math.pi / span.h * sd
    if not (0 < B < edge <= top):
        raise DomainError(f"need 0 < B < delta sqrt(D_k) <= (pi/h) sqrt(D_k); got B={B}, {edge}, {top}")
    chf = centered_charfn(st)
    mod = centered_modulus(st)
    I1, e1 = _trapezoid(lambda t: np.abs(chf(t) - np.exp(-0.5 * t * t)), 0.0, B, points)
    I2 = integrate.quad(lambda t: math.exp(-0.5 * t * t), B, math.inf, epsabs=1e-300, epsrel=1e-13)[0]
    I3, e3 = _trapezoid(mod, B, edge, points)
    I4, e4 = _trapezoid(mod, edge, top, points)
    err = float(2 * (e1 + e3 + e4))
    return IntegralReport(B, delta, 2 * I1, 2 * I2, 2 * I3, 2 * I4, err, err <= tol)


def gaussian_tail_integral(B: float) -> float:
    """Closed form of the integral of exp(-t^2/2) over |t| >= B."""
    return math.sqrt(2 * math.pi) * float(erfc(B / math.sqrt(2)))


@dataclass(frozen=True)
class BoundCheck:
    regime: str
    t: np.ndarray = field(repr=False)
    modulus: np.ndarray = field(repr=False)
    bound: np.ndarray = field(repr=False)
    constant: float

    @property
    def holds(self) -> np.ndarray:
        return self.modulus <= self.bound + BOUND_SLACK

    @property
    def violations(self) -> list[tuple[float, float, float]]:
        bad = ~self.holds
        return list(zip(self.t[bad].tolist(), self.modulus[bad].tolist(), self.bound[bad].tolist()))

    def rows(self):
        return zip(self.t.tolist(), self.modulus.tolist(), self.bound.tolist(), self.holds.tolist())


def inner_grid(delta: float, D_k: float, points: int) -> np.ndarray:
    """``points`` values of t strictly inside |t| < delta sqrt(D_k)."""
    T = delta * math.sqrt(D_k)
    return np.linspace(-T, T, points + 2)[1:-1]


def outer_grid(delta: float, D_k: float, h: int, points: int) -> np.ndarray:
    """``points`` values of t with delta sqrt(D_k) <= |t| <= (pi/h) sqrt(D_k), both signs."""
    sd = math.sqrt(D_k)
    half = np.linspace(delta * sd, math.pi / h * sd, points // 2)
    return np.concatenate([-half[::-1], half])


def charfn_bound_check(g, regime: str, *, delta: float, constant: float, span: SpanInfo | None = None,
                       points: int = 2048, n_sites: int | None = None, D_k: float | None = None,
                       modulus=None) -> BoundCheck:
    """Compare |mu(exp(i t Sbar_k))| with the lemma bound on the regime's t-range.

    regime ``highT`` / ``decimated_inner``: exp(-t^2 constant n / D_k) on |t| < delta sqrt(D_k).
    regime ``highT_tail`` / ``decimated_outer``: exp(-constant n) on the outer range.
    For decimated regimes pass ``modulus`` (a function of t), ``n_sites`` = |sublattice| and D_k.
    """
    if not constant > 0:
        raise DomainError(f"{regime}: the bound constant {constant} is not positive; see the bounds report")
    if modulus is None:
        st = _as_stats(g)
        modulus = centered_modulus(st)
        D_k = st.variance if D_k is None else D_k
        n_sites = g.n_sites if n_sites is None else n_sites
        span = span or detect_span(g.model.space)
    if regime in ("highT", "decimated_inner"):
        t = inner_grid(delta, D_k, points)
        bound = np.exp(-t * t * constant * n_sites / D_k)
    elif regime in ("highT_tail", "decimated_outer"):
        t = outer_grid(delta, D_k, span.h, points)
        bound = np.full(t.shape, math.exp(-constant * n_sites))
    else:
        raise DomainError(f"unknown regime {regime!r}")
    return BoundCheck(regime, t, np.asarray(modulus(t), dtype=float), bound, constant)


def sublattice(region, r0: int) -> Region:
    region = as_region(region)
    pts = [s for s in region.sites if all(c % r0 == 0 for c in s)]
    if not pts:
        raise DomainError(f"no site of the region lies on the sublattice r0 = {r0}")
    return Region(tuple(pts))


@dataclass(frozen=True)
class DecimationResult:
    sublattice: Region
    others: tuple
    D_k: float
    t: np.ndarray = field(repr=False)
    moduli: np.ndarray = field(repr=False)  # samples x t
    samples: list = field(repr=False)

    @property
    def sup_modulus(self) -> np.ndarray:
        """Max over the sampled exterior configurations; a lower bound of the true sup."""
        return self.moduli.max(axis=0)

    def modulus_fn(self, model: SpinModel, beta: float, bc: BoundaryCondition):
        laws = [build_exact(model, self.sublattice, beta, BoundaryCondition.composite(w, bc)).stats
                for w in self.samples]
        scale = 1.0 / math.sqrt(self.D_k)

        def fn(t):
            t = np.atleast_1d(t)
            return np.max([np.abs(charfn_from_mass(st.values.astype(float), st.probabilities, t * scale))
                           for st in laws], axis=0)
        return fn


def decimation_experiment(model: SpinModel, region, r0: int, beta: float, bc: BoundaryCondition,
                          t: Sequence[float], samples: int = 20, seed: int = 0,
                          D_k: float | None = None) -> DecimationResult:
    """|mu^{composite}(exp(i t/sqrt(D_k) sum_{sublattice} f))| for sampled frozen spins off the sublattice."""
    region = as_region(region)
    sub = sublattice(region, r0)
    others = tuple(s for s in region.sites if s not in sub)
    if D_k is None:
        D_k = build_exact(model, region, beta, bc).stats.variance
    if not D_k > 0:
        raise DomainError("D_k must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    t = np.asarray(t, dtype=float)
    rows, drawn = [], []
    for _ in range(samples):
        w = random_exterior(others, model.space.labels, rng)
        drawn.append(w)
        st = build_exact(model, sub, beta, BoundaryCondition.composite(w, bc)).stats
        rows.append(np.abs(charfn_from_mass(st.values.astype(float), st.probabilities, t / math.sqrt(D_k))))
    return DecimationResult(sub, others, D_k, t, np.array(rows), drawn)


def total_probability_gap(model: SpinModel, region, r0: int, beta: float, bc: BoundaryCondition) -> float:
    """max |marginal on the sublattice - sum over frozen configurations of P(frozen) * conditional law|."""
    region = as_region(region)
    sub = sublattice(region, r0)
    others = [s for s in region.sites if s not in sub]
    full = build_exact(model, region, beta, bc)
    q = model.space.q
    pos = {s: i for i, s in enumerate(region.sites)}
    sub_idx = [pos[s] for s in sub.sites]
    oth_idx = [pos[s] for s in others]
    conf = full.configurations()
    p = full.probabilities
    weights_sub = q ** np.arange(len(sub_idx) - 1, -1, -1)
    weights_oth = q ** np.arange(len(oth_idx) - 1, -1, -1)
    key_sub = conf[:, sub_idx] @ weights_sub
    key_oth = conf[:, oth_idx] @ weights_oth if oth_idx else np.zeros(len(p), dtype=np.int64)
    marginal = np.bincount(key_sub, weights=p, minlength=q ** len(sub_idx))
    p_oth = np.bincount(key_oth, weights=p, minlength=q ** len(oth_idx))
    mixed = np.zeros_like(marginal)
    labels = model.space.labels
    for j, digits in enumerate(decode(np.arange(q ** len(oth_idx)), len(oth_idx), q)):
        w = {s: labels[d] for s, d in zip(others, digits)}
        cond = build_exact(model, sub, beta, BoundaryCondition.composite(w, bc))
        mixed += p_oth[j] * cond.probabilities
    return float(np.max(np.abs(marginal - mixed)))
