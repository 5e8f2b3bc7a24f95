"""Convergence constants, thresholds and the pinned-sum check of the polymer expansion.

Lattice sums run over the potential's finite range. Where the family has an
analytic remainder, ``tail=True`` adds it on the pessimistic side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from lrlclt.errors import DomainError
from lrlclt.model import PairPotential, SpinSpace, ball_offsets, lattice_norm, shell_count
from lrlclt.polymer import ActivityContext, Polymer, activity, enumerate_polymers

GRID_POINTS = 4096
GRID_TOL = 1e-6


def _sup_expm1_norm(phi: PairPotential, r: int, beta: float, pair_factor: float) -> float:
    # ||exp(-beta Phi) - 1|| at distance r, max over label pairs
    c = phi.truncated_coupling(r) * pair_factor
    return float(np.max(np.abs(np.expm1(-beta * c * phi.matrix_array))))


def boltzmann_deviation_sum(phi: PairPotential, beta: float, R: int | None = None, pair_factor: float = 1.0,
                            tail: bool = False) -> float:
    """sum over 0 < ||y|| <= R of ||exp(-beta Phi_{0,y}) - 1||, optionally plus a tail bound."""
    if beta < 0:
        raise DomainError("beta must be non-negative")
    R = phi.radius if R is None else int(R)
    total = math.fsum(shell_count(r, phi.d) * _sup_expm1_norm(phi, r, beta, pair_factor) for r in range(1, R + 1))
    if tail and beta > 0:
        rest = phi.tail_sum(R)
        if rest is None:
            return math.inf
        # |e^{-u} - 1| <= |u| e^{|u|}
        s = beta * pair_factor * phi.tail_sup(R)
        total += beta * pair_factor * rest * math.exp(s)
    return total


def a_beta(C: float, beta: float, phi: PairPotential, R: int | None = None, pair_factor: float = 1.0,
           tail: bool = False) -> float:
    """(1 + C)^2 e^4 sum_y ||exp(-beta Phi_{0,y}) - 1||."""
    if C < 0:
        raise DomainError("C must be non-negative")
    return (1.0 + C) ** 2 * math.exp(4.0) * boltzmann_deviation_sum(phi, beta, R, pair_factor, tail)


def beta_c_solve(C: float, phi: PairPotential, R: int | None = None, pair_factor: float = 1.0) -> float:
    """Largest beta with C e + a_beta < 1, by bisection down to adjacent floats; inf if a_beta vanishes."""
    if not 0 < C or C * math.e >= 1:
        raise DomainError(f"need 0 < C < 1/e, got C = {C}")

    def gap(b):
        return C * math.e + a_beta(C, b, phi, R, pair_factor) - 1.0

    if boltzmann_deviation_sum(phi, 1.0, R, pair_factor) == 0.0:
        return math.inf
    assert gap(0.0) < 0
    lo, hi = 0.0, 1e-3
    while gap(hi) < 0:
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            return math.inf
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-300:
            return lo
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid


@dataclass(frozen=True)
class SeriesConstants:
    q: float
    A_delta: float
    B_delta: float


def series_constants(delta: float, f_norm: float) -> SeriesConstants:
    """A = sum q^n / n and B = sum_{n>=3} [(n-1) q^(n-2) + q^(n-1)] with q = delta ||f||, in closed form."""
    q = delta * f_norm
    if not 0 <= q < 1:
        raise DomainError(f"need 0 <= delta ||f|| < 1, got {q}")
    A = -math.log1p(-q)
    B = (1.0 / (1.0 - q) ** 2 - 1.0) + q * q / (1.0 - q)
    return SeriesConstants(q, A, B)


@dataclass(frozen=True)
class AlphaConstants:
    delta: float
    beta: float
    c: float
    a_beta: float
    alpha_delta_beta: float
    alpha_beta: float
    alpha_bar_c_beta: float

    @property
    def valid(self) -> dict:
        return {
            "alpha_delta_beta<1": self.alpha_delta_beta < 1,
            "alpha_beta<1": self.alpha_beta < 1,
            "alpha_bar_c_beta<1": self.alpha_bar_c_beta < 1,
        }


def alpha_constants(delta: float, beta: float, c: float, phi: PairPotential, f_norm: float,
                    R: int | None = None, pair_factor: float = 1.0, tail: bool = False) -> AlphaConstants:
    """alpha_{delta,beta} = A(delta) + a_beta at C = delta ||f||; alpha_beta at C = 0; alpha_bar = e^{2(2+c)} sum."""
    s = boltzmann_deviation_sum(phi, beta, R, pair_factor, tail)
    q = delta * f_norm
    a = (1 + q) ** 2 * math.exp(4.0) * s
    A = series_constants(delta, f_norm).A_delta
    return AlphaConstants(delta, beta, c, a, A + a, math.exp(4.0) * s, math.exp(2 * (2 + c)) * s)


def norm_upper(phi: PairPotential, pair_factor: float = 1.0, tail: bool = False) -> float:
    """|||Phi||| over the finite range, plus the analytic remainder when requested."""
    R = phi.radius
    total = math.fsum(shell_count(r, phi.d) * abs(phi.truncated_coupling(r)) * phi.matrix_sup for r in range(1, R + 1))
    if tail:
        rest = phi.tail_sum(R)
        total += math.inf if rest is None else rest
    return pair_factor * total


def grid_sup(fn, a: float, b: float, points: int = GRID_POINTS, tol: float = GRID_TOL):
    """sup of ``fn`` on [a, b] on a grid and its once-refined grid; returns (sup, converged)."""
    coarse = float(np.max(fn(np.linspace(a, b, points))))
    fine = float(np.max(fn(np.linspace(a, b, 2 * points - 1))))
    return max(coarse, fine), abs(fine - coarse) <= tol


def law_charfn_modulus(probs: np.ndarray, values: np.ndarray):
    probs = np.asarray(probs, dtype=float)
    values = np.asarray(values, dtype=float)
    return lambda t: np.abs(np.exp(1j * np.outer(np.atleast_1d(t), values)) @ probs)


@dataclass(frozen=True)
class PropConstants:
    beta: float
    delta: float
    h: int
    d_beta: float
    gnedenko_dX: float
    gnedenko_converged: bool
    c_b: float | None
    c_b_converged: bool
    c_b_samples: int
    c0: float
    eps: float
    c_c: float
    beta_prime_delta: float
    norm: float


def prop_constants(space: SpinSpace, phi: PairPotential, beta: float, delta: float, eps: float | None = None,
                   laws: Iterable[np.ndarray] | None = None, gnedenko_eps: float | None = None,
                   pair_factor: float = 1.0, tail: bool = False, span: int | None = None) -> PropConstants:
    """d(beta), the lattice-law constant, and the single-site constants of items (b) and (c).

    ``laws`` are sampled single-site probability vectors p_x; c_b is the
    sampled estimate -ln sup |E_x e^{itf}| and so bounds the true constant from above.
    """
    if space.is_degenerate:
        raise DomainError("f is constant on the spin space")
    from math import gcd

    f = space.f_array
    vals = sorted(set(int(v) for v in f))
    h = span or 0
    if not h:
        for v in vals[1:]:
            h = gcd(h, v - vals[0])
    top = math.pi / h
    if not 0 < delta < top:
        raise DomainError(f"need 0 < delta < pi/h = {top}")
    nu = space.weight_array / space.total_mass
    norm = norm_upper(phi, pair_factor, tail)

    lam_f2 = space.lambda_of([v * v for v in space.f])
    d_beta = math.exp(-2 * beta * norm) * lam_f2 / space.total_mass

    ge = delta if gnedenko_eps is None else gnedenko_eps
    sup_x, conv_x = grid_sup(law_charfn_modulus(nu, f), ge, 2 * math.pi / h - ge)
    gnedenko = -math.log(sup_x)

    c_b, conv_b, n_laws = None, True, 0
    if laws is not None:
        worst = 0.0
        for p in laws:
            s, ok = grid_sup(law_charfn_modulus(p, f), delta, top)
            worst = max(worst, s)
            conv_b &= ok
            n_laws += 1
        if n_laws:
            c_b = -math.log(worst)

    sup_nu, _ = grid_sup(law_charfn_modulus(nu, f), delta, top)
    c0 = -math.log(sup_nu)
    if eps is None:
        eps = (1 - math.exp(-c0)) / 2
    if not 0 < eps < 1 - math.exp(-c0):
        raise DomainError("need 0 < eps < 1 - exp(-c0)")
    c_c = -math.log(eps + math.exp(-c0))
    # |P_x(f=n) - nu(f=n)| <= (e^{2 beta |||Phi|||} - 1) nu(f=n) < eps / (2||f|| + 1)
    nu_max = max(float(nu[f == v].sum()) for v in vals)
    ratio = eps / ((2 * space.f_norm + 1) * nu_max)
    beta_prime = math.inf if norm == 0 else math.log1p(ratio) / (2 * norm)
    return PropConstants(beta, delta, h, d_beta, gnedenko, conv_x, c_b, conv_b, n_laws, c0, eps, c_c,
                         beta_prime, norm)


def cct_B(z: float, K: float) -> float:
    """sqrt(z) K / (1 - sqrt(z) K)."""
    s = math.sqrt(z) * K
    if s >= 1:
        raise DomainError(f"sqrt(z) K = {s} >= 1")
    return s / (1 - s)


def cct_C(z: float, K: float) -> float:
    """z exp(B(sqrt(z), K)); needs z^(1/4) K < 1."""
    return z * math.exp(cct_B(math.sqrt(z), K))


@dataclass(frozen=True)
class CctConstants:
    Psi: Mapping
    K: float
    z0: float
    B: float | None
    Cc: float | None
    phi_bar: float | None = None
    radius: int | None = None

    @property
    def valid(self) -> dict:
        return {"sqrt(z0)K<1": self.B is not None, "C(z0,K)<1": self.Cc is not None and self.Cc < 1}


def psi_from_potential(phi: PairPotential, r0: int, radius: int, pair_factor: float = 1.0,
                       truncated: bool = True) -> tuple[dict, float]:
    """Psi on the sublattice r0 Z^d within ``radius``, and PhiBar(r0) = sup_{||x|| >= r0} ||Phi_{x,0}||."""
    if r0 < 1:
        raise DomainError("r0 must be a positive integer")
    cpl = phi.truncated_coupling if truncated else phi.coupling
    if truncated:
        top = min(radius, phi.radius)
        phi_bar = max((abs(cpl(r)) for r in range(r0, top + 1)), default=0.0)
    else:
        phi_bar = phi.tail_sup(r0 - 1) / phi.matrix_sup if phi.matrix_sup else 0.0
    phi_bar *= phi.matrix_sup * pair_factor
    if phi_bar == 0:
        raise DomainError(f"the potential vanishes beyond r0 = {r0}; Psi is undefined")
    psi = {(0,) * phi.d: 1.0}
    n_max = radius // r0
    for v in ball_offsets(n_max, phi.d):
        x = tuple(r0 * c for c in v)
        psi[x] = abs(cpl(lattice_norm(x))) * phi.matrix_sup * pair_factor / phi_bar
    return psi, phi_bar


def cct_constants(psi: Mapping | None = None, z0: float = 0.0, *, phi: PairPotential | None = None,
                  r0: int | None = None, radius: int | None = None, pair_factor: float = 1.0,
                  truncated: bool = True) -> CctConstants:
    phi_bar = None
    if psi is None:
        if phi is None or r0 is None:
            raise DomainError("give either an explicit Psi or a potential with r0")
        radius = phi.radius if radius is None else radius
        psi, phi_bar = psi_from_potential(phi, r0, radius, pair_factor, truncated)
    zero = next(k for k in psi if not any(k))
    if psi[zero] != 1 or any(v < 0 for v in psi.values()):
        raise DomainError("Psi must be non-negative with Psi(0) = 1")
    K = math.fsum(math.sqrt(v) for v in psi.values())
    B = cct_B(z0, K)
    Cc = cct_C(z0, K) if z0 ** 0.25 * K < 1 else None
    return CctConstants(dict(psi), K, z0, B, Cc, phi_bar, radius)


def _cluster_ratio(z: float, K: float) -> float | None:
    # C(z,K) B(sqrt z, K) / (1 - C(z,K)), None when a prerequisite fails
    if z ** 0.25 * K >= 1:
        return None
    Cz = cct_C(z, K)
    if Cz >= 1:
        return None
    return Cz * cct_B(math.sqrt(z), K) / (1 - Cz)


@dataclass(frozen=True)
class LemmaConstants:
    delta: float
    beta: float
    c: float
    r0: int | None
    d_beta: float
    gnedenko_c: float
    a_beta_4: float
    D_highT: float
    C_highT: float
    alpha_beta: float
    alpha_bar_c_beta: float
    PhiBar_r0: float | None = None
    K: float | None = None
    z0_cam: float | None = None
    z1_cam: float | None = None
    z0_eta: float | None = None
    phi_cam: float | None = None
    D_cam: float | None = None
    C_cam: float | None = None
    flags: dict = field(default_factory=dict)


def lemma_constants(delta: float, beta: float, c: float, space: SpinSpace, phi: PairPotential,
                    r0: int | None = None, c_cam: float | None = None, pair_factor: float = 1.0,
                    tail: bool = False, beta_prime: float | None = None, cct_radius: int | None = None) -> LemmaConstants:
    """The positivity constants of the two characteristic-function lemmas and their decimated forms.

    D_highT uses a_beta at C = 4 delta ||f||. C_highT = c - alpha_beta - alpha_bar_{c,beta}.
    With ``r0``: PhiBar, K on the sublattice, z0 = max(4 delta ||f||, z1), z1 = beta PhiBar e^{beta PhiBar},
    z0_eta = beta PhiBar e^{2 c + beta PhiBar} (the bound on eta^c), then D_cam and C_cam.
    Constants whose prerequisites fail are None and their flags are False.
    """
    fn = space.f_norm
    sc = series_constants(delta, fn)
    q = sc.q
    norm = norm_upper(phi, pair_factor, tail)
    d_beta = math.exp(-2 * beta * norm) * space.lambda_of([v * v for v in space.f]) / space.total_mass
    s = boltzmann_deviation_sum(phi, beta, None, pair_factor, tail)
    C4 = 4 * q
    a4 = (1 + C4) ** 2 * math.exp(4.0) * s
    D = 0.5 * (math.cos(q) * d_beta - delta * fn**3 - sc.B_delta * fn**2 - fn**2 / q * a4) if q > 0 else -math.inf
    alpha_b = math.exp(4.0) * s
    alpha_bar = math.exp(2 * (2 + c)) * s
    C = c - alpha_b - alpha_bar
    flags = {
        "D_highT>0": D > 0,
        "4delta||f||e+a_beta<1": C4 * math.e + a4 < 1,
        "C_highT>0": C > 0,
        "alpha_beta<1": alpha_b < 1,
        "alpha_bar_c_beta<1": alpha_bar < 1,
    }
    if beta_prime is not None:
        flags["beta<beta_prime_delta"] = beta < beta_prime
    flags["D_highT_positive"] = flags["D_highT>0"] and flags["4delta||f||e+a_beta<1"]
    flags["C_highT_positive"] = (flags["C_highT>0"] and flags["alpha_beta<1"] and flags["alpha_bar_c_beta<1"]
                                 and flags.get("beta<beta_prime_delta", True))
    out = dict(delta=delta, beta=beta, c=c, r0=r0, d_beta=d_beta, gnedenko_c=c, a_beta_4=a4, D_highT=D,
               C_highT=C, alpha_beta=alpha_b, alpha_bar_c_beta=alpha_bar)
    if r0 is not None:
        cc = c if c_cam is None else c_cam
        psi, phi_bar = psi_from_potential(phi, r0, phi.radius if cct_radius is None else cct_radius, pair_factor)
        K = math.fsum(math.sqrt(v) for v in psi.values())
        z1 = beta * phi_bar * math.exp(beta * phi_bar)
        z0 = max(4 * delta * fn, z1)
        z0_eta = beta * phi_bar * math.exp(2 * cc + beta * phi_bar)
        phi_cam = D_cam = C_cam = None
        if z0 ** 0.25 * K < 1 and cct_C(z0, K) < 1:
            Bs = cct_B(math.sqrt(z0), K)
            phi_cam = fn * (z0 / delta) * math.exp(Bs) * Bs / (1 - cct_C(z0, K))
            D_cam = 0.5 * (math.cos(q) * d_beta - 2 * delta * fn**3 - sc.B_delta * fn**2 - phi_cam)
        r_eta, r_one = _cluster_ratio(z0_eta, K), _cluster_ratio(z1, K)
        if r_eta is not None and r_one is not None:
            C_cam = cc - r_eta - r_one
        flags["D_cam_positive"] = D_cam is not None and D_cam > 0
        flags["C_cam_positive"] = C_cam is not None and C_cam > 0
        out.update(PhiBar_r0=phi_bar, K=K, z0_cam=z0, z1_cam=z1, z0_eta=z0_eta, phi_cam=phi_cam, D_cam=D_cam,
                   C_cam=C_cam)
    return LemmaConstants(**out, flags=flags)


@dataclass(frozen=True)
class PinnedReport:
    lhs: float
    rhs: float
    margin: float
    holds: bool
    polymer_count: int
    a_beta: float
    C: float


def kp_pinned_verify(ctx: ActivityContext, C: float, pin: Polymer, max_bonds: int,
                     max_pair_range: int | None = None) -> PinnedReport:
    """Truncated sum over polymers R meeting the pin of C^{|singletons|} zeta_hat(pair part) e^{|support|}.

    The truncated sum is a lower bound of the full sum; rhs = (C e + a_beta) |pin support|.
    """
    phi = ctx.model.potential
    pin_sites = set(pin.support)
    cache: dict = {}
    terms = []
    count = 0
    for R in enumerate_polymers(ctx.region, phi, max_bonds, max_pair_range):
        if not pin_sites.intersection(R.support):
            continue
        count += 1
        pairs = R.gamma2
        if pairs not in cache:
            cache[pairs] = activity(ctx, Polymer(pairs), "zeta_hat") if pairs else 1.0
        terms.append(C ** len(R.gamma1) * cache[pairs] * math.exp(len(R.support)))
    lhs = math.fsum(terms)
    a = a_beta(C, ctx.beta, phi, None, ctx.model.pair_factor)
    rhs = (C * math.e + a) * len(pin_sites)
    return PinnedReport(lhs, rhs, rhs - lhs, lhs <= rhs, count, a, C)
