"""Finite-volume Gibbs measures: exact enumeration and single-site Metropolis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit
from scipy.special import logsumexp

from lrlclt.errors import BudgetExceeded, DomainError
from lrlclt.model import BoundaryCondition, Region, SpinModel, as_region, exterior_field, pair_couplings

DEFAULT_BUDGET = 2**24
_CHUNK = 2**16


def decode(indices: np.ndarray, n: int, q: int) -> np.ndarray:
    """Mixed-radix digits of configuration indices; the first site is the most significant."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.empty((indices.size, n), dtype=np.int64)
    rest = indices.copy()
    for j in range(n - 1, -1, -1):
        out[:, j] = rest % q
        rest //= q
    return out


@dataclass(frozen=True)
class SkStatistics:
    mean: float
    variance: float
    mass: dict[int, float]

    @property
    def values(self) -> np.ndarray:
        return np.fromiter(self.mass.keys(), dtype=np.int64)

    @property
    def probabilities(self) -> np.ndarray:
        return np.fromiter(self.mass.values(), dtype=float)


@dataclass(frozen=True, eq=False)
class ExactGibbs:
    """A fully enumerated Gibbs distribution on a finite region."""

    model: SpinModel
    region: Region
    beta: float
    bc: BoundaryCondition
    log_weights: np.ndarray = field(repr=False)
    s_values: np.ndarray = field(repr=False)
    log_z: float = 0.0

    @property
    def n_sites(self) -> int:
        return len(self.region)

    @property
    def n_configs(self) -> int:
        return self.log_weights.size

    @property
    def Z(self) -> float:
        return math.exp(self.log_z)

    @cached_property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_z)

    def configurations(self, indices=None) -> np.ndarray:
        if indices is None:
            indices = np.arange(self.n_configs)
        return decode(indices, self.n_sites, self.model.space.q)

    @cached_property
    def stats(self) -> SkStatistics:
        return sk_statistics(self)


def build_exact(model: SpinModel, region, beta: float, bc: BoundaryCondition,
                budget: int = DEFAULT_BUDGET) -> ExactGibbs:
    """Enumerate every configuration of ``region`` and its log Boltzmann weight."""
    region = as_region(region)
    n, q = len(region), model.space.q
    total = q**n
    if total > budget:
        raise BudgetExceeded(f"exact enumeration of {n} sites with {q} labels", total, budget)
    C = pair_couplings(model, region)
    M = model.potential.matrix_array
    h = exterior_field(model, region, bc)
    log_lam = np.log(model.space.weight_array)
    f = model.space.f_array
    pairs = [(i, j, C[i, j]) for i in range(n) for j in range(i + 1, n) if C[i, j] != 0.0]

    log_w = np.empty(total)
    s_vals = np.empty(total, dtype=np.int64)
    cols = np.arange(n)
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total))
        dig = decode(idx, n, q)
        energy = h[cols, dig].sum(axis=1)
        for i, j, c in pairs:
            energy += c * M[dig[:, i], dig[:, j]]
        log_w[idx] = -beta * energy + log_lam[dig].sum(axis=1)
        s_vals[idx] = f[dig].sum(axis=1)
    return ExactGibbs(model, region, float(beta), bc, log_w, s_vals, float(logsumexp(log_w)))


def sk_statistics(g: ExactGibbs) -> SkStatistics:
    """Mean, variance D_k and exact mass function of S_k = sum of f over the region."""
    p = g.probabilities
    s = g.s_values
    lo = int(s.min())
    hist = np.bincount(s - lo, weights=p)
    support = np.nonzero(hist)[0]
    mass = {int(lo + v): float(hist[v]) for v in support}
    # moments from the renormalised histogram, so a single atom has variance exactly 0
    w = hist[support] / hist[support].sum()
    vals = (lo + support).astype(float)
    mean = float(np.dot(w, vals))
    var = float(np.dot(w, (vals - mean) ** 2))
    return SkStatistics(mean, max(var, 0.0), mass)


def charfn_from_mass(values: np.ndarray, probs: np.ndarray, u) -> np.ndarray | complex:
    """sum_j probs_j exp(i u values_j) for scalar or array ``u``."""
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.exp(1j * np.outer(u_arr, values)) @ probs
    return complex(out[0]) if np.ndim(u) == 0 else out


def characteristic_function(g: ExactGibbs, t, centered: bool = True):
    """mu(exp(i t Sbar_k)) if ``centered`` else mu(exp(i t S_k))."""
    st = g.stats
    values = st.values.astype(float)
    if centered:
        if st.variance <= 0:
            raise DomainError("D_k = 0: the centred characteristic function is undefined")
        values = (values - st.mean) / math.sqrt(st.variance)
    return charfn_from_mass(values, st.probabilities, t)


@njit(cache=True)
def _metropolis_chunk(state, couplings, M, h, log_w, f, beta, uniforms, proposals, out_s):
    n = state.shape[0]
    q = M.shape[0]
    accepted = 0
    s_cur = 0
    for i in range(n):
        s_cur += f[state[i]]
    for sweep in range(uniforms.shape[0]):
        for i in range(n):
            old = state[i]
            new = proposals[sweep, i]
            if q == 2:
                new = 1 - old
            elif new >= old:
                new += 1
            dE = h[i, new] - h[i, old]
            for j in range(n):
                c = couplings[i, j]
                if c != 0.0:
                    dE += c * (M[new, state[j]] - M[old, state[j]])
            log_ratio = -beta * dE + log_w[new] - log_w[old]
            if log_ratio >= 0.0 or uniforms[sweep, i] < math.exp(log_ratio):
                state[i] = new
                s_cur += f[new] - f[old]
                accepted += 1
        out_s[sweep] = s_cur
    return accepted


@dataclass(frozen=True, eq=False)
class McResult:
    seed: int
    sweeps: int
    burn_in: int
    thinning: int
    acceptance_rate: float
    samples: np.ndarray = field(repr=False)
    tau_int: float
    n_eff: float
    mass: dict[int, float]
    radius: dict[int, float]

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def variance(self) -> float:
        return float(self.samples.var())


def integrated_autocorrelation_time(x: np.ndarray, window_c: float = 5.0) -> float:
    """Sokal's self-consistent window estimate; 0.5 for an uncorrelated series."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    var = np.dot(x, x) / n
    if n < 2 or var == 0.0:
        return 0.5
    nfft = 1 << (2 * n - 1).bit_length()
    power = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(power * np.conj(power), nfft)[:n] / (n * var)
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= window_c * tau:
            break
    return max(tau, 0.5)


def derive_seeds(seed: int, count: int) -> list[int]:
    """Independent 64-bit seeds for parallel chains."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def metropolis_run(model: SpinModel, region, beta: float, bc: BoundaryCondition, seed: int,
                   sweeps: int, burn_in: int = 0, thinning: int = 1, chunk: int = 2**14) -> McResult:
    """Single-site Metropolis over sequential sweeps; S_k recorded after each kept sweep.

    Acceptance is min(1, lambda(new)/lambda(old) * exp(-beta dH)). The random
    stream comes from PCG64(seed) only, so equal arguments give equal output.
    """
    if not sweeps > burn_in >= 0 or thinning < 1:
        raise DomainError("need sweeps > burn_in >= 0 and thinning >= 1")
    region = as_region(region)
    n, q = len(region), model.space.q
    couplings = pair_couplings(model, region)
    M = model.potential.matrix_array
    h = exterior_field(model, region, bc)
    log_w = np.log(model.space.weight_array)
    f = model.space.f_array

    rng = np.random.Generator(np.random.PCG64(seed))
    state = rng.integers(0, q, size=n).astype(np.int64)
    series = np.empty(sweeps, dtype=np.int64)
    accepted = 0
    if q == 1:
        series[:] = int(f[0]) * n
    else:
        for start in range(0, sweeps, chunk):
            m = min(chunk, sweeps - start)
            uniforms = rng.random((m, n))
            if q > 2:
                proposals = rng.integers(0, q - 1, size=(m, n)).astype(np.int64)
            else:
                proposals = np.zeros((m, n), dtype=np.int64)
            accepted += _metropolis_chunk(state, couplings, M, h, log_w, f, float(beta),
                                          uniforms, proposals, series[start:start + m])
    samples = series[burn_in::thinning]
    tau = integrated_autocorrelation_time(samples)
    n_eff = samples.size / (2.0 * tau)
    values, counts = np.unique(samples, return_counts=True)
    p_hat = counts / samples.size
    mass = {int(v): float(p) for v, p in zip(values, p_hat)}
    radius = {int(v): float(3.0 * math.sqrt(p * (1.0 - p) / n_eff)) for v, p in zip(values, p_hat)}
    rate = accepted / float(sweeps * n) if q > 1 else 0.0
    return McResult(int(seed), int(sweeps), int(burn_in), int(thinning), rate, samples, tau, n_eff, mass, radius)
