import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrlclt.errors import BudgetExceeded, DomainError
from lrlclt.gibbs import (build_exact, characteristic_function, derive_seeds, integrated_autocorrelation_time,
                          metropolis_run)
from lrlclt.model import Box, BoundaryCondition, Region, SpinModel, SpinSpace, long_range_ising
from lrlclt.polymer import make_context, single_site_density

from conftest import ising_partition

FREE = BoundaryCondition.free()
PLUS = BoundaryCondition.constant(1)


def chain_model(alpha=0.0, trunc=64):
    return SpinModel.long_range_ising(1.0, alpha, trunc)


def test_infinite_temperature_partition_function():
    g = build_exact(chain_model(), Region.chain(3), 0.0, PLUS)
    assert g.Z == pytest.approx(8.0, rel=1e-15)
    assert g.n_configs == 8


@pytest.mark.parametrize("beta", [0.0, 0.7, 3.0])
def test_single_site_free(beta):
    space = SpinSpace((-1, 1), (0.5, 1.5), (-1, 1))
    model = SpinModel(space, long_range_ising(1.0, 0.0, 4))
    assert build_exact(model, Region.chain(1), beta, FREE).Z == pytest.approx(2.0, rel=1e-15)


def test_partition_function_against_enumerator():
    region = Region.chain(6)
    g = build_exact(chain_model(0.5, 64), region, 0.2, PLUS)
    want, _ = ising_partition(region.sites, 0.2, 1.0, 0.5, 64, boundary=1)
    assert abs(g.Z - want) / want <= 1e-12


def test_budget_refusal_names_budget():
    with pytest.raises(BudgetExceeded) as err:
        build_exact(chain_model(), Region.chain(5), 0.1, FREE, budget=16)
    assert err.value.budget == 16 and "16" in str(err.value)


def test_free_infinite_temperature_statistics():
    st_ = build_exact(chain_model(), Region.chain(5), 0.0, FREE).stats
    assert st_.mean == pytest.approx(0.0, abs=1e-15)
    assert st_.variance == pytest.approx(5.0, rel=1e-14)


def test_degenerate_observable():
    space = SpinSpace((-1, 1), (1.0, 1.0), (2, 2))
    model = SpinModel(space, long_range_ising(1.0, 0.0, 4))
    st_ = build_exact(model, Region.chain(3), 0.3, FREE).stats
    assert st_.variance == 0.0
    assert st_.mass == {6: pytest.approx(1.0)}


def test_mass_function_against_histogram():
    region = Region.chain(7)
    g = build_exact(chain_model(0.0, 64), region, 0.15, FREE)
    Z, rows = ising_partition(region.sites, 0.15, 1.0, 0.0, 64)
    hist = defaultdict(float)
    for spins, w in rows:
        hist[sum(spins)] += w / Z
    assert set(hist) == set(g.stats.mass)
    for s, p in hist.items():
        assert g.stats.mass[s] == pytest.approx(p, rel=0, abs=1e-14)


def test_charfn_values():
    g = build_exact(chain_model(), Region.chain(1), 0.0, FREE)
    assert characteristic_function(g, 0.0) == 1 + 0j
    for t in (0.3, 1.1, 2.9):
        assert characteristic_function(g, t, centered=False) == pytest.approx(math.cos(t), abs=1e-15)


def test_charfn_against_direct_sum():
    region = Region.chain(6)
    g = build_exact(chain_model(), region, 0.1, FREE)
    Z, rows = ising_partition(region.sites, 0.1, 1.0, 0.0, 64)
    mean = sum(sum(s) * w for s, w in rows) / Z
    var = sum((sum(s) - mean) ** 2 * w for s, w in rows) / Z
    t = 0.7
    want = sum(w / Z * complex(math.cos(t * (sum(s) - mean) / math.sqrt(var)),
                               math.sin(t * (sum(s) - mean) / math.sqrt(var))) for s, w in rows)
    assert abs(characteristic_function(g, t) - want) <= 1e-12


def test_charfn_centered_needs_variance():
    space = SpinSpace((-1, 1), (1.0, 1.0), (1, 1))
    g = build_exact(SpinModel(space, long_range_ising(1.0, 0.0, 4)), Region.chain(2), 0.1, FREE)
    with pytest.raises(DomainError):
        characteristic_function(g, 0.5)


@given(st.floats(0, 0.5), st.floats(0, 0.95), st.integers(1, 7), st.sampled_from(["free", "plus", "minus"]))
@settings(max_examples=25, deadline=None)
def test_normalisation_modulus_and_rescaling(beta, alpha, n, rule):
    bc = {"free": FREE, "plus": PLUS, "minus": BoundaryCondition.constant(-1)}[rule]
    g = build_exact(chain_model(alpha, 8), Region.chain(n), beta, bc)
    assert abs(g.probabilities.sum() - 1.0) <= 1e-12
    ts = np.linspace(-6, 6, 41)
    centered = np.abs(characteristic_function(g, ts))
    assert np.all(centered <= 1 + 1e-12)
    raw = np.abs(characteristic_function(g, ts / math.sqrt(g.stats.variance), centered=False))
    assert np.max(np.abs(centered - raw)) <= 1e-12


@given(st.floats(0, 1.0), st.floats(0, 0.95), st.integers(1, 8))
@settings(max_examples=25, deadline=None)
def test_free_ising_mass_symmetric(beta, alpha, n):
    mass = build_exact(chain_model(alpha, 8), Region.chain(n), beta, FREE).stats.mass
    for s, p in mass.items():
        assert p == pytest.approx(mass[-s], abs=1e-12)


def test_metropolis_infinite_temperature_accepts_everything():
    res = metropolis_run(chain_model(), Region.chain(5), 0.0, PLUS, seed=3, sweeps=200)
    assert res.acceptance_rate == 1.0


def test_metropolis_is_deterministic():
    a = metropolis_run(chain_model(), Region.chain(5), 0.3, PLUS, seed=11, sweeps=3000, burn_in=10)
    b = metropolis_run(chain_model(), Region.chain(5), 0.3, PLUS, seed=11, sweeps=3000, burn_in=10)
    c = metropolis_run(chain_model(), Region.chain(5), 0.3, PLUS, seed=12, sweeps=3000, burn_in=10)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_metropolis_matches_exact_nine_sites():
    region = Box(4).region()
    model = chain_model(0.0, 64)
    g = build_exact(model, region, 0.2, FREE)
    res = metropolis_run(model, region, 0.2, FREE, seed=2024, sweeps=10**6, burn_in=1000)
    assert set(res.mass) == set(g.stats.mass)
    for s, p in g.stats.mass.items():
        assert abs(res.mass[s] - p) <= res.radius[s]


def test_metropolis_single_site_conditional_law():
    model = SpinModel(SpinSpace((-1, 0, 1), (1.0, 0.5, 2.0), (-1, 0, 1)),
                      long_range_ising(1.0, 0.0, 3, spins=(-1, 0, 1)))
    region = Region.chain(1)
    res = metropolis_run(model, region, 0.4, PLUS, seed=5, sweeps=200000, burn_in=100)
    p = single_site_density(make_context(model, region, 0.4, PLUS), (0,))
    for label, want in zip((-1, 0, 1), p):
        assert abs(res.mass.get(label, 0.0) - want) <= res.radius[label]


def test_metropolis_rejects_bad_schedule():
    with pytest.raises(DomainError):
        metropolis_run(chain_model(), Region.chain(2), 0.1, FREE, seed=0, sweeps=10, burn_in=10)


def test_autocorrelation_and_seeds():
    rng = np.random.default_rng(0)
    assert integrated_autocorrelation_time(rng.normal(size=20000)) == pytest.approx(0.5, abs=0.05)
    ar = np.zeros(20000)
    e = rng.normal(size=20000)
    for i in range(1, ar.size):
        ar[i] = 0.9 * ar[i - 1] + e[i]
    # AR(1) with rho = 0.9 has tau = (1 + rho) / (2 (1 - rho)) = 9.5
    assert integrated_autocorrelation_time(ar) == pytest.approx(9.5, rel=0.25)
    seeds = derive_seeds(42, 6)
    assert len(set(seeds)) == 6 and seeds == derive_seeds(42, 6)
