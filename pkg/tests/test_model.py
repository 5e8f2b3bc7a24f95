import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrlclt.errors import DomainError
from lrlclt.model import (Box, BoundaryCondition, Region, SpinModel, SpinSpace, campanino_condition_probe,
                          coupling_J, geometric_potential, hamiltonian, long_range_ising, potential_norm,
                          table_potential, zero_potential)

from conftest import ising_coupling, ising_energy


@pytest.mark.parametrize("r,J,alpha,expected", [(1, 1.5, 0.5, 1.5), (2, 1.0, 0.0, 0.25), (4, 1.0, 0.5, 0.125)])
def test_coupling_values(r, J, alpha, expected):
    assert coupling_J(r, J, alpha) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("r,J,alpha", [(0, 1, 0), (2, 1, 1.0), (2, 1, -0.1), (2, 0, 0.5)])
def test_coupling_domain(r, J, alpha):
    with pytest.raises(DomainError):
        coupling_J(r, J, alpha)


def test_norm_short_sum():
    rep = potential_norm(long_range_ising(1.0, 0.0, 64), 2)
    assert rep.partial_sum == 2.5


def test_norm_zero_potential():
    rep = potential_norm(zero_potential(), 7)
    assert (rep.partial_sum, rep.tail_bound) == (0.0, 0.0)


def test_norm_against_term_by_term():
    phi = long_range_ising(1.0, 0.5, 64)
    oracle = 0.0
    for r in range(1, 51):
        oracle += 2 * ising_coupling(r, 1.0, 0.5, 10**9)
    assert potential_norm(phi, 50).partial_sum == pytest.approx(oracle, rel=0, abs=1e-12)


@given(st.floats(0, 0.95), st.integers(1, 40), st.integers(1, 60))
@settings(max_examples=40, deadline=None)
def test_norm_monotone_and_tail_bounded(alpha, R, extra):
    phi = long_range_ising(1.0, alpha, 64)
    a, b = potential_norm(phi, R), potential_norm(phi, R + extra)
    assert b.partial_sum >= a.partial_sum
    assert b.partial_sum <= a.upper * (1 + 1e-12)


def test_probe_ising_divergent():
    probe = campanino_condition_probe(long_range_ising(1.0, 0.0, 64), [4, 8, 16, 32])
    assert not probe.sqrt_series_converges
    assert not probe.condition_holds


def test_probe_geometric_converges():
    phi = geometric_potential(1.0, 4.0, 64, [[-1, 1], [1, -1]])
    probe = campanino_condition_probe(phi, [4, 8, 16, 32])
    assert probe.sqrt_series_converges and probe.tail_positive
    # sqrt terms are 2^{-r}, two per shell
    assert probe.sqrt_partial_sums[-1] == pytest.approx(2 * (1 - 2.0**-32), rel=1e-12)


def test_probe_finite_range_fails_tail():
    phi = table_potential([1.0, 0.5, 0.25], [[-1, 1], [1, -1]])
    probe = campanino_condition_probe(phi, [1, 2, 4, 8])
    assert not probe.tail_positive
    assert not probe.condition_holds


def test_hamiltonian_two_sites():
    model = SpinModel.long_range_ising(1.0, 0.0, 64)
    assert hamiltonian(model, Region.chain(2), (1, 1), BoundaryCondition.free()) == -1.0


def test_hamiltonian_zero_potential():
    model = SpinModel(SpinSpace.ising(), zero_potential())
    assert hamiltonian(model, Box(2).region(), (1, -1, 1, 1, -1), BoundaryCondition.constant(1)) == 0.0


def test_hamiltonian_against_double_loop():
    model = SpinModel.long_range_ising(1.0, 0.0, 3)
    region = Box(1).region()
    sigma = (1, -1, 1)
    got = hamiltonian(model, region, sigma, BoundaryCondition.constant(1))
    want = ising_energy(region.sites, sigma, 1.0, 0.0, 3, boundary=1)
    assert got == pytest.approx(want, rel=0, abs=1e-14)


def test_hamiltonian_rejects_incomplete():
    model = SpinModel.long_range_ising(1.0, 0.0, 3)
    with pytest.raises(DomainError):
        hamiltonian(model, Box(1).region(), (1, 1), BoundaryCondition.free())
    with pytest.raises(DomainError):
        hamiltonian(model, Box(1).region(), (1, 1, 1), BoundaryCondition.explicit({(5,): 1}))


def test_ordered_convention_doubles_interior():
    region, sigma = Box(2).region(), (1, -1, -1, 1, 1)
    e1 = hamiltonian(SpinModel.long_range_ising(1.0, 0.3, 6), region, sigma, BoundaryCondition.free())
    e2 = hamiltonian(SpinModel.long_range_ising(1.0, 0.3, 6, "ordered"), region, sigma, BoundaryCondition.free())
    assert e2 == pytest.approx(2 * e1, rel=1e-15)


@given(st.lists(st.sampled_from([-1, 1]), min_size=5, max_size=5), st.integers(-20, 20),
       st.dictionaries(st.integers(-6, 6), st.sampled_from([-1, 1]), max_size=12))
@settings(max_examples=50, deadline=None)
def test_translation_invariance(spins, shift, extra):
    model = SpinModel.long_range_ising(1.0, 0.4, 3)
    region = Box(2).region()
    assignment = {(y,): extra.get(y, 1) for y in range(-5, 6) if (y,) not in region}
    bc = BoundaryCondition.explicit(assignment)
    e0 = hamiltonian(model, region, spins, bc)
    e1 = hamiltonian(model, region.shifted((shift,)), spins, bc.shifted((shift,)))
    assert e1 == pytest.approx(e0, rel=1e-13, abs=1e-13)


@given(st.lists(st.sampled_from([-1, 1]), min_size=7, max_size=7), st.floats(0, 0.99))
@settings(max_examples=50, deadline=None)
def test_spin_flip_symmetry(spins, alpha):
    model = SpinModel.long_range_ising(1.0, alpha, 8)
    region = Box(3).region()
    flipped = [-s for s in spins]
    free = BoundaryCondition.free()
    assert hamiltonian(model, region, spins, free) == pytest.approx(hamiltonian(model, region, flipped, free),
                                                                     rel=1e-14, abs=1e-14)


@pytest.mark.parametrize("k,d", [(0, 1), (3, 1), (1, 2), (2, 2), (1, 3)])
def test_box_cardinality(k, d):
    box = Box(k, d)
    scan = sum(1 for x in itertools.product(range(-k - 2, k + 3), repeat=d) if x in box)
    assert scan == len(box) == (2 * k + 1) ** d == len(box.sites)


def test_spin_space_checks():
    with pytest.raises(DomainError):
        SpinSpace((-1, 1), (1.0, 0.0), (-1, 1))
    with pytest.raises(DomainError):
        SpinSpace((-1, 1), (1.0, 1.0), (-1, 0.5))
    assert SpinSpace((0, 1), (1.0, 2.0), (3, 3)).is_degenerate
    sp = SpinSpace((0, 1, 2), (1.0, 2.0, 1.0), (0, 1, 2))
    # normalised law (1/4, 1/2, 1/4) on f = 0, 1, 2
    assert sp.var_lambda == pytest.approx(0.5, rel=1e-15)


def test_explicit_boundary_must_cover():
    bc = BoundaryCondition.explicit({(3,): 1})
    assert bc.spin_at((3,)) == 1
    with pytest.raises(DomainError):
        bc.spin_at((4,))
    comp = BoundaryCondition.composite({(1,): -1}, BoundaryCondition.constant(1))
    assert comp.spin_at((1,)) == -1 and comp.spin_at((9,)) == 1
    assert BoundaryCondition.free().spin_at((2,)) is None


def test_table_potential_kernel():
    phi = table_potential([2.0, 1.0], [[1.0, -1.0], [-1.0, 1.0]])
    assert phi.kernel((1,), 0, 1) == -2.0
    assert phi.kernel((-2,), 1, 1) == 1.0
    assert phi.kernel((3,), 0, 0) == 0.0
    assert np.array_equal(phi.matrix_array, phi.matrix_array.T)
