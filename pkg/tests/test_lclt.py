import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrlclt.errors import DomainError
from lrlclt.gibbs import build_exact, metropolis_run
from lrlclt.lclt import (charfn_bound_check, decimation_experiment, detect_span, gaussian_tail_integral,
                         iclt_report, integral_decomposition, kolmogorov_distance, lclt_discrepancy, sublattice,
                         total_probability_gap)
from lrlclt.model import Box, BoundaryCondition, Region, SpinModel, SpinSpace, long_range_ising

FREE = BoundaryCondition.free()
PLUS = BoundaryCondition.constant(1)


def ising(alpha=0.0, trunc=64):
    return SpinModel.long_range_ising(1.0, alpha, trunc)


def test_span_examples():
    sp = detect_span(SpinSpace.ising())
    assert (sp.a, sp.h) == (-1, 2)
    sp = detect_span(SpinSpace((0, 1, 2), (1, 1, 1), (0, 3, 9)))
    assert (sp.a, sp.h, sp.q) == (0, 3, 3)
    with pytest.raises(DomainError):
        detect_span(SpinSpace((0, 1), (1, 1), (4, 4)))


def test_iclt_infinite_temperature_ratio():
    runs = {k: build_exact(ising(), Box(k).region(), 0.0, FREE) for k in (1, 2, 3)}
    rows = iclt_report(runs)
    assert all(r.ratio == pytest.approx(1.0, rel=1e-13) for r in rows)
    ks = [r.kolmogorov for r in rows]
    assert all(b < a for a, b in zip(ks, ks[1:]))


def kolmogorov_oracle(mass):
    mean = sum(s * p for s, p in mass.items())
    sd = math.sqrt(sum((s - mean) ** 2 * p for s, p in mass.items()))
    worst, cum = 0.0, 0.0
    for s in sorted(mass):
        z = (s - mean) / sd
        phi = 0.5 * (1 + math.erf(z / math.sqrt(2)))
        worst = max(worst, abs(cum - phi))
        cum += mass[s]
        worst = max(worst, abs(cum - phi))
    return worst


def test_kolmogorov_against_erf_oracle():
    for beta, n in ((0.0, 1), (0.1, 5), (0.3, 7)):
        g = build_exact(ising(0.5, 8), Region.chain(n), beta, PLUS)
        assert kolmogorov_distance(g.stats) == pytest.approx(kolmogorov_oracle(g.stats.mass), abs=1e-14)


def test_single_site_lclt_hand_value():
    g = build_exact(ising(), Region.chain(1), 0.0, FREE)
    row = lclt_discrepancy(g, detect_span(g.model.space))
    # (sqrt(1)/2) * 0.5 against the standard normal density at 1
    assert row.sup == pytest.approx(0.25 - math.exp(-0.5) / math.sqrt(2 * math.pi), abs=1e-15)
    assert row.mass_total == pytest.approx(1.0, abs=1e-15)


def test_lclt_chain_trend_and_mass():
    rows = []
    for k in range(1, 5):
        g = build_exact(ising(0.0, 64), Box(k).region(), 0.1, FREE)
        row = lclt_discrepancy(g, detect_span(g.model.space))
        assert row.mass_total == pytest.approx(1.0, abs=1e-12)
        rows.append(row.sup)
    assert rows[-1] < rows[0]


def test_gaussian_tail_closed_form():
    g = build_exact(ising(), Region.chain(7), 0.0, FREE)
    rep = integral_decomposition(g, detect_span(g.model.space), 1.0, 0.5)
    assert rep.I2 == pytest.approx(gaussian_tail_integral(1.0), rel=1e-12)
    assert gaussian_tail_integral(8.0) == pytest.approx(math.sqrt(2 * math.pi) * math.erfc(8 / math.sqrt(2)),
                                                        rel=1e-12)
    assert gaussian_tail_integral(8.0) < 1e-14


def test_single_site_outer_integrals_closed_form():
    g = build_exact(ising(), Region.chain(1), 0.0, FREE)
    B, delta = 0.3, 1.0
    rep = integral_decomposition(g, detect_span(g.model.space), B, delta)
    assert rep.I3 == pytest.approx(2 * (math.sin(delta) - math.sin(B)), abs=1e-8)
    assert rep.I4 == pytest.approx(2 * (1 - math.sin(delta)), abs=1e-8)
    assert rep.converged
    with pytest.raises(DomainError):
        integral_decomposition(g, detect_span(g.model.space), 1.0, 1.0)


def test_integrals_dominate_discrepancy():
    g = build_exact(ising(), Box(3).region(), 0.1, FREE)
    span = detect_span(g.model.space)
    rep = integral_decomposition(g, span, 1.5, 0.7)
    assert 2 * math.pi * lclt_discrepancy(g, span).sup <= rep.total + 1e-6


def test_charfn_closed_form_at_infinite_temperature():
    n = 5
    g = build_exact(ising(), Region.chain(n), 0.0, FREE)
    chk = charfn_bound_check(g, "highT", delta=0.3, constant=0.1, points=101)
    want = np.abs(np.cos(chk.t / math.sqrt(n))) ** n
    assert np.max(np.abs(chk.modulus - want)) <= 1e-13
    assert chk.t.max() < 0.3 * math.sqrt(n)
    tail = charfn_bound_check(g, "highT_tail", delta=0.3, constant=0.1, points=100)
    assert tail.t.max() == pytest.approx(math.pi / 2 * math.sqrt(n))
    with pytest.raises(DomainError):
        charfn_bound_check(g, "highT", delta=0.3, constant=-0.2)
    with pytest.raises(DomainError):
        charfn_bound_check(g, "nowhere", delta=0.3, constant=0.1)


def test_charfn_at_zero_is_one():
    g = build_exact(ising(), Region.chain(4), 0.2, PLUS)
    chk = charfn_bound_check(g, "highT", delta=0.3, constant=0.1, points=3)
    assert chk.modulus[1] == pytest.approx(1.0, abs=1e-15)
    assert chk.holds[1]


@given(st.floats(0.0, 0.3), st.floats(-4, 4))
@settings(max_examples=30, deadline=None)
def test_decimated_modulus_bounded(beta, t):
    res = decimation_experiment(ising(0.0, 6), Box(3).region(), 3, beta, PLUS, [t], samples=3, seed=1)
    assert np.all(res.moduli <= 1 + 1e-12)


def test_decimation_one_site_and_infinite_temperature():
    region = Box(2).region()
    assert sublattice(region, 3).sites == ((0,),)
    with pytest.raises(DomainError):
        sublattice(Region.chain(2, start=1), 5)
    res = decimation_experiment(ising(0.0, 6), region, 3, 0.0, PLUS, [0.0, 0.5, 1.0], samples=5, seed=4)
    # at beta = 0 the frozen spins are irrelevant: a single +-1 spin has modulus |cos(t / sqrt(D))|
    assert np.ptp(res.moduli, axis=0).max() == 0.0
    assert np.allclose(res.sup_modulus, np.abs(np.cos(np.array([0.0, 0.5, 1.0]) / math.sqrt(5))), atol=1e-15)


def test_total_probability_gap():
    assert total_probability_gap(ising(0.5, 6), Box(3).region(), 3, 0.2, PLUS) <= 1e-10
    assert total_probability_gap(ising(0.0, 6), Region.chain(5), 2, 0.4, FREE) <= 1e-10


def test_mc_lclt_rows_carry_radii():
    region = Region.chain(4)
    g = build_exact(ising(0.0, 8), region, 0.2, FREE)
    res = metropolis_run(ising(0.0, 8), region, 0.2, FREE, seed=9, sweeps=50000, burn_in=100)
    span = detect_span(g.model.space)
    exact, mc = lclt_discrepancy(g, span), lclt_discrepancy(res, span, n_sites=4)
    assert mc.method == "mc" and mc.radius > 0
    assert np.all(mc.table[:, 6] >= 0)
    assert abs(mc.mean - exact.mean) < 0.2
    with pytest.raises(DomainError):
        lclt_discrepancy(res, span)
