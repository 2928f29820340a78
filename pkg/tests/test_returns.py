import math

import numpy as np
import pytest

from ce_lab.dynamics import FamilyParams, critical_orbit, orbit_from_points
from ce_lab.errors import Truncated, WindowBeyondOrbit
from ce_lab.returns import (
    CriticalNeighborhoods,
    ReturnKind,
    bound_period,
    bound_period_prediction,
    classify_distance,
    classify_time,
    phase_labels,
    r_index,
    timeline,
)
from oracles import brute_r_index, scalar_bound_period

ANCHOR = -1.596229475  # first deep return at time 37
NB = CriticalNeighborhoods()


def test_neighbourhood_defaults():
    assert NB.delta == pytest.approx(math.exp(-9))
    assert NB.deltaPrime == pytest.approx(math.exp(-6))
    assert NB.S == pytest.approx(0.05 * math.exp(-9))
    assert NB.S < NB.delta < NB.deltaPrime
    assert NB.beta_admissible(0.3, 2) and not NB.beta_admissible(0.03, 2)
    with pytest.raises(ValueError):
        CriticalNeighborhoods(Delta=5, DeltaPrime=6)


def _orbit_through(modulus: float) -> object:
    pts = np.array([0, 0.5, modulus, 0.5], dtype=complex)
    return orbit_from_points(pts, 2, 0.5, 2.0)


def test_classify_examples():
    nb = CriticalNeighborhoods(Delta=20, DeltaPrime=10)
    o = critical_orbit(FamilyParams(2, -2), 30)
    assert all(classify_time(o, nb, n) is None for n in range(1, 31))
    assert classify_time(_orbit_through(math.exp(-25)), nb, 2) is ReturnKind.ReturnU
    assert classify_time(_orbit_through(math.exp(-15)), nb, 2) is ReturnKind.PseudoReturn
    with pytest.raises(WindowBeyondOrbit):
        classify_time(o, nb, 31)


def test_classify_tie_goes_to_closed_disc():
    nb = CriticalNeighborhoods()
    assert classify_distance(nb.delta, nb) is ReturnKind.ReturnU
    assert classify_distance(nb.deltaPrime, nb) is None


@pytest.mark.parametrize("x,want", [(10.3, 10), (10.5, 10), (9.51, 10)])
def test_r_index_examples(x, want):
    assert r_index(math.exp(-x)) == want


def test_r_index_rejects_out_of_range():
    with pytest.raises(ValueError):
        r_index(1.0)
    with pytest.raises(ValueError):
        r_index(0.0)


def test_r_index_matches_brute_force():
    rng = np.random.default_rng(3)
    for x in rng.uniform(0.6, 40, 300):
        dist = math.exp(-x)
        assert r_index(dist) == brute_r_index(dist)


def test_bound_period_zero_when_binding_fails_immediately():
    pts = np.array([0, 1.0, 2.0, 0.001, 5.0, 1.0], dtype=complex)
    o = orbit_from_points(pts, 2, 1.0, 10.0)
    assert bound_period(o, 3, NB, 2) == 0


def test_bound_period_recorded_return_cross_checked():
    o = critical_orbit(FamilyParams(2, ANCHOR), 400)
    assert abs(o.points[37]) < NB.delta
    p = bound_period(o, 37, NB, 300)
    assert p == scalar_bound_period(o.points, 37, NB.beta, 300)
    assert p == 36


def test_bound_period_truncated_and_window():
    o = critical_orbit(FamilyParams(2, ANCHOR), 400)
    with pytest.raises(Truncated) as exc:
        bound_period(o, 37, NB, 10)
    assert exc.value.p_so_far == 10
    with pytest.raises(WindowBeyondOrbit):
        bound_period(o, 37, NB, 400)


def test_timeline_empty_for_chebyshev():
    assert timeline(critical_orbit(FamilyParams(2, -2), 1000), NB) == []


def test_timeline_single_open_ended_event():
    o = critical_orbit(FamilyParams(2, ANCHOR), 150)
    evs = timeline(o, NB)
    assert len(evs) == 1
    ev = evs[0]
    assert (ev.n, ev.kind, ev.r, ev.p) == (37, ReturnKind.ReturnU, 10, 36)
    assert ev.open_ended and ev.ell == 150 - 37 - 36 - 1


def _structural_ok(orbit, evs):
    pts = np.abs(orbit.points)
    for a, b in zip(evs, evs[1:]):
        assert b.n == a.n + a.p + 1 + a.ell
        # no return was skipped inside the free period
        free = pts[a.n + a.p + 1:b.n]
        assert np.all(free >= NB.deltaPrime)


def test_timeline_structure_near_minus_176():
    rng = np.random.default_rng(11)
    count = 0
    cs = list(-1.76 + 0.01 * (rng.random(20) - 0.5) + 0.01j * (rng.random(20) - 0.5))
    cs += list(np.linspace(-1.79, -1.77, 9))
    for c in cs:
        o = critical_orbit(FamilyParams(2, c), 5000)
        evs = timeline(o, NB)
        _structural_ok(o, evs)
        count += len(evs)
    assert count > 0


def test_phase_labels_tile_without_gaps():
    o = critical_orbit(FamilyParams(2, -1.7975), 3000)
    evs = timeline(o, NB)
    labels = phase_labels(evs, 3000)
    first = evs[0].n
    assert set(labels[:first]) == {"pre"}
    assert "pre" not in set(labels[first:])
    assert sum(1 for x in labels if x == "return") == len(evs)


def test_bound_prediction_examples():
    bp = bound_period_prediction(30, 1.0, 0.0, 0.01, 0.1, 2)
    assert bp.p_lo == pytest.approx(0.9 * 60 / 1.01)
    assert bp.p_hi == pytest.approx(1.1 * 60 / 1.01)
    flat = bound_period_prediction(30, 1.5, 0.0, 0.0, 0.0, 2)
    assert flat.p_lo == flat.p_hi == pytest.approx(60 / 1.5)
    assert bp.expansion_lower_bound == pytest.approx(math.exp(0.9 * (1.0 - 0.01) / 1.01 * 30))


def test_bound_prediction_brackets_a_measured_return():
    # recorded ReturnU at n = 458 of c = -1.7975 (depth r = 9, p = 30)
    o = critical_orbit(FamilyParams(2, -1.7975), 10000)
    ev = next(e for e in timeline(o, NB) if e.n == 458)
    assert (ev.r, ev.p) == (9, 30)
    bp = bound_period_prediction(ev.r, o.gamma[ev.p], o.alpha[ev.p + 1], NB.beta, 0.5, 2)
    assert bp.p_lo <= ev.p <= bp.p_hi
