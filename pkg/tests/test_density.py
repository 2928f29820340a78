import math

import numpy as np
import pytest

from ce_lab.density import (
    DensityReport,
    DensityRow,
    Sampler,
    density_at_scale,
    density_trend_ok,
    expansion_fit,
    initial_recurrence_fit,
    membership_sample,
    outside_expansion_estimate,
    render_pgm,
    scale_sweep,
    segment_minima,
    wilson,
)
from ce_lab.dynamics import FamilyParams, critical_orbit, lyapunov_summary
from ce_lab.errors import EmptyPool, PrecisionExhausted
from ce_lab.returns import CriticalNeighborhoods
from oracles import brute_escape_index, wilson_closed_form

NB = CriticalNeighborhoods()
LOG4 = math.log(4)


# ------------------------------------------------------------- membership

def test_membership_examples():
    assert membership_sample(1, 2, 10) == membership_sample(1 + 0j, 2, 10)
    m = membership_sample(1, 2, 10)
    assert (m.status, m.n) == ("Escaped", 3)
    for n_max in (1, 10, 10000):
        assert membership_sample(-2, 2, n_max).status == "Undetermined"
    assert membership_sample(1j, 2, 100).status == "Undetermined"
    with pytest.raises(ValueError):
        membership_sample(0, 2, 0)


def test_membership_matches_plain_iteration():
    rng = np.random.default_rng(5)
    cs = rng.uniform(-2.2, 0.6, 300) + 1j * rng.uniform(-1.2, 1.2, 300)
    for c in cs:
        want = brute_escape_index(c, 2, 300)
        got = membership_sample(c, 2, 300)
        assert (got.n if got.status == "Escaped" else None) == want


# ------------------------------------------------------------ samplers

def test_grid_offsets_are_cell_centres():
    offs = Sampler("grid", 4).offsets()
    assert offs.size == 16
    assert offs[0] == complex(-0.375, 0.375) and offs[-1] == complex(0.375, -0.375)


def test_stratified_offsets_one_per_cell_and_reproducible():
    s = Sampler("stratified", 10, seed=42)
    a, b = s.offsets(3), s.offsets(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, s.offsets(4))
    cells = {(math.floor((w.real + 0.5) * 10), math.floor((0.5 - w.imag) * 10)) for w in a}
    assert len(cells) == 100


def test_sampler_rejects_bad_input():
    with pytest.raises(ValueError):
        Sampler("halton", 4)
    with pytest.raises(ValueError):
        Sampler("grid", 0)


# ------------------------------------------------------------- density rows

def test_wilson_matches_closed_form():
    for k, n in [(0, 10), (3, 10), (40000, 40000), (123, 400)]:
        lo, hi = wilson(k, n)
        wlo, whi = wilson_closed_form(k, n)
        assert lo == pytest.approx(max(0.0, wlo), abs=1e-12)
        assert hi == pytest.approx(min(1.0, whi), abs=1e-12)


def test_density_exterior_and_interior():
    out = density_at_scale(3, 2, 0.01, Sampler("grid", 20), 1000)
    assert out.density == 1.0 and out.escaped == out.samples == 400
    inner = density_at_scale(0, 2, 0.01, Sampler("grid", 20), 1000)
    assert inner.density == 0.0 and inner.escaped == 0
    # the fixed point attracts, so every sample is caught by the cycle test
    assert inner.in_budget_nonescaped == 400


def test_density_chebyshev_regression_value():
    row = density_at_scale(-2, 2, 1e-4, Sampler("grid", 200), 10_000)
    assert row.density >= 0.95
    # frozen from the first validated run
    assert (row.samples, row.escaped, row.undetermined, row.in_budget_nonescaped) == (40000, 40000, 0, 0)
    assert row.wilson_low == pytest.approx(0.9999039727516006, rel=1e-12)


def test_row_counts_partition_samples():
    row = density_at_scale(-0.75 + 0.1j, 2, 0.05, Sampler("stratified", 30, seed=1), 500)
    assert row.escaped + row.undetermined + row.in_budget_nonescaped == row.samples
    assert 0 < row.density < 1
    assert row.wilson_low <= row.density <= row.wilson_high


def test_density_is_deterministic():
    s = Sampler("stratified", 40, seed=9)
    a = density_at_scale(-0.75 + 0.1j, 2, 0.05, s, 500, k=2)
    b = density_at_scale(-0.75 + 0.1j, 2, 0.05, s, 500, k=2)
    assert a == b


def test_monotone_in_budget_on_fixed_samples():
    s = Sampler("grid", 30)
    counts = [density_at_scale(-0.75 + 0.1j, 2, 0.05, s, n).escaped for n in (50, 200, 800, 3200)]
    assert counts == sorted(counts)


def test_chebyshev_sweep_frozen_table():
    rep = scale_sweep(-2, 2, 1.0, 4, 8, Sampler("grid", 200), k_min=2)
    assert [r.k for r in rep.rows] == list(range(2, 9))
    assert [r.n_max for r in rep.rows] == [1000 * 2 ** k for k in range(2, 9)]
    # frozen from the first validated run: every grid sample escapes
    assert [r.escaped for r in rep.rows] == [40000] * 7
    ok, msgs = density_trend_ok(rep, final_min=0.9)
    assert ok and msgs == []


def test_sweep_exterior_interior_all_rows():
    s = Sampler("grid", 16)
    assert all(r.density == 1.0 for r in scale_sweep(3, 2, 0.01, 4, 4, s).rows)
    assert all(r.density == 0.0 for r in scale_sweep(0, 2, 0.01, 4, 4, s).rows)


def test_trend_check_flags_drops():
    rows = [DensityRow(k, 1.0, 100, e, 100 - e, 0, e / 100, 0.01, 0, 1, 100, False)
            for k, e in [(0, 90), (1, 50)]]
    ok, msgs = density_trend_ok(DensityReport(-2, 2, rows))
    assert not ok and "k=1" in msgs[0]


def test_csv_header_and_rows():
    rep = scale_sweep(3, 2, 0.01, 4, 1, Sampler("grid", 4))
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(DensityRow.CSV_FIELDS)
    assert len(lines) == 3


# ------------------------------------------------------- extended precision

def test_extended_path_agrees_with_exterior():
    row = density_at_scale(3, 2, 1e-20, Sampler("grid", 3), 50)
    assert row.extended and row.density == 1.0


def test_extended_path_chebyshev_deep_scale():
    row = density_at_scale(-2, 2, 1e-15, Sampler("grid", 2), 200)
    assert row.extended
    # the offset from -2 grows by about 4 per iterate and reaches order one after ~25 steps
    assert row.escaped == 4


def test_extended_floor_raises():
    with pytest.raises(PrecisionExhausted):
        density_at_scale(-2, 2, 1e-31, Sampler("grid", 2), 10)


# ------------------------------------------------------------ envelopes

@pytest.mark.parametrize("c", [-2, 1j])
def test_recurrence_fit_misiurewicz_zero(c):
    o = critical_orbit(FamilyParams(2, c), 1000)
    K, a = initial_recurrence_fit(o)
    assert a == 0.0
    assert K == pytest.approx(min(1.0, float(np.min(np.abs(o.points[1:])))))


@pytest.mark.parametrize("c", [-1.7975, -1.78])
def test_recurrence_fit_near_minus_176(c):
    o = critical_orbit(FamilyParams(2, c), 10_000)
    K, a = initial_recurrence_fit(o)
    s = lyapunov_summary(o)
    assert a <= (s.gamma_upper - s.gamma_lower) / (2 - 1) + 0.05
    n = np.arange(1, o.n + 1)
    assert np.all(np.abs(o.points[1:]) >= K * np.exp(-a * n) * (1 - 1e-12))
    # cross-check at double length
    K2, a2 = initial_recurrence_fit(critical_orbit(FamilyParams(2, c), 20_000))
    assert a2 <= a + 0.05 and K2 <= K


def test_recurrence_fit_preconditions():
    with pytest.raises(ValueError):
        initial_recurrence_fit(critical_orbit(FamilyParams(2, -2), 20))
    with pytest.raises(ValueError):
        initial_recurrence_fit(critical_orbit(FamilyParams(2, 1), 100))


def test_expansion_single_point_convention():
    assert expansion_fit([1], [math.log(3)]) == (1.0, math.log(3))


def test_expansion_fit_is_lower_bound():
    ns = np.arange(1, 30, dtype=float)
    m = 0.7 * ns - 2 + np.sin(ns)
    C, g = expansion_fit(ns, m)
    assert np.all(math.log(C) + g * ns <= m + 1e-12)


def test_outside_expansion_chebyshev_log4():
    C, g = outside_expansion_estimate(-2, NB)
    assert g == pytest.approx(LOG4, rel=0.1)
    ns, ms = segment_minima(critical_orbit(FamilyParams(2, -2), 5000), NB, 100)
    assert np.all(math.log(C) + g * ns <= ms + 1e-9)


def test_outside_expansion_at_i_positive():
    C, g = outside_expansion_estimate(1j, NB)
    _, g_long = outside_expansion_estimate(1j, NB, n_seg=300, orbit_len=20_000)
    assert g > 0
    assert g == pytest.approx(g_long, rel=1e-6)


def test_outside_expansion_empty_pool():
    # c = 0 sits at the critical point forever
    with pytest.raises(EmptyPool):
        outside_expansion_estimate(0, NB, orbit_len=100)


# ---------------------------------------------------------------- render

def test_pgm_header_and_grey_levels():
    data = render_pgm(-0.75, 2.0, 2, 8, 1000)
    head = b"P5\n8 8\n255\n"
    assert data.startswith(head) and len(data) == len(head) + 64
    grey = np.frombuffer(data[len(head):], dtype=np.uint8)
    assert grey.max() <= 255 and (grey == 0).any() and (grey > 0).any()


def test_near_return_along_repelling_cycle_is_not_a_cycle():
    # the orbit sits next to the repelling fixed point 2 for ~120 steps before leaving
    c = complex(-2, 2.620272218306303e-79)
    want = brute_escape_index(c, 2, 400)
    assert want is not None
    assert membership_sample(c, 2, 400) == membership_sample(c, 2, 400)
    assert membership_sample(c, 2, 400).n == want
