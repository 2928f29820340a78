"""Batch checks of the dynamical lemmas and numerical invariants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import Sampler, density_trend_ok, scale_sweep
from .dynamics import FamilyParams, ce_window_test, chain_identity_residual, critical_orbit, transversality_ratio
from .exclusion import derive_constants, gamma_I_from, kappa_from, M_tilde_from
from .returns import CriticalNeighborhoods, timeline
from .runner import run_scenario
from .scenario import load_scenario

# squares next to -2 and -1.76 whose real axis carries CE parameters
P_LT_N_SQUARES = ((complex(-1.995, 0.0), 0.01), (complex(-1.78, 0.0), 0.02))
CE_GAMMA = 0.3


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_parameters(n: int, seed: int, radius: float = 2.0) -> np.ndarray:
    """Uniform points in the closed disc |c| <= radius."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    r = radius * np.sqrt(rng.random(n))
    t = 2 * np.pi * rng.random(n)
    return r * np.exp(1j * t)


def check_chain_identity(n_params: int = 1000, seed: int = 7, n_max: int = 50) -> list[Check]:
    worst = 0.0
    count = 0
    cs = random_parameters(n_params, seed)
    for i, c in enumerate(cs):
        d = (2, 3, 4)[i % 3]
        o = critical_orbit(FamilyParams(d, c), n_max)
        last = o.n if o.escape_index is None else o.escape_index - 1
        for n in range(1, last + 1):
            r = chain_identity_residual(o, n)
            if not math.isfinite(r):
                continue
            worst = max(worst, r)
            count += 1
    return [Check("chain-identity", worst < 1e-9, f"{count} residuals over {n_params} parameters, max {worst:.3g}")]


def check_transversality() -> list[Check]:
    rho, n_used, conv = transversality_ratio(FamilyParams(2, -2), 60)
    err = abs(rho - 2 / 3)
    return [Check("transversality", err < 1e-9 and conv, f"L(-2) = {rho.real:.15f}, |L - 2/3| = {err:.3g}, n = {n_used}")]


def lattice(center: complex, side: float, n: int = 41) -> np.ndarray:
    """n x n node lattice on the closed square; odd n includes the centre row."""
    u = np.linspace(-0.5, 0.5, n)
    x, y = np.meshgrid(u, u)
    return (center + side * (x + 1j * y)).ravel()


def ce_return_events(n_max: int = 10000, n_side: int = 41, gamma: float = CE_GAMMA):
    nbhd = CriticalNeighborhoods()
    out = []
    for center, side in P_LT_N_SQUARES:
        for c in lattice(center, side, n_side):
            o = critical_orbit(FamilyParams(2, c), n_max)
            if o.escape_index is not None or o.n < 2:
                continue
            for ev in timeline(o, nbhd):
                if ev.truncated:
                    continue
                if ce_window_test(o, gamma, 1, ev.n):
                    out.append((c, ev))
    return out


def check_p_lt_n(n_max: int = 10000) -> list[Check]:
    evs = ce_return_events(n_max)
    bad = [(c, ev) for c, ev in evs if not ev.p < ev.n]
    worst = max((ev.p / ev.n for _, ev in evs), default=0.0)
    return [Check("p<n", not bad and len(evs) > 0,
                  f"{len(evs)} returns on CE orbits, {len(bad)} with p >= n, max p/n {worst:.3f}")]


def bound_order_violations(events, slack: int = 2) -> int:
    """Pairs of returns with r_1 <= r_2 - 1 but p_1 > p_2 + slack."""
    bad = 0
    for a in events:
        for b in events:
            if a.r <= b.r - 1 and a.p > b.p + slack:
                bad += 1
    return bad


def check_bound_order(n_max: int = 10000) -> list[Check]:
    evs = ce_return_events(n_max)
    by_c: dict[complex, list] = {}
    for c, ev in evs:
        by_c.setdefault(c, []).append(ev)
    pairs = sum(len(v) * (len(v) - 1) for v in by_c.values())
    bad = sum(bound_order_violations(v) for v in by_c.values())
    return [Check("bound-order", bad == 0, f"{pairs} ordered pairs of returns, {bad} with r1 < r2 but p1 > p2 + 2")]


def _scenario_runs(names=("cheb-neighborhood", "essential-startup")):
    return [(n, run_scenario(load_scenario(n))) for n in names]


def check_run_lemmas() -> list[Check]:
    out = []
    for name, res in _scenario_runs():
        ch = res.summary["checks"]
        out.append(Check(f"inessential-no-deletion[{name}]", ch["inessential_deletions"] == 0,
                         f"{ch['inessential_returns']} inessential returns, {ch['inessential_deletions']} deletions"))
        out.append(Check(f"deletion-bound[{name}]", ch["deletion_bound_violations"] == 0,
                         f"{ch['deletion_bound_checked']} checked, {ch['deletion_bound_violations']} violations"))
        out.append(Check(f"q-bound[{name}]", ch["q_violations"] == 0,
                         f"{ch['q_records']} escape lengths, {ch['q_violations']} above M~ r"))
    return out


def check_density_trend(anchor: complex = complex(-2, 0), k_lo: int = 2, k_hi: int = 8,
                        grid: int = 200) -> list[Check]:
    rep = scale_sweep(anchor, 2, 1.0, 4.0, k_hi, Sampler("grid", grid), k_min=k_lo)
    ok, msgs = density_trend_ok(rep, 0.9)
    dens = ", ".join(f"{r.density:.4f}" for r in rep.rows)
    return [Check("density-trend", ok, f"densities k={k_lo}..{k_hi}: {dens}" + ("; " + "; ".join(msgs) if msgs else ""))]


def check_constants() -> list[Check]:
    k = kappa_from(0.6, 1.2)
    gi = gamma_I_from(0.6, 0.6, 0.9, 0.3, 2)
    mt = M_tilde_from(2, 1.3863, 0.01)
    derive_constants(0.6, 1.2, 0.6, 0.3, 2, kappa_prime_choice=0.9)
    return [
        Check("constants-kappa", k == 0.875, f"kappa = {k!r}"),
        Check("constants-gamma_I", abs(gi - 0.6 * 0.06 / 1.26) < 1e-15 and abs(gi - 0.02857) < 1e-5, f"gamma_I = {gi!r}"),
        Check("constants-M_tilde", math.isclose(mt, 443616.0, rel_tol=1e-12), f"M~ = {mt!r}"),
    ]


SUITES = {
    "chain-identity": check_chain_identity,
    "transversality": check_transversality,
    "p<n": check_p_lt_n,
    "p-lt-n": check_p_lt_n,
    "bound-order": check_bound_order,
    "inessential-no-deletion": check_run_lemmas,
    "q-bound": check_run_lemmas,
    "density-trend": check_density_trend,
    "constants": check_constants,
}


def run_suite(name: str, **kwargs) -> list[Check]:
    if name == "all":
        seen = set()
        out = []
        for key, fn in SUITES.items():
            if fn in seen:
                continue
            seen.add(fn)
            out += fn()
        return out
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](**kwargs)
