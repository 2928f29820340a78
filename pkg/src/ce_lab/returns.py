"""Returns to the critical neighbourhood, bound periods and free periods."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import OrbitRecord
from .errors import Truncated, WindowBeyondOrbit


class ReturnKind(str, enum.Enum):
    ReturnU = "ReturnU"
    PseudoReturn = "PseudoReturn"
    FreeReturn = "FreeReturn"
    InessentialSet = "InessentialSet"
    EssentialSet = "EssentialSet"


@dataclass(frozen=True)
class CriticalNeighborhoods:
    """U = D(0, e^-Delta) inside U' = D(0, e^-DeltaPrime), plus binding and scale."""

    Delta: float = 9.0
    DeltaPrime: float = 6.0
    beta: float = 0.01
    epsilon1: float = 0.05

    def __post_init__(self):
        if not 0 < self.DeltaPrime < self.Delta:
            raise ValueError("need 0 < DeltaPrime < Delta")
        if not 0 < self.epsilon1 < 1:
            raise ValueError("epsilon1 must lie in (0, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def delta(self) -> float:
        return math.exp(-self.Delta)

    @property
    def deltaPrime(self) -> float:
        return math.exp(-self.DeltaPrime)

    @property
    def S(self) -> float:
        """The large scale epsilon1 * delta."""
        return self.epsilon1 * self.delta

    def beta_admissible(self, gamma_ref: float, d: int) -> bool:
        return self.beta < gamma_ref / (4 * d)


def classify_distance(dist: float, nbhd: CriticalNeighborhoods) -> ReturnKind | None:
    """ReturnU on the closed disc of radius delta, PseudoReturn out to deltaPrime."""
    if dist <= nbhd.delta:
        return ReturnKind.ReturnU
    if dist < nbhd.deltaPrime:
        return ReturnKind.PseudoReturn
    return None


def classify_time(orbit: OrbitRecord, nbhd: CriticalNeighborhoods, n: int) -> ReturnKind | None:
    if not 0 <= n <= orbit.n:
        raise WindowBeyondOrbit(f"n={n} outside 0..{orbit.n}")
    return classify_distance(abs(orbit.points[n]), nbhd)


def r_index(dist: float) -> int:
    """Integer depth r with e^(-r-1/2) <= dist < e^(-r+1/2)."""
    if not 0 < dist < 1:
        raise ValueError("dist must lie in (0, 1)")
    r = math.ceil(-math.log(dist) - 0.5)
    # the logarithm can be off by an ulp at the bracket edges
    while math.exp(-r - 0.5) > dist:
        r += 1
    while dist >= math.exp(-r + 0.5):
        r -= 1
    return r


def binding_mask(points: np.ndarray, n: int, beta: float, j_max: int) -> np.ndarray:
    """holds[j-1] is True iff |xi_{n+j} - xi_j| <= e^(-beta j) |xi_j|."""
    j = np.arange(1, j_max + 1)
    early = points[1:j_max + 1]
    late = points[n + 1:n + j_max + 1]
    return np.abs(late - early) <= np.exp(-beta * j) * np.abs(early)


def bound_period(orbit: OrbitRecord, n: int, nbhd: CriticalNeighborhoods, j_max: int) -> int:
    """Largest p <= j_max such that the binding inequality holds for all j <= p."""
    if n + j_max > orbit.n:
        raise WindowBeyondOrbit(f"need the orbit up to {n + j_max}, have {orbit.n}")
    holds = binding_mask(orbit.points, n, nbhd.beta, j_max)
    fails = np.flatnonzero(~holds)
    if fails.size == 0:
        raise Truncated(j_max)
    return int(fails[0])


@dataclass
class ReturnEvent:
    n: int
    kind: ReturnKind
    r: int
    p: int
    ell: int
    dist: float
    alpha_n: float
    gamma_n: float
    truncated: bool = False
    open_ended: bool = False
    p_not_below_n: bool = False
    bound_ends_on_return: bool = False


def timeline(orbit: OrbitRecord, nbhd: CriticalNeighborhoods, n_max: int | None = None) -> list[ReturnEvent]:
    """Free returns with their bound and free periods, in time order."""
    last = orbit.n if n_max is None else min(n_max, orbit.n)
    pts = orbit.points
    mod = np.abs(pts[:last + 1])
    candidates = np.flatnonzero(mod < nbhd.deltaPrime)
    candidates = candidates[candidates >= 1]
    events: list[ReturnEvent] = []
    t = 1
    while True:
        i = np.searchsorted(candidates, t)
        if i >= candidates.size:
            break
        nu = int(candidates[i])
        truncated = False
        try:
            p = bound_period(orbit, nu, nbhd, last - nu)
        except Truncated as exc:
            p = exc.p_so_far
            truncated = True
        dist = float(mod[nu])
        ev = ReturnEvent(
            n=nu,
            kind=classify_distance(dist, nbhd),
            r=r_index(dist) if dist > 0 else 10**9,
            p=p,
            ell=0,
            dist=dist,
            alpha_n=float(orbit.alpha[nu]),
            gamma_n=float(orbit.gamma[nu]),
            truncated=truncated,
            p_not_below_n=p >= nu,
            bound_ends_on_return=p > 0 and mod[nu + p] < nbhd.deltaPrime,
        )
        events.append(ev)
        if truncated:
            break
        t = nu + p + 1
    for a, b in zip(events, events[1:]):
        a.ell = b.n - (a.n + a.p + 1)
    if events and not events[-1].truncated:
        events[-1].ell = last - events[-1].n - events[-1].p - 1
        events[-1].open_ended = True
    return events


def phase_labels(events: list[ReturnEvent], n_last: int) -> np.ndarray:
    """Label each index 0..n_last as 'pre', 'return', 'bound' or 'free'."""
    labels = np.full(n_last + 1, "pre", dtype=object)
    for ev in events:
        labels[ev.n] = "return"
        labels[ev.n + 1:ev.n + ev.p + 1] = "bound"
        labels[ev.n + ev.p + 1:ev.n + ev.p + 1 + max(ev.ell, 0)] = "free"
    if events and events[-1].open_ended:
        ev = events[-1]
        labels[ev.n + ev.p + 1:] = "free"
    return labels


@dataclass(frozen=True)
class BoundPrediction:
    p_lo: float
    p_hi: float
    log_expansion_lower_bound: float

    @property
    def expansion_lower_bound(self) -> float:
        return math.exp(self.log_expansion_lower_bound)


def bound_period_prediction(r: float, gamma_p: float, alpha_p1: float, beta: float,
                            eta: float, d: int) -> BoundPrediction:
    """Bracket for the bound period after a return of depth r, and the
    lower bound on the derivative gained over it (as a logarithm)."""
    rate = gamma_p + alpha_p1 + beta
    p_lo = (1 - eta) * d * r / rate
    p_hi = (1 + eta) * d * r / rate
    gain = (1 - eta) * (gamma_p - (d - 1) * (alpha_p1 + beta)) / rate * r
    return BoundPrediction(p_lo, p_hi, gain)
