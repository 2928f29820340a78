"""Start-up, initial deletion, promotion bookkeeping and escape-time scan."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import FamilyParams, critical_orbit, distortion_sum
from .errors import InvalidConstants, LedgerStall, OrbitEscaped, OrbitHitsCritical, StartupFailed
from .partition import (
    DEFAULT_DEPTH_LIMIT,
    ParamSquare,
    PolynomialFamily,
    Status,
    essential,
    geometry_block,
    refine_at_essential_return,
)
from .returns import CriticalNeighborhoods, ReturnKind


# ---------------------------------------------------------------- constants

def kappa_from(gamma_under: float, gamma_bar: float) -> float:
    return 1.0 - gamma_under / (4.0 * gamma_bar)


def gamma_I_from(gamma_under: float, gamma_H: float, kappa_prime: float, alpha_nu0: float, d: int) -> float:
    g = gamma_under * (1.0 - kappa_prime)
    return min(gamma_under, gamma_H) * g / (2.0 * alpha_nu0 * d + g)


def gamma_C_from(gamma_I: float, gamma_H: float, d: int) -> float:
    return min(gamma_I / (12.0 * d), gamma_H)


def M_tilde_from(d: int, gamma_bar: float, gamma_C: float) -> float:
    return 16.0 * d * gamma_bar / gamma_C ** 2


def alpha_cap_from(gamma_I: float, gamma_C: float, gamma_bar: float, d: int) -> float:
    """Largest alpha allowed by alpha/gamma_I <= min(1/(16d), gamma_C^3/(1000 d gamma_bar^2))."""
    return gamma_I * min(1.0 / (16.0 * d), gamma_C ** 3 / (1000.0 * d * gamma_bar ** 2))


def iota_from(M_tilde: float, kappa_hat: float, alpha: float) -> float:
    return 10.0 * M_tilde * (3.0 + kappa_hat) / (1.0 - kappa_hat) * alpha


@dataclass(frozen=True)
class RunConstants:
    gamma_under_ref: float
    gamma_bar: float
    kappa: float
    kappa_prime: float
    kappa_tilde: float
    gamma_H: float
    gamma_I: float
    kappa_hat: float
    gamma_C: float
    C1: float
    C_tilde: float
    alpha: float
    alpha_cap: float
    M_tilde: float
    iota: float
    alpha_nu0: float
    d: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def derive_constants(gamma_under: float, gamma_bar: float, gamma_H: float, alpha_nu0: float, d: int,
                     kappa_prime_choice: float | None = None, C_tilde: float = 0.05,
                     alpha: float | None = None, C1: float = 1.1,
                     kappa_tilde_choice: float | None = None) -> RunConstants:
    """Compute every run constant and check the inequalities tying them together.

    With ``alpha=None`` the prescribed post-promotion rate is set to half the
    largest value allowed by both the alpha/gamma_I cap and iota <= 1.
    """
    if not gamma_under > 0:
        raise InvalidConstants(f"gamma_under > 0 violated: gamma_under = {gamma_under}")
    if not gamma_under <= gamma_bar:
        raise InvalidConstants(f"gamma_under <= gamma_bar violated: {gamma_under} > {gamma_bar}")
    if not gamma_H > 0:
        raise InvalidConstants(f"gamma_H > 0 violated: gamma_H = {gamma_H}")
    if not C1 >= 1:
        raise InvalidConstants(f"C1 >= 1 violated: C1 = {C1}")
    if not C_tilde > 0:
        raise InvalidConstants(f"C_tilde > 0 violated: C_tilde = {C_tilde}")
    alpha_nu0 = max(0.0, float(alpha_nu0))
    kappa = kappa_from(gamma_under, gamma_bar)
    if not 0 < kappa < 1:
        raise InvalidConstants(f"0 < kappa < 1 violated: kappa = {kappa}")
    kp = (1.0 + kappa) / 2.0 if kappa_prime_choice is None else float(kappa_prime_choice)
    if not kappa < kp < 1:
        raise InvalidConstants(f"kappa < kappa' < 1 violated: kappa = {kappa}, kappa' = {kp}")
    kt = (1.0 + kp) / 2.0 if kappa_tilde_choice is None else float(kappa_tilde_choice)
    if not kp < kt < 1:
        raise InvalidConstants(f"kappa' < kappa~ < 1 violated: kappa' = {kp}, kappa~ = {kt}")
    gI = gamma_I_from(gamma_under, gamma_H, kp, alpha_nu0, d)
    khat = 1.0 - gI / (4.0 * gamma_bar)
    gC = gamma_C_from(gI, gamma_H, d)
    Mt = M_tilde_from(d, gamma_bar, gC)
    cap = alpha_cap_from(gI, gC, gamma_bar, d)
    if alpha is None:
        iota_limit = 1.0 / iota_from(Mt, khat, 1.0)
        alpha = 0.5 * min(cap, iota_limit)
    if not alpha > 0:
        raise InvalidConstants(f"alpha > 0 violated: alpha = {alpha}")
    if alpha > cap:
        raise InvalidConstants(
            f"alpha/gamma_I cap violated: alpha/gamma_I = {alpha / gI:.6g} exceeds "
            f"min(1/(16d), gamma_C^3/(1000 d gamma_bar^2)) = {cap / gI:.6g}"
        )
    iota = iota_from(Mt, khat, alpha)
    if iota > 1:
        raise InvalidConstants(f"iota <= 1 violated: iota = {iota:.6g}")
    return RunConstants(
        gamma_under_ref=gamma_under, gamma_bar=gamma_bar, kappa=kappa, kappa_prime=kp,
        kappa_tilde=kt, gamma_H=gamma_H, gamma_I=gI, kappa_hat=khat, gamma_C=gC, C1=C1,
        C_tilde=C_tilde, alpha=alpha, alpha_cap=cap, M_tilde=Mt, iota=iota,
        alpha_nu0=alpha_nu0, d=d,
    )


# ------------------------------------------------------------------ ledger

def next_alpha_tilde(nu_j: int, nu_next: int, sup_alpha: float, kappa_prime: float) -> float:
    return kappa_prime * (nu_j / nu_next) * sup_alpha


def next_gamma_under(gamma_j: float, gamma_H: float, ell_j: int, nu_j: int, nu_next: int) -> float:
    return (gamma_j + gamma_H * ell_j / nu_j) * nu_j / (nu_next - 1)


def initial_gamma_under(gamma_prev: float, alpha_nu0: float, nu0: int, d: int) -> float:
    """gamma_{nu0 - 1}(A) - (d-1) alpha_{nu0}(A) - log(d)/nu0."""
    return gamma_prev - (d - 1) * alpha_nu0 - math.log(d) / nu0


@dataclass
class PromotionLedger:
    nu: list[int] = field(default_factory=list)
    alpha_tilde: list[float] = field(default_factory=list)
    gamma_under: list[float] = field(default_factory=list)
    deleted_fraction_at: dict[int, float] = field(default_factory=dict)
    promoted_at: int | None = None
    # inputs kept so the arithmetic can be replayed
    sup_alpha: list[float] = field(default_factory=list)
    bound: list[int] = field(default_factory=list)
    ell: list[int] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)

    def copy(self) -> "PromotionLedger":
        return copy.deepcopy(self)


def promotion_end(ledger: PromotionLedger, constants: RunConstants) -> int | None:
    """Smallest J with alpha~_{nu_J} <= C~ gamma_{nu_J}, or None."""
    for j, (a, g) in enumerate(zip(ledger.alpha_tilde, ledger.gamma_under)):
        if a <= constants.C_tilde * g:
            return j
    return None


def replay_ledger(ledger: PromotionLedger, constants: RunConstants, d: int,
                  gamma_prev0: float) -> tuple[list[float], list[float]]:
    """Recompute alpha~ and gamma_ from the recorded return stream."""
    nu, sa = ledger.nu, ledger.sup_alpha
    at = [sa[0]]
    gu = [initial_gamma_under(gamma_prev0, sa[0], nu[0], d)]
    for j in range(len(nu) - 1):
        at.append(next_alpha_tilde(nu[j], nu[j + 1], sa[j], constants.kappa_prime))
        gu.append(next_gamma_under(gu[j], constants.gamma_H, ledger.ell[j], nu[j], nu[j + 1]))
    return at, gu


# ------------------------------------------------------------ sample orbits

class LeafOrbits:
    """Orbits of a square's sample parameters over times 0..horizon."""

    def __init__(self, square: ParamSquare, family: PolynomialFamily, horizon: int, sample_grid: int = 0):
        self.square = square
        self.cs = square.samples(sample_grid)
        Z, _ = family.images(self.cs, 0, np.zeros_like(self.cs), horizon)
        self.Z = Z
        self.horizon = horizon
        self.d = family.d
        self.diam, self.dist = geometry_block(Z)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.logabs = np.log(np.abs(Z))
        incr = math.log(self.d) + (self.d - 1) * self.logabs[1:]
        self.L = np.vstack([np.zeros((1, self.cs.size)), np.cumsum(incr, axis=0)])

    def sup_alpha(self, t: int) -> float:
        return float(np.max(-self.logabs[t]) / t)

    def alphas(self, t: int) -> np.ndarray:
        return -self.logabs[t] / t

    def inf_gamma(self, t: int) -> float:
        return float(np.min(self.L[t]) / t)

    def bound_period(self, nu: int, beta: float) -> tuple[int, bool]:
        """Set-level bound period: the smallest sample bound period.

        Returns (p, truncated); truncated means the binding held for every
        sample up to the horizon.
        """
        j_max = self.horizon - nu
        if j_max <= 0:
            return 0, True
        j = np.arange(1, j_max + 1)[:, None]
        early = self.Z[1:j_max + 1]
        late = self.Z[nu + 1:nu + j_max + 1]
        with np.errstate(invalid="ignore"):
            holds = np.abs(late - early) <= np.exp(-beta * j) * np.abs(early)
        fails = ~holds
        any_fail = fails.any(axis=0)
        if not any_fail.all():
            return j_max, True
        return int(np.argmax(fails, axis=0).min()), False


# ------------------------------------------------------------------ start-up

@dataclass
class StartupResult:
    N: int
    status: str  # "LargeScale" or "EssentialReturn"
    diam: float
    dist: float
    alpha_N_c0: float
    upsilon_max: float
    comparability_K: float
    log_derivative_spread: float


def startup(root: ParamSquare, family: PolynomialFamily, nbhd: CriticalNeighborhoods,
            n_max: int, sample_grid: int = 0) -> StartupResult:
    """Iterate the unsplit root until an essential return into U or the large scale."""
    orb = LeafOrbits(root, family, n_max, sample_grid)
    S = nbhd.S
    diam, dist = orb.diam, orb.dist
    in_u = dist <= nbhd.delta
    big = diam >= S
    ess = in_u & essential(diam, dist)
    hit = np.flatnonzero((ess | big)[1:])
    if hit.size == 0:
        raise StartupFailed(f"no essential return or large scale within {n_max} iterates; raise n_max")
    N = int(hit[0]) + 1
    status = "EssentialReturn" if ess[N] else "LargeScale"
    root.last_geometry = (float(diam[N]), float(dist[N]), N)
    # the centre sample is index 4
    c0 = root.center
    z0 = orb.Z[N, 4]
    alpha_N = float(-math.log(abs(z0)) / N) if z0 != 0 else math.inf
    ups = 0.0
    for corner in root.samples(0)[:4]:
        try:
            ups = max(ups, distortion_sum(corner, c0, FamilyParams(family.d, c0, family.escape_radius), N))
        except (OrbitEscaped, OrbitHitsCritical):
            ups = math.inf
    ref = np.abs(orb.Z[1:N, 4])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(orb.Z[1:N]) / ref[:, None]
        K = float(np.nanmax(np.maximum(ratio, 1.0 / ratio))) if N > 1 else 1.0
        spread = float(np.nanmax(np.abs(orb.L[1:N] - orb.L[1:N, 4:5]))) if N > 1 else 0.0
    return StartupResult(N, status, float(diam[N]), float(dist[N]), alpha_N, ups, K, spread)


# --------------------------------------------------------- initial deletion

@dataclass
class DeletionReport:
    deleted_area: float
    total_area: float
    delta0: float
    predicted: float
    n_deleted: int
    n_leaves: int


def alpha_at(c: complex, d: int, N: int) -> float:
    o = critical_orbit(FamilyParams(d, c), N)
    if o.n < N:
        return -math.inf
    return float(o.alpha[N])


def initial_deletion(leaves: list[ParamSquare], N: int, c0: complex, d: int, C1: float) -> DeletionReport:
    """Delete whole leaves whose centre has alpha_N(c) / alpha_N(c0) > C1."""
    a0 = alpha_at(c0, d, N)
    deleted = 0.0
    total = 0.0
    n_del = 0
    for leaf in leaves:
        if leaf.status is Status.Anomalous:
            continue
        total += leaf.area
        if leaf.status is not Status.Active:
            continue
        if alpha_at(leaf.center, d, N) / a0 > C1:
            leaf.set_status(Status.DeletedAlpha)
            leaf.flags.append("initial-deletion")
            deleted += leaf.area
            n_del += 1
    predicted = math.exp(-2.0 * (C1 - 1.0) * a0 * N)
    return DeletionReport(deleted, total, deleted / total if total else 0.0, predicted, n_del, len(leaves))


# ---------------------------------------------------------------- promotion

@dataclass
class TrackState:
    phase: str
    nu: int
    p: int
    sup_alpha: float
    last_essential_r: float
    m0: int | None = None
    scan_end: int | None = None
    pending_q: tuple[int, float] | None = None
    # (s, R) signature of essential returns inside the scan window
    scan_s: int = 0
    scan_R: float = 0.0


@dataclass
class LeafOutcome:
    square: ParamSquare
    ledger: PromotionLedger
    state: TrackState
    escape_time: int | None = None
    E: int | None = None


@dataclass
class FollowRecord:
    """Everything a leaf run produced: final leaves plus the per-return checks."""

    outcomes: list[LeafOutcome] = field(default_factory=list)
    promotion_deleted_area: float = 0.0
    scan_deleted_area: float = 0.0
    deletion_checks: list[dict] = field(default_factory=list)
    inessential_checks: list[dict] = field(default_factory=list)
    q_checks: list[dict] = field(default_factory=list)
    p_checks: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    upsilon_max: float = 0.0


@dataclass
class FollowConfig:
    family: PolynomialFamily
    nbhd: CriticalNeighborhoods
    constants: RunConstants
    horizon: int
    sample_grid: int = 0
    depth_limit: int = DEFAULT_DEPTH_LIMIT
    # the window [m0, (1+iota) m0] is often shorter than one bound period;
    # a positive value keeps scanning at least this many iterates
    scan_min_length: int = 0


def _start_scan(state: TrackState, t: int, cfg: FollowConfig) -> None:
    state.phase = "scan"
    state.m0 = t
    end = max(int(math.floor((1.0 + cfg.constants.iota) * t)), t + cfg.scan_min_length)
    state.scan_end = min(cfg.horizon, end)


def start_leaf(leaf: ParamSquare, N: int, cfg: FollowConfig) -> tuple[TrackState, PromotionLedger] | None:
    """Ledger entry j = 0 for a partition element at the start-up time."""
    orb = LeafOrbits(leaf, cfg.family, cfg.horizon, cfg.sample_grid)
    sa = orb.sup_alpha(N)
    p, truncated = orb.bound_period(N, cfg.nbhd.beta)
    ledger = PromotionLedger()
    ledger.nu.append(N)
    ledger.sup_alpha.append(sa)
    ledger.alpha_tilde.append(sa)
    ledger.gamma_under.append(initial_gamma_under(orb.inf_gamma(N - 1) if N > 1 else 0.0, sa, N, cfg.family.d))
    ledger.bound.append(p)
    ledger.kinds.append(ReturnKind.EssentialSet.value)
    ledger.deleted_fraction_at[N] = 0.0
    state = TrackState("promotion", N, p, sa, sa * N, pending_q=(N, sa * N))
    if truncated:
        return None
    if promotion_end(ledger, cfg.constants) == 0:
        ledger.promoted_at = N
        _start_scan(state, N, cfg)
    return state, ledger


def promotion_step(orb: LeafOrbits, state: TrackState, ledger: PromotionLedger, cfg: FollowConfig,
                   rec: FollowRecord):
    """Advance one leaf to its next free return into U, or to escape.

    Returns ("escaped", t), ("inessential", None) after the ledger was
    advanced in place, or ("essential", (t, alpha_tilde, gamma_next, ell, p))
    for the caller to split and delete.  Raises LedgerStall when the horizon
    (or the scan window) ends first.
    """
    nb = cfg.nbhd
    S = nb.S
    end = cfg.horizon if state.phase == "promotion" else state.scan_end
    t = state.nu + state.p + 1
    while True:
        if t > end:
            raise LedgerStall(f"no return or escape in ({t - 1}, {end}]")
        seg_d = orb.diam[t:end + 1]
        seg_r = orb.dist[t:end + 1]
        cond = (seg_d >= S) | (seg_r < nb.deltaPrime)
        idx = np.flatnonzero(cond)
        if idx.size == 0:
            raise LedgerStall(f"no return or escape in [{t}, {end}]")
        tau = t + int(idx[0])
        if orb.diam[tau] >= S:
            return "escaped", tau
        p, truncated = orb.bound_period(tau, nb.beta)
        rec.p_checks.append({"n": tau, "p": p, "truncated": truncated})
        if truncated:
            raise LedgerStall(f"bound period after {tau} runs past the horizon")
        if orb.dist[tau] > nb.delta:
            rec.events.append({"t": tau, "kind": ReturnKind.PseudoReturn.value, "p": p})
            t = tau + p + 1
            continue
        break
    kp = cfg.constants.kappa_prime
    at = next_alpha_tilde(state.nu, tau, state.sup_alpha, kp)
    ell = tau - (state.nu + state.p + 1)
    gn = next_gamma_under(ledger.gamma_under[-1], cfg.constants.gamma_H, ell, state.nu, tau)
    if essential(orb.diam[tau], orb.dist[tau]):
        return "essential", (tau, at, gn, ell, p)
    # inessential: no deletion, by construction; the witness count is diagnostic
    would = int(np.sum(orb.alphas(tau) > at))
    rec.inessential_checks.append({"t": tau, "deleted": 0, "would_delete_samples": would})
    ledger.nu.append(tau)
    ledger.sup_alpha.append(orb.sup_alpha(tau))
    ledger.alpha_tilde.append(at)
    ledger.gamma_under.append(gn)
    ledger.bound.append(p)
    ledger.ell.append(ell)
    ledger.kinds.append(ReturnKind.InessentialSet.value)
    ledger.deleted_fraction_at[tau] = 0.0
    state.nu, state.p, state.sup_alpha = tau, p, orb.sup_alpha(tau)
    if state.phase == "promotion" and promotion_end(ledger, cfg.constants) is not None:
        ledger.promoted_at = tau
        _start_scan(state, tau, cfg)
    return "inessential", None


def _close_q(state: TrackState, n: int, cfg: FollowConfig, rec: FollowRecord, how: str) -> None:
    if state.pending_q is None:
        return
    nu, r = state.pending_q
    q = n - nu
    bound = cfg.constants.M_tilde * max(r, 1.0)
    rec.q_checks.append({"nu": nu, "n": n, "q": q, "r": r, "bound": bound, "ok": q <= bound,
                         "phase": state.phase, "end": how})
    state.pending_q = None


def follow_leaf(leaf: ParamSquare, state: TrackState, ledger: PromotionLedger, cfg: FollowConfig) -> FollowRecord:
    """Run promotion then the escape scan for one leaf and all its descendants."""
    rec = FollowRecord()
    work = [(leaf, state, ledger)]
    consts = cfg.constants
    while work:
        sq, st, lg = work.pop(0)
        sq.ledger = lg
        orb = LeafOrbits(sq, cfg.family, cfg.horizon, cfg.sample_grid)
        while True:
            try:
                what, info = promotion_step(orb, st, lg, cfg, rec)
            except LedgerStall:
                what, info = "stall", None
            if what == "inessential":
                continue
            if what == "escaped":
                _close_q(st, info, cfg, rec, "escape")
                sq.set_status(Status.Escaped)
                out = LeafOutcome(sq, lg, st, escape_time=info)
                if st.phase == "scan":
                    out.E = info - st.m0
                rec.outcomes.append(out)
                break
            if what == "stall":
                sq.set_status(Status.Undetermined)
                sq.flags.append("stall" if st.phase == "promotion" else "scan-window-ended")
                rec.outcomes.append(LeafOutcome(sq, lg, st))
                break
            tau, at, gn, ell, p = info
            _close_q(st, tau, cfg, rec, "essential")
            children = refine_at_essential_return(sq, tau, cfg.nbhd, cfg.nbhd.S, cfg.family,
                                                  cfg.sample_grid, cfg.depth_limit)
            deleted = 0.0
            survivors = []
            for ch in children:
                if ch.status is Status.Anomalous:
                    rec.outcomes.append(LeafOutcome(ch, lg.copy(), st))
                    continue
                ch_alpha = _sample_alphas(ch, tau, cfg)
                if np.max(ch_alpha) > at:
                    ch.set_status(Status.DeletedAlpha)
                    ch.flags.append("alpha-deletion")
                    deleted += ch.area
                    rec.outcomes.append(LeafOutcome(ch, lg.copy(), st))
                else:
                    survivors.append((ch, float(np.max(ch_alpha))))
            frac = deleted / sq.area
            if st.phase == "promotion":
                rec.promotion_deleted_area += deleted
            else:
                rec.scan_deleted_area += deleted
                st.scan_s += 1
                st.scan_R += st.sup_alpha * tau
            r_prev = st.last_essential_r
            bound = 10.0 * math.exp(-1.5 * (consts.kappa_prime - consts.kappa) * r_prev)
            rec.deletion_checks.append({
                "t": tau, "r": r_prev, "deleted_fraction": frac,
                "kept_lower_bound": 1.0 - math.exp(-1.5 * (consts.kappa_prime - consts.kappa) * r_prev),
                "bound": bound, "checked": r_prev >= cfg.nbhd.Delta,
                "ok": (r_prev < cfg.nbhd.Delta) or frac <= bound,
            })
            for ch, sa in survivors:
                clg = lg.copy()
                clg.nu.append(tau)
                clg.sup_alpha.append(sa)
                clg.alpha_tilde.append(at)
                clg.gamma_under.append(gn)
                clg.ell.append(ell)
                clg.kinds.append(ReturnKind.EssentialSet.value)
                clg.deleted_fraction_at[tau] = frac
                child_orb = LeafOrbits(ch, cfg.family, cfg.horizon, cfg.sample_grid)
                cp, truncated = child_orb.bound_period(tau, cfg.nbhd.beta)
                clg.bound.append(cp)
                cst = copy.copy(st)
                cst.nu, cst.p, cst.sup_alpha = tau, cp, sa
                cst.last_essential_r = sa * tau
                cst.pending_q = (tau, sa * tau)
                if truncated:
                    ch.set_status(Status.Undetermined)
                    ch.flags.append("bound-truncated")
                    rec.outcomes.append(LeafOutcome(ch, clg, cst))
                    continue
                if cst.phase == "promotion" and promotion_end(clg, consts) is not None:
                    clg.promoted_at = tau
                    _start_scan(cst, tau, cfg)
                work.append((ch, cst, clg))
            break
    return rec


def _sample_alphas(sq: ParamSquare, t: int, cfg: FollowConfig) -> np.ndarray:
    cs = sq.samples(cfg.sample_grid)
    if sq._z is not None and sq._ok_until == t and sq._grid == cfg.sample_grid:
        z = sq._z
    else:
        Z, _ = cfg.family.images(cs, 0, np.zeros_like(cs), t)
        z = Z[t]
    with np.errstate(divide="ignore"):
        return -np.log(np.abs(z)) / t


# --------------------------------------------------------------- escape scan

@dataclass
class EscapeStats:
    promoted_area: float
    escaped_area: float
    fraction_escaped: float
    E_values: list[tuple[int, float]]
    tail: list[dict]
    tail_violations: int
    q_checks: list[dict]
    q_violations: int
    signatures: list[dict]


def escape_scan(outcomes: list[LeafOutcome], q_checks: list[dict], constants: RunConstants) -> EscapeStats:
    """Summarise escape times of leaves that entered the post-promotion window."""
    scanned = [o for o in outcomes if o.state.phase == "scan" and o.square.status is not Status.Anomalous]
    promoted_area = math.fsum(o.square.area for o in scanned)
    esc = [o for o in scanned if o.E is not None]
    escaped_area = math.fsum(o.square.area for o in esc)
    E_values = sorted((o.E, o.square.area) for o in esc)
    tail = []
    violations = 0
    if promoted_area > 0:
        ts = sorted({e for e, _ in E_values})
        for t in ts:
            frac = sum(a for e, a in E_values if e >= t) / promoted_area
            bound = 10.0 * math.exp(-(1.0 - constants.kappa_hat) * t / constants.M_tilde)
            ok = frac <= bound
            violations += not ok
            tail.append({"t": t, "fraction_at_least_t": frac, "bound": bound, "ok": ok})
    sigs: dict[tuple[int, int], float] = {}
    for o in scanned:
        key = (o.state.scan_s, int(round(o.state.scan_R)))
        sigs[key] = sigs.get(key, 0.0) + o.square.area
    signatures = []
    for (s, R), area in sorted(sigs.items()):
        count = math.comb(R + s - 1, s - 1) if s >= 1 else 1
        signatures.append({"s": s, "R": R, "area": area, "binomial": count,
                           "stirling_bound": math.exp(R * (1.0 - constants.kappa_hat) / 3.0)})
    qv = sum(not q["ok"] for q in q_checks)
    return EscapeStats(promoted_area, escaped_area,
                       escaped_area / promoted_area if promoted_area else 0.0,
                       E_values, tail, violations, q_checks, qv, signatures)
