"""Escape density in shrinking squares, recurrence envelopes and outside expansion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.stats import binomtest

from . import _kernels
from .dynamics import OrbitRecord, critical_orbit, FamilyParams
from .errors import EmptyPool, PrecisionExhausted
from .returns import CriticalNeighborhoods

# below this side length doubles cannot separate the samples of a square
EXTENDED_BELOW = 1e-13
# mpmath is used down to here; deeper scales are refused
EXTENDED_FLOOR = 1e-30
CYCLE_TOL = 1e-13


@dataclass(frozen=True)
class Membership:
    status: str  # "Escaped" or "Undetermined"
    n: int | None = None


def membership_sample(c: complex, d: int, n_max: int) -> Membership:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    code, _ = _kernels.membership_code(complex(c), int(d), int(n_max), CYCLE_TOL)
    if code > 0:
        return Membership("Escaped", int(code))
    return Membership("Undetermined")


@dataclass(frozen=True)
class Sampler:
    """``grid``: cell-centred n x n lattice; ``stratified``: one Philox point per cell."""

    kind: str = "grid"
    n: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("grid", "stratified"):
            raise ValueError(f"unknown sampler {self.kind!r}")
        if self.n < 1:
            raise ValueError("sampler size must be >= 1")

    def offsets(self, k: int = 0) -> np.ndarray:
        """Offsets in the unit square [-1/2, 1/2]^2, row-major from the top row."""
        n = self.n
        j, i = np.meshgrid(np.arange(n), np.arange(n))
        if self.kind == "grid":
            ux = np.full((n, n), 0.5)
            uy = np.full((n, n), 0.5)
        else:
            # one counter-based stream per (seed, scale index)
            rng = np.random.Generator(np.random.Philox(key=self.seed, counter=[k, 0, 0, 0]))
            u = rng.random((2, n, n))
            ux, uy = u[0], u[1]
        x = (j + ux) / n - 0.5
        y = 0.5 - (i + uy) / n
        return (x + 1j * y).ravel()


@dataclass
class DensityRow:
    k: int
    epsilon: float
    samples: int
    escaped: int
    undetermined: int
    in_budget_nonescaped: int
    density: float
    wilson_halfwidth: float
    wilson_low: float
    wilson_high: float
    n_max: int
    extended: bool

    CSV_FIELDS = ("k", "epsilon", "samples", "escaped", "undetermined", "in_budget_nonescaped",
                  "density", "wilson_halfwidth", "wilson_low", "wilson_high", "n_max", "extended")

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


@dataclass
class DensityReport:
    c0: complex
    d: int
    rows: list[DensityRow] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [",".join(DensityRow.CSV_FIELDS)]
        for r in self.rows:
            lines.append(",".join(_fmt(v) for v in r.as_row()))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def wilson(escaped: int, samples: int) -> tuple[float, float]:
    ci = binomtest(escaped, samples).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def _mp_code(c, d: int, n_max: int, radius2) -> int:
    z = mpmath.mpc(0)
    for k in range(1, n_max + 1):
        z = z ** d + c
        if z.real * z.real + z.imag * z.imag > radius2:
            return k
    return 0


def _codes_extended(c0: complex, d: int, epsilon: float, offs: np.ndarray, n_max: int) -> np.ndarray:
    dps = int(math.ceil(-math.log10(epsilon))) + 17
    out = np.zeros(offs.size, dtype=np.int64)
    with mpmath.workdps(dps):
        base = mpmath.mpc(c0.real, c0.imag)
        eps = mpmath.mpf(epsilon)
        for i, w in enumerate(offs):
            c = base + eps * mpmath.mpc(w.real, w.imag)
            r = max(abs(c), mpmath.mpf(2) ** (mpmath.mpf(1) / (d - 1)))
            out[i] = _mp_code(c, d, n_max, r * r)
    return out


def density_at_scale(c0: complex, d: int, epsilon: float, sampler: Sampler, n_max: int,
                     k: int = 0) -> DensityRow:
    """Fraction of sampled parameters in Q(c0, epsilon) whose critical orbit escapes."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    c0 = complex(c0)
    offs = sampler.offsets(k)
    extended = epsilon < EXTENDED_BELOW
    if extended:
        if epsilon < EXTENDED_FLOOR:
            raise PrecisionExhausted(f"epsilon {epsilon:g} below the extended-precision floor {EXTENDED_FLOOR:g}")
        codes = _codes_extended(c0, d, epsilon, offs, n_max)
    else:
        codes, verified = _kernels.membership_codes(c0 + epsilon * offs, int(d), int(n_max), CYCLE_TOL)
        if not verified.all():
            raise AssertionError("an escaped sample failed re-verification")
    m = int(codes.size)
    esc = int(np.count_nonzero(codes > 0))
    und = int(np.count_nonzero(codes == 0))
    cyc = m - esc - und
    lo, hi = wilson(esc, m)
    p = esc / m
    return DensityRow(k, float(epsilon), m, esc, und, cyc, p, max(p - lo, hi - p), lo, hi,
                      int(n_max), extended)


def default_schedule(k: int) -> int:
    return 1000 * 2 ** k


def scale_sweep(c0: complex, d: int, epsilon0: float, s: float, k_max: int, sampler: Sampler,
                n_max_schedule=default_schedule, k_min: int = 0) -> DensityReport:
    """Rows for epsilon_k = epsilon0 s^-k, k = k_min..k_max."""
    if not s > 1:
        raise ValueError("shrink factor s must exceed 1")
    rep = DensityReport(complex(c0), d)
    for k in range(k_min, k_max + 1):
        eps = epsilon0 * s ** (-k)
        rep.rows.append(density_at_scale(c0, d, eps, sampler, n_max_schedule(k), k))
    return rep


def density_trend_ok(report: DensityReport, final_min: float | None = None) -> tuple[bool, list[str]]:
    """Non-decreasing density within twice the Wilson half-width."""
    msgs = []
    ok = True
    for a, b in zip(report.rows, report.rows[1:]):
        slack = 2 * max(a.wilson_halfwidth, b.wilson_halfwidth)
        if b.density < a.density - slack:
            ok = False
            msgs.append(f"k={b.k}: density {b.density:.4f} < {a.density:.4f} - {slack:.4f}")
    if final_min is not None and report.rows and report.rows[-1].density < final_min:
        ok = False
        msgs.append(f"final density {report.rows[-1].density:.4f} < {final_min}")
    return ok, msgs


# ------------------------------------------------------------------ envelopes

def _last_hull_slope(x: np.ndarray, y: np.ndarray, upper: bool) -> float:
    """Slope of the final edge of the lower (or upper) convex hull of (x, y)."""
    sign = -1.0 if upper else 1.0
    hull: list[int] = []
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if sign * cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    a, b = hull[-2], hull[-1]
    return float((y[b] - y[a]) / (x[b] - x[a]))


def initial_recurrence_fit(orbit: OrbitRecord) -> tuple[float, float]:
    """(K, alpha) with K <= 1 and |xi_n| >= K e^(-alpha n) for every n >= 1.

    alpha is the slope of the last edge of the upper hull of (n, -log|xi_n|),
    clipped at 0, so it reflects the late recurrence rate; K then absorbs the
    early deep returns.
    """
    if orbit.n < 50:
        raise ValueError("orbit must have length >= 50")
    if orbit.escape_index is not None:
        raise ValueError("orbit escapes; no recurrence envelope")
    n = np.arange(1, orbit.n + 1, dtype=float)
    y = -np.log(np.abs(orbit.points[1:]))
    if not np.all(np.isfinite(y)):
        raise ValueError("orbit hits the critical point")
    alpha = max(0.0, _last_hull_slope(n, y, upper=True))
    log_k = min(0.0, float(np.min(alpha * n - y)))
    return math.exp(log_k), alpha


def expansion_fit(ns: np.ndarray, m: np.ndarray) -> tuple[float, float]:
    """(C_U, gamma_H) from the lower hull of the points (n, m(n)).

    gamma_H is the slope of the last hull edge and log C_U the largest
    intercept keeping the line below every point.  A single point (n, m)
    gives the line through the origin, (1, m / n).
    """
    ns = np.asarray(ns, dtype=float)
    m = np.asarray(m, dtype=float)
    if ns.size == 1:
        return 1.0, float(m[0] / ns[0])
    g = _last_hull_slope(ns, m, upper=False)
    log_c = float(np.min(m - g * ns))
    return math.exp(log_c), float(g)


def segment_minima(orbit: OrbitRecord, nbhd: CriticalNeighborhoods, n_seg: int):
    """m(n) = min log|Df^n(xi_i)| over orbit segments xi_i..xi_{i+n-1} avoiding U."""
    pts = orbit.points
    L = orbit.log_deriv
    inside = (np.abs(pts) <= nbhd.delta).astype(np.int64)
    inside[0] = 1  # the critical point itself
    cum = np.concatenate(([0], np.cumsum(inside)))
    ns, ms = [], []
    last = orbit.n
    for n in range(1, n_seg + 1):
        i = np.arange(1, last - n + 2)
        if i.size == 0:
            break
        hits = cum[i + n] - cum[i]
        ok = hits == 0
        if not ok.any():
            continue
        vals = L[i + n - 1] - L[i - 1]
        ns.append(n)
        ms.append(float(vals[ok].min()))
    return np.array(ns, dtype=float), np.array(ms)


def outside_expansion_estimate(c: complex, nbhd: CriticalNeighborhoods, n_seg: int = 100,
                               d: int = 2, orbit_len: int = 5000) -> tuple[float, float]:
    """Fit log|Df^n| >= log C_U + gamma_H n over U-avoiding segments of the critical orbit."""
    orbit = critical_orbit(FamilyParams(d, c), orbit_len)
    ns, ms = segment_minima(orbit, nbhd, n_seg)
    if ns.size == 0:
        raise EmptyPool(f"no orbit segment of c={c} avoids U")
    return expansion_fit(ns, ms)


# ------------------------------------------------------------------- render

def render_pgm(c0: complex, epsilon: float, d: int, pixels: int, n_max: int) -> bytes:
    """P5 image of Q(c0, epsilon); grey level min(255, escape time), 0 if none."""
    offs = Sampler("grid", pixels).offsets()
    codes, _ = _kernels.membership_codes(complex(c0) + epsilon * offs, int(d), int(n_max), CYCLE_TOL)
    grey = np.clip(np.where(codes > 0, codes, 0), 0, 255).astype(np.uint8)
    return f"P5\n{pixels} {pixels}\n255\n".encode() + grey.tobytes()
