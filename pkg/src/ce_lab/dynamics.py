"""Critical orbits, derivative cocycles and exponents for f_c(z) = z^d + c."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DerivativeVanished,
    NonFiniteOrbit,
    OrbitEscaped,
    OrbitHitsCritical,
    WindowBeyondOrbit,
)


def default_escape_radius(c: complex, d: int) -> float:
    return max(abs(c), 2.0 ** (1.0 / (d - 1)))


@dataclass(frozen=True)
class FamilyParams:
    d: int
    c: complex
    escape_radius: float | None = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"degree must be an integer >= 2, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "c", complex(self.c))
        floor = default_escape_radius(self.c, self.d)
        if self.escape_radius is None:
            object.__setattr__(self, "escape_radius", floor)
        elif not self.escape_radius >= floor:
            raise ValueError(
                f"escape_radius {self.escape_radius} is below max(|c|, 2^(1/(d-1))) = {floor}"
            )


def step(z: complex, params: FamilyParams) -> complex:
    """One application of f_c, using repeated squaring for z^d."""
    base = complex(z)
    result = None
    e = params.d
    while e:
        if e & 1:
            result = base if result is None else result * base
        e >>= 1
        if e:
            base = base * base
    return result + params.c


@dataclass
class OrbitRecord:
    """Critical orbit xi_0..xi_n with its log-derivative and exponents.

    ``log_deriv[k]`` is L_k = log|Df^k(c)| where Df^k(c) is the product of
    f'(xi_j) over j = 1..k, so L_0 = 0.  ``alpha[0]`` and ``gamma[0]`` are NaN.
    """

    d: int
    c: complex
    escape_radius: float
    points: np.ndarray
    log_deriv: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    escape_index: int | None = None
    degenerate: bool = field(default=False)

    @property
    def n(self) -> int:
        """Largest available index."""
        return len(self.points) - 1

    def __len__(self) -> int:
        return len(self.points)


def _cocycle(points: np.ndarray, d: int):
    k = np.arange(len(points), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logabs = np.log(np.abs(points))
        incr = math.log(d) + (d - 1) * logabs[1:]
        log_deriv = np.concatenate(([0.0], np.cumsum(incr)))
        alpha = -logabs / k
        gamma = log_deriv / k
    alpha[0] = np.nan
    gamma[0] = np.nan
    return log_deriv, alpha, gamma


def orbit_from_points(points: np.ndarray, d: int, c: complex, escape_radius: float,
                      escape_index: int | None = None) -> OrbitRecord:
    points = np.asarray(points, dtype=np.complex128)
    log_deriv, alpha, gamma = _cocycle(points, d)
    degenerate = bool(np.any(points[1:] == 0))
    return OrbitRecord(d, complex(c), float(escape_radius), points, log_deriv, alpha,
                       gamma, escape_index, degenerate)


def critical_orbit(params: FamilyParams, n_max: int) -> OrbitRecord:
    """Iterate 0 under f_c until n_max or the first escape (inclusive)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    pts, esc, bad = _kernels.orbit_points(params.c, params.d, params.escape_radius, int(n_max))
    if bad:
        raise NonFiniteOrbit(
            f"orbit of c={params.c} overflowed at k={len(pts) - 1} before exceeding "
            f"escape radius {params.escape_radius}"
        )
    return orbit_from_points(pts, params.d, params.c, params.escape_radius,
                             None if esc < 0 else int(esc))


def chain_identity_residual(orbit: OrbitRecord, n: int) -> float:
    """|gamma_n n - gamma_{n-1}(n-1) - log d + alpha_n n (d-1)|."""
    if not 1 <= n <= orbit.n:
        raise WindowBeyondOrbit(f"n={n} outside 1..{orbit.n}")
    prev = 0.0 if n == 1 else orbit.gamma[n - 1] * (n - 1)
    d = orbit.d
    return abs(orbit.gamma[n] * n - prev - math.log(d) + orbit.alpha[n] * n * (d - 1))


def ce_window_test(orbit: OrbitRecord, gamma: float, n_lo: int, n_hi: int) -> bool:
    """True iff L_k >= gamma k for every k in [n_lo, n_hi]."""
    if n_lo < 1:
        raise ValueError("n_lo must be >= 1")
    if n_hi > orbit.n:
        raise WindowBeyondOrbit(f"window end {n_hi} beyond orbit length {orbit.n}")
    if n_hi < n_lo:
        return True
    k = np.arange(n_lo, n_hi + 1)
    return bool(np.all(orbit.log_deriv[n_lo:n_hi + 1] >= gamma * k))


def transversality_ratio(params: FamilyParams, n_max: int, tol: float = 1e-13):
    """Estimate L = lim xi'_n(c) / Df^{n-1}(c).

    Uses rho_1 = 1 and rho_{n+1} = rho_n + 1/Df^n(c), with 1/Df^n kept as a
    log-magnitude and a phase so neither factor overflows.
    Returns (L_estimate, n_used, converged).
    """
    orbit = critical_orbit(params, n_max)
    pts = orbit.points
    d = params.d
    rho = complex(1.0)
    log_mag = 0.0
    phase = 0.0
    quiet = 0
    converged = False
    n_used = 1
    for n in range(1, n_max):
        if n > orbit.n:
            # escaped: later terms are smaller than any double can resolve
            converged = True
            break
        z = pts[n]
        if z == 0:
            raise DerivativeVanished(f"xi_{n}(c) = 0 for c={params.c}")
        log_mag += math.log(d) + (d - 1) * math.log(abs(z))
        phase = math.fmod(phase + (d - 1) * cmath.phase(z), 2 * math.pi)
        term = cmath.exp(complex(-log_mag, -phase))
        new = rho + term
        quiet = quiet + 1 if abs(new - rho) < tol * abs(rho) else 0
        rho = new
        n_used = n + 1
        if quiet >= 10:
            converged = True
            break
    return rho, n_used, converged


def distortion_sum(a: complex, b: complex, params: FamilyParams, n: int) -> float:
    """Sum over j=1..n-1 of |xi_j(a) - xi_j(b)| / |xi_j(b)|.

    Both orbits are followed out to ``params.escape_radius`` (or further if
    either parameter needs it), so pass a generous radius when the
    parameters sit on the boundary of M_d.
    """
    if n <= 1:
        return 0.0
    d = params.d
    ob = critical_orbit(FamilyParams(d, b, max(params.escape_radius, default_escape_radius(b, d))), n - 1)
    oa = critical_orbit(FamilyParams(d, a, max(params.escape_radius, default_escape_radius(a, d))), n - 1)
    if oa.n < n - 1 or ob.n < n - 1:
        raise OrbitEscaped(f"an orbit escaped before time {n - 1}")
    xb = ob.points[1:n]
    if np.any(xb == 0):
        raise OrbitHitsCritical(f"xi_j(b) = 0 for some j < {n}")
    xa = oa.points[1:n]
    return float(np.sum(np.abs(xa - xb) / np.abs(xb)))


@dataclass(frozen=True)
class LyapunovSummary:
    gamma_lower: float
    gamma_upper: float
    gamma_bar_trivial: float


def gamma_bar_trivial(d: int, n_radii: int = 201, n_angles: int = 64) -> float:
    """sup over |z| <= 2 of log|d z^(d-1)|, evaluated on a polar grid."""
    r = np.linspace(0.0, 2.0, n_radii)
    theta = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    z = r[:, None] * np.exp(1j * theta[None, :])
    with np.errstate(divide="ignore"):
        vals = np.log(np.abs(d * z ** (d - 1)))
    return float(vals.max())


def lyapunov_summary(orbit: OrbitRecord, tail_fraction: float = 0.5) -> LyapunovSummary:
    """Min/max of gamma_k over the last tail_fraction of the orbit."""
    if orbit.n < 10:
        raise ValueError("orbit must have length >= 10")
    start = max(1, int(math.ceil((1.0 - tail_fraction) * orbit.n)))
    g = orbit.gamma[start:]
    return LyapunovSummary(float(np.min(g)), float(np.max(g)), gamma_bar_trivial(orbit.d))
