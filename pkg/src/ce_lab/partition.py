"""Quadtree of parameter squares and the partition-element predicate."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from . import _kernels
from .dynamics import default_escape_radius
from .errors import DepthLimit, SampleEscaped
from .returns import CriticalNeighborhoods, ReturnKind

DEFAULT_DEPTH_LIMIT = 48
# squares narrower than this many ulps of |c| are not resolved by doubles
RESOLUTION_ULPS = 64


class Status(str, enum.Enum):
    Active = "Active"
    DeletedAlpha = "DeletedAlpha"
    Escaped = "Escaped"
    Undetermined = "Undetermined"
    Anomalous = "Anomalous"


class PolynomialFamily:
    """Sample orbits of z^d + c for arrays of parameters.

    ``escape_radius`` is shared by all samples; it must be at least the
    default certificate radius of every sample it is used with.
    """

    def __init__(self, d: int, escape_radius: float):
        self.d = int(d)
        self.escape_radius = float(escape_radius)

    @classmethod
    def around(cls, c0: complex, side: float, d: int) -> "PolynomialFamily":
        # twice the certificate radius: images are only called escaped once
        # they are far outside the filled Julia set, not when they first cross it
        reach = abs(c0) + side
        return cls(d, 2.0 * default_escape_radius(reach, d))

    def images(self, cs: np.ndarray, t0: int, z0: np.ndarray, steps: int):
        """Points at times t0..t0+steps, shape (steps+1, m), and escape offsets."""
        return _kernels.advance_samples(cs, z0, self.d, self.escape_radius, int(steps))


def sample_offsets(sample_grid: int = 0) -> np.ndarray:
    """Unit-square offsets: corners NW, NE, SW, SE, then the centre, then a lattice."""
    pts = [-0.5 + 0.5j, 0.5 + 0.5j, -0.5 - 0.5j, 0.5 - 0.5j, 0j]
    if sample_grid > 0:
        u = (np.arange(sample_grid) + 0.5) / sample_grid - 0.5
        for y in u[::-1]:
            for x in u:
                w = complex(x, y)
                if w != 0:
                    pts.append(w)
    return np.array(pts, dtype=np.complex128)


@dataclass(eq=False)
class ParamSquare:
    center: complex
    side: float
    depth: int = 0
    status: Status = Status.Active
    ledger: Any = None
    last_geometry: tuple[float, float, int] | None = None
    children: list["ParamSquare"] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    # cache: samples verified as a partition element for all times <= _ok_until
    _ok_until: int = field(default=0, repr=False)
    _z: np.ndarray | None = field(default=None, repr=False)
    _grid: int = field(default=-1, repr=False)

    @property
    def area(self) -> float:
        return self.side * self.side

    def samples(self, sample_grid: int = 0) -> np.ndarray:
        return self.center + self.side * sample_offsets(sample_grid)

    def split(self) -> list["ParamSquare"]:
        """Four equal children in NW, NE, SW, SE order."""
        if self.children:
            return self.children
        q = self.side / 4
        h = self.side / 2
        self.children = [
            ParamSquare(self.center + complex(-q, q), h, self.depth + 1),
            ParamSquare(self.center + complex(q, q), h, self.depth + 1),
            ParamSquare(self.center + complex(-q, -q), h, self.depth + 1),
            ParamSquare(self.center + complex(q, -q), h, self.depth + 1),
        ]
        return self.children

    def leaves(self) -> Iterator["ParamSquare"]:
        if not self.children:
            yield self
            return
        for ch in self.children:
            yield from ch.leaves()

    def set_status(self, status: Status) -> None:
        if self.status is not Status.Active and status is not self.status:
            raise ValueError(f"status is terminal: {self.status.value} -> {status.value}")
        self.status = status

    def to_json(self) -> str:
        k = None if self.last_geometry is None else self.last_geometry[2]
        return json.dumps({
            "center_re": self.center.real,
            "center_im": self.center.imag,
            "side": self.side,
            "depth": self.depth,
            "status": self.status.value,
            "last_k": k,
        })


@dataclass
class PartitionTree:
    root: ParamSquare

    @classmethod
    def over(cls, c0: complex, epsilon: float) -> "PartitionTree":
        return cls(ParamSquare(complex(c0), float(epsilon)))

    def leaves(self) -> list[ParamSquare]:
        return list(self.root.leaves())

    def nodes(self) -> Iterator[ParamSquare]:
        """All nodes, parent before children, children in NW, NE, SW, SE order."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def area_by_status(self) -> dict[str, float]:
        out = {s.value: 0.0 for s in Status}
        for leaf in self.leaves():
            out[leaf.status.value] += leaf.area
        return out

    def dump(self) -> str:
        return "".join(node.to_json() + "\n" for node in self.nodes())


def geometry_block(Z: np.ndarray):
    """diam and conservative dist for each row of sample points.

    Rows containing an escaped (NaN) sample get diam = inf and dist = 0.
    """
    diff = np.abs(Z[:, :, None] - Z[:, None, :])
    with np.errstate(invalid="ignore"):
        diam = diff.max(axis=(1, 2))
        dist = np.maximum(0.0, np.abs(Z).min(axis=1) - diam / 2)
    bad = ~np.isfinite(Z).all(axis=1)
    diam[bad] = np.inf
    dist[bad] = 0.0
    return diam, dist


def log_scale_bound(dist):
    """dist / (log dist)^2, with value 0 at dist = 0."""
    dist = np.asarray(dist, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = dist / np.log(dist) ** 2
    return np.where(dist > 0, out, 0.0)


def partition_bound_ok(diam, dist, nbhd: CriticalNeighborhoods, S: float):
    """The partition-element inequality at one time (vectorised)."""
    diam = np.asarray(diam, dtype=float)
    dist = np.asarray(dist, dtype=float)
    in_u = dist <= nbhd.delta
    return np.where(in_u, diam <= log_scale_bound(dist), diam <= S)


def essential(diam, dist):
    """Closed test diam >= (1/2) dist / (log dist)^2."""
    return np.asarray(diam) >= 0.5 * log_scale_bound(dist)


def image_geometry(square: ParamSquare, family: PolynomialFamily, k: int, sample_grid: int = 0):
    """(diam, dist) of the sampled image xi_k(square)."""
    cs = square.samples(sample_grid)
    Z, esc = family.images(cs, 0, np.zeros_like(cs), k)
    hit = (esc >= 0) & (esc <= k)
    if hit.any():
        raise SampleEscaped(k, int(hit.sum()), cs.size)
    diam, dist = geometry_block(Z[k:k + 1])
    return float(diam[0]), float(dist[0])


def _extend_check(square: ParamSquare, k: int, nbhd, S, family, sample_grid) -> int:
    """Extend the cached verification towards k; return the first failing time or -1."""
    cs = square.samples(sample_grid)
    if square._grid != sample_grid or square._z is None:
        square._z = np.zeros_like(cs)
        square._ok_until = 0
        square._grid = sample_grid
    t0 = square._ok_until
    if k <= t0:
        return -1
    Z, _ = family.images(cs, t0, square._z, k - t0)
    diam, dist = geometry_block(Z[1:])
    ok = partition_bound_ok(diam, dist, nbhd, S)
    bad = np.flatnonzero(~ok)
    if bad.size:
        t_fail = t0 + 1 + int(bad[0])
        if bad[0] > 0:
            square._z = Z[bad[0]].copy()
            square._ok_until = t_fail - 1
        return t_fail
    square._z = Z[-1].copy()
    square._ok_until = k
    square.last_geometry = (float(diam[-1]), float(dist[-1]), int(k))
    return -1


def is_partition_element(square: ParamSquare, k: int, nbhd: CriticalNeighborhoods, S: float,
                         family: PolynomialFamily, sample_grid: int = 0) -> bool:
    """True iff the partition inequality holds at every time j <= k."""
    return _extend_check(square, k, nbhd, S, family, sample_grid) < 0


def classify_return_set(diam: float, dist: float) -> ReturnKind:
    return ReturnKind.EssentialSet if bool(essential(diam, dist)) else ReturnKind.InessentialSet


def resolution_depth(square: ParamSquare, margin: int = RESOLUTION_ULPS) -> int:
    """Deepest level whose squares still span ``margin`` ulps of the parameter."""
    mag = max(abs(square.center.real), abs(square.center.imag)) + square.side / 2
    ulp = float(np.spacing(mag))
    if square.side <= margin * ulp:
        return square.depth
    return square.depth + int(math.floor(math.log2(square.side) - math.log2(margin * ulp)))


def refine_at_essential_return(square: ParamSquare, k: int, nbhd: CriticalNeighborhoods, S: float,
                               family: PolynomialFamily, sample_grid: int = 0,
                               depth_limit: int = DEFAULT_DEPTH_LIMIT,
                               on_depth_limit: str = "mark") -> list[ParamSquare]:
    """Split until every leaf is a partition element at time k.

    Leaves are returned in NW, NE, SW, SE depth-first order.  A square that
    still fails at the depth limit becomes Anomalous (or raises DepthLimit
    when ``on_depth_limit='raise'``).
    """
    max_depth = min(depth_limit, resolution_depth(square))
    out: list[ParamSquare] = []

    def visit(sq: ParamSquare) -> None:
        if is_partition_element(sq, k, nbhd, S, family, sample_grid):
            _check_overshoot(sq, k, family, sample_grid)
            out.append(sq)
            return
        if sq.depth >= max_depth:
            if on_depth_limit == "raise":
                raise DepthLimit(f"square at depth {sq.depth} still fails at time {k}")
            sq.set_status(Status.Anomalous)
            sq.flags.append("depth-limit")
            out.append(sq)
            return
        for ch in sq.split():
            visit(ch)

    visit(square)
    return out


def _check_overshoot(sq: ParamSquare, k: int, family, sample_grid) -> None:
    if sq.depth == 0 or sq.last_geometry is None or sq.last_geometry[2] != k:
        return
    diam, dist, _ = sq.last_geometry
    if dist > 0 and diam < 0.5 * float(log_scale_bound(dist)) / 4:
        sq.flags.append("overshoot")
