"""Run a scenario end to end and write its output directory."""

from __future__ import annotations

import json
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numba
import numpy as np
import scipy

from . import __version__
from .density import Sampler, density_at_scale, outside_expansion_estimate
from .dynamics import FamilyParams, critical_orbit, lyapunov_summary
from .errors import EmptyPool, InvalidConstants
from .exclusion import (
    FollowConfig,
    FollowRecord,
    LeafOutcome,
    derive_constants,
    escape_scan,
    follow_leaf,
    initial_deletion,
    start_leaf,
    startup,
)
from .partition import PartitionTree, PolynomialFamily, Status, refine_at_essential_return
from .returns import CriticalNeighborhoods
from .scenario import Scenario


@dataclass
class RunResult:
    summary: dict
    manifest: dict
    ledger_rows: list[list] = field(default_factory=list)
    leaf_rows: list[list] = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    tree: PartitionTree | None = None


LEDGER_HEADER = ["leaf_id", "j", "nu", "kind", "alpha_tilde", "gamma_under", "deleted_fraction", "status"]
LEAF_HEADER = ["leaf_id", "center_re", "center_im", "side", "depth", "status", "escape_time", "E", "flags"]


def leaf_ids(tree: PartitionTree) -> dict[int, str]:
    """Quadtree path names: 'r' for the root, then one digit 0-3 (NW, NE, SW, SE) per level."""
    ids = {id(tree.root): "r"}
    stack = [tree.root]
    while stack:
        node = stack.pop()
        for i, ch in enumerate(node.children):
            ids[id(ch)] = ids[id(node)] + str(i)
            stack.append(ch)
    return ids


def _measured_density(sc: Scenario) -> dict:
    row = density_at_scale(sc.c0, sc.d, sc.epsilon, Sampler("stratified", sc.density_grid, sc.seed), sc.n_max)
    return {"samples": row.samples, "escaped": row.escaped, "density": row.density,
            "wilson_low": row.wilson_low, "wilson_high": row.wilson_high}


def _base_summary(sc: Scenario) -> dict:
    return {"scenario": sc.name, "c0": [sc.c0.real, sc.c0.imag], "d": sc.d, "epsilon": sc.epsilon}


def run_scenario(sc: Scenario, threads: int = 1) -> RunResult:
    nbhd = CriticalNeighborhoods(sc.Delta, sc.DeltaPrime, sc.beta, sc.epsilon1)
    manifest = {
        "scenario": sc.as_dict(),
        "threads_requested": threads,
        "versions": {"ce_lab": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "numba": numba.__version__, "scipy": scipy.__version__, "mpmath": mpmath.__version__},
    }
    orbit = critical_orbit(FamilyParams(sc.d, sc.c0), sc.n_max)
    tree = PartitionTree.over(sc.c0, sc.epsilon)
    summary = _base_summary(sc)

    if orbit.escape_index is not None:
        # anchor outside M_d: every parameter of a small enough square escapes
        tree.root.set_status(Status.Escaped)
        summary.update({
            "anchor_escapes_at": orbit.escape_index,
            "startup": None, "constants": None,
            "delta0": 0.0, "delta1": 0.0, "delta2": 0.0, "delta3_proxy": None,
            "predicted_escaped_area_fraction": 1.0,
            "area_by_status": tree.area_by_status(),
            "measured_density": _measured_density(sc),
        })
        manifest["constants"] = None
        return _finish(sc, tree, summary, manifest, [], FollowRecord())

    ly = lyapunov_summary(orbit)
    gamma_under = sc.gamma_factor * ly.gamma_lower
    try:
        _, gamma_H = outside_expansion_estimate(sc.c0, nbhd, sc.n_seg, sc.d, sc.n_max)
    except EmptyPool as exc:
        raise InvalidConstants(f"gamma_H > 0 cannot be measured: {exc}") from exc
    if not nbhd.beta_admissible(gamma_under, sc.d):
        raise InvalidConstants(f"beta < gamma/(4d) violated: beta = {sc.beta}, gamma/(4d) = {gamma_under / (4 * sc.d)}")

    family = PolynomialFamily.around(sc.c0, sc.epsilon, sc.d)
    su = startup(tree.root, family, nbhd, sc.n_max, sc.sample_grid)
    consts = derive_constants(gamma_under, ly.gamma_bar_trivial, gamma_H, su.alpha_N_c0, sc.d,
                              sc.kappa_prime, sc.C_tilde, sc.alpha, sc.C1)
    manifest["constants"] = consts.as_dict()
    summary["startup"] = {
        "N": su.N, "status": su.status, "diam": su.diam, "dist": su.dist,
        "alpha_N_c0": su.alpha_N_c0, "upsilon_max": su.upsilon_max,
        "comparability_K": su.comparability_K, "log_derivative_spread": su.log_derivative_spread,
    }
    summary["constants"] = consts.as_dict()
    summary["gamma_lower_c0"] = ly.gamma_lower

    rec_all: list[FollowRecord] = []
    outcomes: list[LeafOutcome] = []
    if su.status == "LargeScale":
        tree.root.set_status(Status.Escaped)
        dels = None
        delta0 = delta1 = delta2 = 0.0
    else:
        leaves = refine_at_essential_return(tree.root, su.N, nbhd, nbhd.S, family, sc.sample_grid, sc.depth_limit)
        dels = initial_deletion(leaves, su.N, sc.c0, sc.d, sc.C1)
        cfg = FollowConfig(family, nbhd, consts, sc.n_max, sc.sample_grid, sc.depth_limit, sc.scan_min_length)
        jobs = []
        for leaf in leaves:
            if leaf.status is not Status.Active:
                continue
            started = start_leaf(leaf, su.N, cfg)
            if started is None:
                leaf.set_status(Status.Undetermined)
                leaf.flags.append("bound-truncated")
                continue
            jobs.append((leaf, *started))
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            rec_all = list(pool.map(lambda job: follow_leaf(job[0], job[1], job[2], cfg), jobs))
        for rec in rec_all:
            outcomes.extend(rec.outcomes)
        area_q = tree.root.area
        after0 = area_q - dels.deleted_area
        prom_deleted = math.fsum(r.promotion_deleted_area for r in rec_all)
        delta0 = dels.deleted_area / area_q
        delta1 = prom_deleted / after0 if after0 > 0 else 0.0
        # Anomalous leaves sit outside both the numerator and the denominator
        anomalous = math.fsum(leaf.area for leaf in tree.leaves() if leaf.status is Status.Anomalous)
        after1 = after0 - prom_deleted - anomalous
        escaped = math.fsum(leaf.area for leaf in tree.leaves() if leaf.status is Status.Escaped)
        delta2 = 1.0 - escaped / after1 if after1 > 0 else 0.0

    merged = FollowRecord()
    for rec in rec_all:
        merged.deletion_checks += rec.deletion_checks
        merged.inessential_checks += rec.inessential_checks
        merged.q_checks += rec.q_checks
        merged.p_checks += rec.p_checks
    stats = escape_scan(outcomes, merged.q_checks, consts)
    summary.update({
        "initial_deletion": None if dels is None else {
            "deleted_area": dels.deleted_area, "n_deleted": dels.n_deleted, "n_leaves": dels.n_leaves,
            "delta0": dels.delta0, "predicted": dels.predicted,
        },
        "delta0": delta0, "delta1": delta1, "delta2": delta2,
        "delta3_proxy": su.upsilon_max,
        "predicted_escaped_area_fraction": (1 - delta0) * (1 - delta1) * (1 - delta2),
        "area_by_status": tree.area_by_status(),
        "checks": {
            "inessential_returns": len(merged.inessential_checks),
            "inessential_deletions": sum(x["deleted"] for x in merged.inessential_checks),
            "essential_returns": len(merged.deletion_checks),
            "deletion_bound_checked": sum(x["checked"] for x in merged.deletion_checks),
            "deletion_bound_violations": sum(not x["ok"] for x in merged.deletion_checks),
            "q_records": len(merged.q_checks),
            "q_violations": stats.q_violations,
            "p_records": len(merged.p_checks),
            "p_not_below_n": sum(x["p"] >= x["n"] for x in merged.p_checks),
        },
        "escape_scan": {
            "promoted_area": stats.promoted_area,
            "escaped_area": stats.escaped_area,
            "fraction_escaped": stats.fraction_escaped,
            "tail_points": len(stats.tail),
            "tail_violations": stats.tail_violations,
            "signatures": stats.signatures,
        },
        "measured_density": _measured_density(sc),
    })
    return _finish(sc, tree, summary, manifest, outcomes, merged, stats)


def _finish(sc, tree, summary, manifest, outcomes, merged, stats=None) -> RunResult:
    ids = leaf_ids(tree)
    ledger_rows = []
    seen = set()
    for o in outcomes:
        if o.ledger is None or id(o.square) in seen:
            continue
        seen.add(id(o.square))
        lg = o.ledger
        for j, nu in enumerate(lg.nu):
            ledger_rows.append([ids[id(o.square)], j, nu, lg.kinds[j], lg.alpha_tilde[j], lg.gamma_under[j],
                                lg.deleted_fraction_at.get(nu, 0.0), o.square.status.value])
    ledger_rows.sort(key=lambda r: (r[0], r[1]))
    by_sq = {id(o.square): o for o in outcomes}
    leaf_rows = []
    for leaf in tree.leaves():
        o = by_sq.get(id(leaf))
        leaf_rows.append([ids[id(leaf)], leaf.center.real, leaf.center.imag, leaf.side, leaf.depth,
                          leaf.status.value, None if o is None else o.escape_time,
                          None if o is None else o.E, ";".join(leaf.flags)])
    checks = {"deletion_bound": merged.deletion_checks, "inessential": merged.inessential_checks, "q": merged.q_checks}
    if stats is not None:
        checks["tail"] = stats.tail
    return RunResult(summary, manifest, ledger_rows, leaf_rows, checks, tree)


def _csv(header, rows) -> str:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)
    return "\n".join([",".join(header)] + [",".join(fmt(v) for v in r) for r in rows]) + "\n"


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_run(result: RunResult, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "manifest.json": dumps(result.manifest),
        "summary.json": dumps(result.summary),
        "checks.json": dumps(result.checks),
        "ledger.csv": _csv(LEDGER_HEADER, result.ledger_rows),
        "leaves.csv": _csv(LEAF_HEADER, result.leaf_rows),
        "tree.jsonl": result.tree.dump() if result.tree is not None else "",
    }
    paths = []
    for name, text in files.items():
        p = out_dir / name
        p.write_text(text)
        paths.append(p)
    return paths
