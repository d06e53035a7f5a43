"""Batch commands behind main.py: gen, solve, exact, compare, bench."""
from __future__ import annotations

import logging
import statistics
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np
import orjson
import pandas as pd
from pydantic import BaseModel, Field
from scipy.spatial import cKDTree

from geotransport.config import settings
from geotransport.core import TransportInstance, TransportationMap, map_cost, map_divergence
from geotransport.errors import InfeasibleFlowError
from geotransport.generators import generate_instance
from geotransport.instance_io import read_instance, write_instance, write_map
from geotransport.oracle import certify, exact_transport
from geotransport.quadtree import check_properties
from geotransport.recover import merge_coincident, recover_map
from geotransport.solvers import PipelineResult, SolverConfig, best_of_k

logger = logging.getLogger("geotransport.commands")


class RunReport(BaseModel):
    ok: bool = True
    command: str
    message: str = ""
    n: Optional[int] = None
    d: Optional[int] = None
    spread_estimate: Optional[float] = None
    seed: Optional[int] = None
    config: dict[str, Any] = Field(default_factory=dict)
    cost: Optional[float] = None
    oracle_cost: Optional[float] = None
    ratio: Optional[float] = None
    timings: dict[str, float] = Field(default_factory=dict)
    graph: dict[str, int] = Field(default_factory=dict)
    properties: dict[str, Any] = Field(default_factory=dict)
    solver: list[dict[str, Any]] = Field(default_factory=list)
    data: dict[str, Any] = Field(default_factory=dict)

    def to_json(self) -> bytes:
        return orjson.dumps(self.model_dump(), option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY)

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_json())


def spread_estimate(instance: TransportInstance) -> Optional[float]:
    """Bounding-box diagonal over the smallest nonzero nearest-neighbour distance."""
    if instance.n < 2:
        return None
    pts = instance.points
    dist, _ = cKDTree(pts).query(pts, k=2)
    nearest = dist[:, 1]
    nearest = nearest[nearest > 0.0]
    if nearest.size == 0:
        return None
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)) / nearest.min())


def _summary(report: RunReport, instance: TransportInstance) -> RunReport:
    report.n = instance.n
    report.d = instance.d
    report.spread_estimate = spread_estimate(instance)
    return report


def solve_instance(
    instance: TransportInstance, config: SolverConfig, *, debug: bool = False
) -> tuple[TransportationMap, PipelineResult]:
    """Full pipeline: best-of-k flow, recovery, and re-expansion of coincident points."""
    result = best_of_k(instance, config)
    start = time.perf_counter()
    tmap = recover_map(result.graph, result.tree, result.flow, debug=debug)
    tmap = merge_coincident(tmap, result.tree.coincidence)
    result.timings["recover"] = time.perf_counter() - start

    mass = instance.total_mass
    err = float(np.abs(map_divergence(instance, tmap) - instance.supplies).sum())
    if err > 1e-9 * max(mass, 1e-300):
        raise InfeasibleFlowError(f"Recovered map misses the supplies by {err:.3e}")
    return tmap, result


def _pipeline_fields(report: RunReport, result: PipelineResult) -> None:
    report.seed = result.seed
    report.timings = dict(result.timings)
    report.graph = {**result.tree.stats(), **result.graph.stats()}
    props = check_properties(result.tree)
    report.properties = {
        "passed": props.passed,
        "cells_ok": props.cells_ok,
        "moats_ok": props.moats_ok,
        "rule2_ok": props.rule2_ok,
        "witness": props.witness,
    }
    report.solver = [s.model_dump() for s in result.stats]
    report.data["flow_cost"] = result.cost
    report.data["lazy_cost"] = result.lazy_cost
    report.data["run_costs"] = list(result.run_costs)


def cmd_gen(
    n: int,
    d: int,
    spread: float,
    supplies: str,
    seed: int,
    out: str | Path,
    *,
    epsilon: float | None = None,
    rule2_exponent: float | None = None,
) -> RunReport:
    instance = generate_instance(
        n, d, spread=spread, supplies=supplies, seed=seed, epsilon=epsilon, rule2_exponent=rule2_exponent
    )
    write_instance(out, instance)
    report = _summary(RunReport(command="gen", seed=seed, message=f"wrote {out}"), instance)
    report.config = {"spread": spread, "supplies": supplies, "epsilon": epsilon, "rule2_exponent": rule2_exponent}
    return report


def cmd_solve(
    input: str | Path,
    config: SolverConfig,
    out_map: str | Path | None = None,
    out_report: str | Path | None = None,
) -> RunReport:
    instance = read_instance(input)
    tmap, result = solve_instance(instance, config)
    if out_map is not None:
        write_map(out_map, tmap)
    report = _summary(RunReport(command="solve", config=config.model_dump()), instance)
    report.cost = map_cost(instance, tmap)
    _pipeline_fields(report, result)
    report.data["rows"] = len(tmap)
    if out_report is not None:
        report.write(out_report)
    return report


def cmd_exact(input: str | Path, out_map: str | Path | None = None, out_report: str | Path | None = None) -> RunReport:
    instance = read_instance(input)
    start = time.perf_counter()
    result = exact_transport(instance)
    elapsed = time.perf_counter() - start
    ok, witness = certify(instance, result)
    if out_map is not None:
        write_map(out_map, result.tmap)
    report = _summary(RunReport(command="exact", ok=ok, message=witness or "certified"), instance)
    report.cost = result.cost
    report.oracle_cost = result.cost
    report.timings = {"oracle": elapsed}
    report.data = {"rows": len(result.tmap), "augmentations": result.augmentations}
    if out_report is not None:
        report.write(out_report)
    return report


def _ratio(cost: float, optimum: float) -> float:
    if optimum > 0.0:
        return cost / optimum
    return 1.0 if cost <= 1e-12 else float("inf")


def cmd_compare(input: str | Path, config: SolverConfig, trials: int) -> RunReport:
    """Solve under ``trials`` consecutive seeds and compare against the exact oracle.

    ``ok`` is False when the median ratio exceeds 1 + epsilon.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    instance = read_instance(input)
    oracle = exact_transport(instance)
    ratios, costs = [], []
    for t in range(trials):
        trial = config.model_copy(update={"seed": config.seed + t})
        tmap, _ = solve_instance(instance, trial)
        cost = map_cost(instance, tmap)
        costs.append(cost)
        ratios.append(_ratio(cost, oracle.cost))
        logger.info("trial %d: cost %.6g ratio %.6f", t, cost, ratios[-1])

    median = statistics.median(ratios)
    report = _summary(RunReport(command="compare", config=config.model_dump(), seed=config.seed), instance)
    report.cost = statistics.median(costs)
    report.oracle_cost = oracle.cost
    report.ratio = median
    report.data = {"ratios": ratios, "min_ratio": min(ratios), "median_ratio": median, "trials": trials}
    report.ok = median <= 1.0 + config.epsilon
    report.message = (
        f"median ratio {median:.6f} within 1+eps" if report.ok else f"median ratio {median:.6f} exceeds 1+eps"
    )
    return report


def cmd_bench(sizes: list[int], config: SolverConfig, d: int = 2, supplies: str = "random") -> tuple[pd.DataFrame, RunReport]:
    """Timing rows over the given sizes; growth is total time relative to the previous row."""
    rows = []
    for n in sizes:
        instance = generate_instance(n, d, supplies=supplies, seed=config.seed)
        start = time.perf_counter()
        tmap, result = solve_instance(instance, config)
        total = time.perf_counter() - start
        rows.append(
            {
                "n": n,
                "cells": len(result.tree.cells),
                "net_points": len(result.tree.netpoints),
                "edges": result.graph.num_edges,
                "quadtree_s": result.timings.get("quadtree", 0.0),
                "graph_s": result.timings.get("graph", 0.0),
                "solve_s": result.timings.get("solve", 0.0),
                "recover_s": result.timings.get("recover", 0.0),
                "total_s": total,
                "cost": map_cost(instance, tmap),
            }
        )
    table = pd.DataFrame(rows)
    table["growth"] = table["total_s"] / table["total_s"].shift(1)
    doublings = np.log2(table["n"] / table["n"].shift(1))
    table["growth_per_doubling"] = table["growth"] ** (1.0 / doublings.where(doublings > 0))
    slow = table[table["growth_per_doubling"] > settings.BENCH_GROWTH_WARN]
    for _, row in slow.iterrows():
        logger.warning(
            "n=%d: time grew %.2fx per doubling (limit %.2fx), slower than n log n",
            row["n"], row["growth_per_doubling"], settings.BENCH_GROWTH_WARN,
        )
    report = RunReport(command="bench", config=config.model_dump(), seed=config.seed)
    report.data = {
        "rows": table.replace({np.nan: None}).to_dict(orient="records"),
        "superlinear_sizes": [int(n) for n in slow["n"]],
    }
    if len(slow):
        report.message = f"growth above {settings.BENCH_GROWTH_WARN}x per doubling at n={report.data['superlinear_sizes']}"
    return table, report
