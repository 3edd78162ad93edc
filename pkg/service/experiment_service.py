import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import TypeAdapter, ValidationError

from config import DEFAULT_SEED, EXACT_TOL, MIRROR_TOL
from errors import CapabilityError, ConfigError, CouplingLabError, NoReflectionError
from models.analysis_models import CheckReport, CurveMethod, ResidualRow, TVCurve
from models.chain_models import ChainRequest, CycleRequest, EightRequest, FiniteChain, GasketRequest, TreeRequest
from models.experiment_models import ExperimentConfig, ResultManifest
from models.point_models import Point
from repos.result_storage_repo import ResultStorage
from service import analysis_service as analysis
from service.chain_service import build_chain, chain_distribution
from service.couplings_service import (
    chain_mirror_kernel,
    chain_path_coupling,
    eight_pair_kernel,
    exact_survival,
    independent_pair_kernel,
    independent_run,
    kc_run,
    kc_eps_schedule,
    markov_contract_residual,
    mirror_pair_kernel,
    mirror_run,
    tree_pair_kernel,
)
from service.diffusion_service import heat_kernel, sample_bm_path, sample_chain_path, sample_geodesic_rw_path
from service.reflection_service import (
    bisector_residuals,
    build_structure,
    gasket_mirror_rigidity,
    torus_bisector,
)
from service.rng_service import seed_stream
from service.spaces_service import (
    CircleSpace,
    EuclideanSpace,
    FlatTorusSpace,
    Manifold,
    Space,
    Sphere2Space,
    gasket_cell_by_distances,
    gasket_cells,
    gasket_corner,
    gasket_distance,
    gasket_graph_distances,
    gasket_vertices,
    psi,
    space_by_name,
    to_points,
)

logger = logging.getLogger(__name__)

_chain_adapter = TypeAdapter(ChainRequest)

ACCEPTANCE_CHAINS: Tuple[ChainRequest, ...] = (
    CycleRequest(m=4, laziness=0.5),
    EightRequest(m=4),
    TreeRequest(m=2),
    GasketRequest(n=2, axis_subdivision=True),
)

DEFAULT_PAIRS: Dict[str, Tuple[List[float], List[float]]] = {
    "circle": ([0.0], [0.5]),
    "flat_torus": ([0.0, 0.0], [0.4, 0.0]),
    "sphere2": ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
    "hyperbolic2": ([math.cosh(0.5), math.sinh(0.5), 0.0], [math.cosh(0.5), -math.sinh(0.5), 0.0]),
}


# -------------------
# Config helpers
# -------------------

def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid experiment config: {problems}") from e


def load_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON config (or start empty) and apply non-None overrides before validation"""
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return parse_config(data)


def config_hash(config: ExperimentConfig) -> str:
    """git blob hash of the canonical JSON of the output-determining fields"""
    payload = json.dumps(config.hash_payload(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def _chains(params: Dict[str, Any]) -> List[FiniteChain]:
    requests = params.get("chains")
    if requests is None:
        return [build_chain(r) for r in ACCEPTANCE_CHAINS]
    return [build_chain(_chain_adapter.validate_python(r)) for r in requests]


def _continuous_pair(space: Space, config: ExperimentConfig) -> Tuple[Point, Point]:
    if config.x1 is not None and config.x2 is not None:
        rows = [config.x1, config.x2]
    elif isinstance(space, EuclideanSpace):
        rows = [[-0.5] + [0.0] * (space.dim - 1), [0.5] + [0.0] * (space.dim - 1)]
    elif space.name in DEFAULT_PAIRS:
        rows = list(DEFAULT_PAIRS[space.name])
    else:
        raise CapabilityError(f"{space.name} has no coordinate pair; use a chain request")
    x1, x2 = to_points(space, rows)
    return x1, x2


# -------------------
# Verification checks
# -------------------

def check_maximality(params: Dict[str, Any]) -> CheckReport:
    t_max = int(params.get("t_max", 50))
    rows, details, passed = [], {}, True
    for chain in _chains(params):
        report = analysis.chain_maximality(chain, t_max)
        worst = max(abs(r.residual) for r in report.residuals)
        details[chain.name] = {"max_residual": worst, "monotone": analysis.phi_monotonicity(
            TVCurve(np.arange(t_max + 1), analysis.chain_phi(chain, t_max), CurveMethod.EXACT_CHAIN))["monotone"]}
        rows.extend(report.residuals)
        passed = passed and report.passed
    return CheckReport(check="maximality", params={"t_max": t_max}, residuals=rows, details=details, passed=passed)


def check_hahn(params: Dict[str, Any]) -> CheckReport:
    t_max = int(params.get("t_max", 20))
    rows, details = [], {}
    for chain in _chains(params):
        worst = 0.0
        for t in range(t_max + 1):
            result = analysis.hahn_check(chain, t)
            worst = max(worst, result["residual"])
            rows.append(ResidualRow(t=t, lhs=result["tv"], rhs=result["hahn"], residual=result["residual"],
                                    flagged=result["residual"] > EXACT_TOL))
        details[chain.name] = worst
    return CheckReport(check="hahn", params={"t_max": t_max}, residuals=rows, details=details,
                       passed=not any(r.flagged for r in rows))


def check_wasser(params: Dict[str, Any]) -> CheckReport:
    max_sum = int(params.get("max_sum", 20))
    draws = int(params.get("random_couplings", 100))
    rng = seed_stream(int(params.get("seed", DEFAULT_SEED)), 0)
    rows, details = [], {}
    for chain in _chains(params):
        worst_residual, worst_gap = 0.0, math.inf
        for total in range(max_sum + 1):
            for s in range(total + 1):
                t = total - s
                # random plans are drawn on the outer diagonal s + t = max_sum
                result = analysis.wasser_check(chain, s, t, draws if total == max_sum else 0, rng)
                worst_residual = max(worst_residual, abs(result["residual"]))
                if total == max_sum and draws:
                    worst_gap = min(worst_gap, result["min_random_gap"])
                rows.append(ResidualRow(t=s + t, lhs=result["mirror_expectation"], rhs=result["phi"],
                                        residual=result["residual"], flagged=abs(result["residual"]) > EXACT_TOL))
        details[chain.name] = {"max_residual": worst_residual, "min_random_gap": worst_gap}
        if draws and worst_gap < -EXACT_TOL:
            rows.append(ResidualRow(t=max_sum, lhs=worst_gap, rhs=0.0, residual=worst_gap, flagged=True))
    return CheckReport(check="wasser", params={"max_sum": max_sum, "random_couplings": draws}, residuals=rows,
                       details=details, passed=not any(r.flagged for r in rows))


VARADHAN_CASES = (
    ("euclidean", [0.0], [1.0], [10.0 ** -k for k in range(1, 7)]),
    ("circle", [0.0], [0.3], [10.0 ** -k for k in range(1, 7)]),
    ("sphere2", [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]),
)


def check_varadhan(params: Dict[str, Any]) -> CheckReport:
    cases = params.get("cases") or VARADHAN_CASES
    rows, details, passed = [], {}, True
    for name, a, b, ts in cases:
        space = space_by_name(name, len(a))
        x, y = to_points(space, [a, b])
        report = analysis.varadhan_check(space, x, y, ts)
        rows.extend(report.residuals)
        details[name] = report.details
        passed = passed and report.passed
    return CheckReport(check="varadhan", residuals=rows, details=details, passed=passed)


def check_nonuniqueness(params: Dict[str, Any]) -> CheckReport:
    t_max = int(params.get("t_max", 20))
    min_gap = float(params.get("min_gap", 0.01))
    pairs = (
        (build_chain(EightRequest(m=int(params.get("eight_m", 4)))), eight_pair_kernel),
        (build_chain(TreeRequest(m=int(params.get("tree_m", 2)))), tree_pair_kernel),
    )
    rows, details, passed = [], {}, True
    for chain, counter in pairs:
        mirror, other = mirror_pair_kernel(chain), counter(chain)
        survival_gap = float(np.max(np.abs(exact_survival(mirror, t_max) - exact_survival(other, t_max))))
        witness = analysis.joint_law_gap(mirror, other, t_max)
        ok = survival_gap <= EXACT_TOL and witness["gap"] > min_gap
        rows.append(ResidualRow(t=witness["t"], lhs=survival_gap, rhs=witness["gap"], residual=survival_gap,
                                flagged=not ok))
        details[chain.name] = {"survival_gap": survival_gap, "joint_law_witness": witness}
        passed = passed and ok
    return CheckReport(check="nonuniqueness", params={"t_max": t_max, "min_gap": min_gap}, residuals=rows,
                       details=details, passed=passed)


def check_bisector(params: Dict[str, Any]) -> CheckReport:
    pairs = params.get("pairs") or [[1 / 3, 1 / 5], [1 / 5, 1 / 5], [1 / 3, 0.0]]
    samples = int(params.get("samples", 1000))
    rows, details, passed = [], {}, True
    torus = FlatTorusSpace()
    for a, b in pairs:
        geometry = torus_bisector(a, b)
        worst = max(bisector_residuals(geometry, samples))
        singular_ok = geometry.singular == (b != 0)
        try:
            build_structure(torus, Point.torus(a, 0.0), Point.torus(0.0, b))
            reflects = True
        except NoReflectionError:
            reflects = False
        ok = worst <= EXACT_TOL and singular_ok and reflects == (b == 0)
        rows.append(ResidualRow(t=0.0, lhs=a, rhs=b, residual=worst, flagged=not ok))
        details[f"a={a:.6g},b={b:.6g}"] = {"case": geometry.case, "max_residual": worst, "has_reflection": reflects}
        passed = passed and ok
    return CheckReport(check="bisector-equidistance", params={"samples": samples}, residuals=rows,
                       details=details, passed=passed)


def check_kc_mirror(params: Dict[str, Any]) -> CheckReport:
    eps = float(params.get("eps", 1e-3))
    n_steps = int(params.get("n_steps", 10000))
    seed = int(params.get("seed", DEFAULT_SEED))
    cases = (
        (space_by_name("sphere2"), [0.8, 0.6, 0.0], [0.8, -0.6, 0.0], MIRROR_TOL),
        (space_by_name("euclidean", 2), [-0.5, 0.2], [0.5, 0.2], EXACT_TOL),
    )
    rows, details, passed = [], {}, True
    for space, a, b, tol in cases:
        x1, x2 = to_points(space, [a, b])
        run = kc_run(space, x1, x2, eps, n_steps, seed_stream(seed, 0))
        ok = run.mirror_deviation <= tol
        rows.append(ResidualRow(t=float(run.times[-1]), lhs=run.mirror_deviation, rhs=tol,
                                residual=run.mirror_deviation, flagged=not ok))
        details[space.name] = {"max_deviation": run.mirror_deviation, "coupling_time": run.coupling_time}
        passed = passed and ok
    return CheckReport(check="kc-mirror", params={"eps": eps, "n_steps": n_steps}, residuals=rows,
                       details=details, passed=passed)


def check_gasket_metric(params: Dict[str, Any]) -> CheckReport:
    n_max = int(params.get("n_max", 4))
    rows, details = [], {}
    p1, p2 = gasket_corner(1), gasket_corner(2)
    anchors = {
        "d(p1,p2)": (gasket_distance(p1, p2), Fraction(1)),
        "d(psi2 p1, psi2 p2)": (gasket_distance(psi(2, p1), psi(2, p2)), Fraction(1, 2)),
    }
    for name, (got, want) in anchors.items():
        rows.append(ResidualRow(t=0.0, lhs=float(got), rhs=float(want), residual=float(got - want),
                                flagged=got != want))
    for n in range(n_max + 1):
        level = gasket_vertices(n)
        hops = gasket_graph_distances(n)
        scale = level.edge_length
        mismatches = sum(
            1
            for i, a in enumerate(level.vertices)
            for j, b in enumerate(level.vertices)
            if j > i and gasket_distance(a, b) != hops[i, j] * scale
        )
        cells_wrong = sum(
            1 for w in level.vertices if w.coords[0] > 1 - w.coords[0] - w.coords[1]
            for k, inside in gasket_cell_by_distances(w).items()
            if inside != (k in gasket_cells(w))
        )
        rigidity = len(gasket_mirror_rigidity(n))
        rows.append(ResidualRow(t=float(n), lhs=mismatches, rhs=0.0, residual=float(mismatches + cells_wrong + rigidity),
                                flagged=bool(mismatches or cells_wrong or rigidity)))
        details[f"level {n}"] = {"vertices": len(level.vertices), "metric_mismatches": mismatches,
                                 "cell_mismatches": cells_wrong, "rigidity_violations": rigidity}
    return CheckReport(check="gasket-metric", params={"n_max": n_max}, residuals=rows, details=details,
                       passed=not any(r.flagged for r in rows))


def _continuous_marginals(space: Space, x1: Point, x2: Point, t_grid: Sequence[float], trials: int,
                          seed: int) -> List[ResidualRow]:
    structure = build_structure(space, x1, x2)
    dt = float(t_grid[0])
    n_steps = int(round(t_grid[-1] / dt))
    checkpoints = [int(round(t / dt)) for t in t_grid]
    coupled = {k: [] for k in checkpoints}
    fresh = {k: [] for k in checkpoints}
    for trial in range(trials):
        rng = seed_stream(seed, trial)
        run = mirror_run(structure, sample_bm_path(space, x1, dt, n_steps, rng), rng)
        other = sample_bm_path(space, x2, dt, n_steps, seed_stream(seed + 1, trial))
        for k in checkpoints:
            coupled[k].append(run.second[k].coords[0])
            fresh[k].append(other.positions[k].coords[0])
    rows = []
    for k, t in zip(checkpoints, t_grid):
        stat, p = analysis.ks_two_sample(coupled[k], fresh[k])
        rows.append(ResidualRow(t=float(t), lhs=stat, rhs=p, residual=stat, flagged=p < 0.01))
    return rows


def _kc_marginals(space: Space, x1: Point, x2: Point, eps: float, t_grid: Sequence[float], trials: int,
                  seed: int) -> Dict[str, List[ResidualRow]]:
    """KS of each KC walker against an uncoupled geodesic walk from the same start, on <z, start>"""
    n_steps = int(round(t_grid[-1] / (eps * eps)))
    checkpoints = [int(round(t / (eps * eps))) for t in t_grid]
    samples = {key: {k: [] for k in checkpoints} for key in ("first", "second", "fresh1", "fresh2")}
    a, b = x1.as_array(), x2.as_array()
    for trial in range(trials):
        run = kc_run(space, x1, x2, eps, n_steps, seed_stream(seed, trial))
        walk1 = sample_geodesic_rw_path(space, x1, eps, n_steps, seed_stream(seed + 1, trial))
        walk2 = sample_geodesic_rw_path(space, x2, eps, n_steps, seed_stream(seed + 2, trial))
        for k in checkpoints:
            samples["first"][k].append(float(np.dot(run.first[k].as_array(), a)))
            samples["second"][k].append(float(np.dot(run.second[k].as_array(), b)))
            samples["fresh1"][k].append(float(np.dot(walk1.positions[k].as_array(), a)))
            samples["fresh2"][k].append(float(np.dot(walk2.positions[k].as_array(), b)))
    rows: Dict[str, List[ResidualRow]] = {"first": [], "second": []}
    for walker, reference in (("first", "fresh1"), ("second", "fresh2")):
        for k, t in zip(checkpoints, t_grid):
            stat, p = analysis.ks_two_sample(samples[walker][k], samples[reference][k])
            rows[walker].append(ResidualRow(t=float(t), lhs=stat, rhs=p, residual=stat, flagged=p < 0.01))
    return rows


def check_marginals(params: Dict[str, Any]) -> CheckReport:
    t_max = int(params.get("t_max", 20))
    trials = int(params.get("trials", 2000))
    seed = int(params.get("seed", DEFAULT_SEED))
    rows, details = [], {}
    for chain in _chains(params):
        kernels = [mirror_pair_kernel(chain), independent_pair_kernel(chain)]
        if chain.name.startswith("EightChain"):
            kernels.append(eight_pair_kernel(chain))
        if chain.name.startswith("TreeChain"):
            kernels.append(tree_pair_kernel(chain))
        for kernel in kernels:
            marginal = analysis.chain_marginal_residual(kernel, t_max)
            contract = markov_contract_residual(kernel)
            bad = max(marginal, contract) > EXACT_TOL
            rows.append(ResidualRow(t=float(t_max), lhs=marginal, rhs=contract, residual=max(marginal, contract),
                                    flagged=bad))
            details[kernel.name] = {"marginal_residual": marginal, "markov_contract_residual": contract}
    if trials:
        for name, a, b in (("euclidean", [-0.5], [0.5]), ("circle", [0.1], [0.4])):
            space = space_by_name(name, 1)
            x1, x2 = to_points(space, [a, b])
            ks_rows = _continuous_marginals(space, x1, x2, [0.05, 0.1, 0.2], trials, seed)
            rows.extend(ks_rows)
            details[f"{name}:mirror"] = {"ks": [(r.lhs, r.rhs) for r in ks_rows]}
        sphere = space_by_name("sphere2")
        x1, x2 = to_points(sphere, list(DEFAULT_PAIRS["sphere2"]))
        for walker, ks_rows in _kc_marginals(sphere, x1, x2, 0.1, [0.05, 0.1, 0.2], trials, seed).items():
            rows.extend(ks_rows)
            details[f"sphere2:kc:{walker}"] = {"ks": [(r.lhs, r.rhs) for r in ks_rows]}
    return CheckReport(check="marginals", params={"t_max": t_max, "trials": trials}, residuals=rows,
                       details=details, passed=not any(r.flagged for r in rows))


def check_gasket_subdivision(params: Dict[str, Any]) -> CheckReport:
    levels = [int(n) for n in params.get("levels", [1, 2, 3])]
    laziness = float(params.get("laziness", 0.5))
    t_max = int(params.get("t_max", 40))
    report = analysis.gasket_subdivision_report(levels, laziness=laziness, t_max=t_max)
    rows = [
        ResidualRow(t=float(row["level"]), lhs=row["plain"], rhs=row["subdivided"], residual=row["subdivided"],
                    flagged=row["subdivided"] > EXACT_TOL or row["plain"] <= EXACT_TOL)
        for row in report
    ]
    plain = [row["plain"] for row in report]
    decreasing = all(b < a for a, b in zip(plain, plain[1:]))
    details = {f"level {row['level']}": row for row in report}
    details["plain_gap_decreasing"] = decreasing
    return CheckReport(check="gasket-subdivision", params={"levels": levels, "laziness": laziness, "t_max": t_max},
                       residuals=rows, details=details, passed=decreasing and not any(r.flagged for r in rows))


def check_kc_schedule(params: Dict[str, Any]) -> CheckReport:
    ks = [int(k) for k in params.get("ks", [25, 100, 400])]
    horizon = float(params.get("horizon", 0.5))
    trials = int(params.get("trials", 50))
    seed = int(params.get("seed", DEFAULT_SEED))
    space = space_by_name("sphere2")
    x1, x2 = to_points(space, [[0.8, 0.6, 0.0], [0.8, -0.6, 0.0]])
    target = 1.0 - float(analysis.phi_exact(space, horizon, x1, x2))
    rows, details = [], {"coupled_by_horizon": target}
    for row in kc_eps_schedule(space, x1, x2, ks, horizon, trials, seed):
        merged = row["merged_fraction"]
        se = math.sqrt(max(merged * (1.0 - merged), 1e-12) / trials)
        rows.append(ResidualRow(t=float(row["k"]), lhs=merged, rhs=target, residual=merged - target,
                                flagged=row["max_mirror_deviation"] > MIRROR_TOL))
        details[f"k={row['k']}"] = {**row, "se": se}
    return CheckReport(check="kc-schedule", params={"ks": ks, "horizon": horizon, "trials": trials}, residuals=rows,
                       details=details, passed=not any(r.flagged for r in rows))


CHECKS: Dict[str, Callable[[Dict[str, Any]], CheckReport]] = {
    "maximality": check_maximality,
    "hahn": check_hahn,
    "wasser": check_wasser,
    "varadhan": check_varadhan,
    "nonuniqueness": check_nonuniqueness,
    "bisector-equidistance": check_bisector,
    "kc-mirror": check_kc_mirror,
    "gasket-metric": check_gasket_metric,
    "marginals": check_marginals,
    "gasket-subdivision": check_gasket_subdivision,
    "kc-schedule": check_kc_schedule,
}


def run_check(name: str, params: Optional[Dict[str, Any]] = None) -> CheckReport:
    if name not in CHECKS:
        raise CapabilityError(f"unknown check '{name}', expected one of {', '.join(CHECKS)}")
    logger.info(f"Running check {name}")
    report = CHECKS[name](params or {})
    report.params.update({k: v for k, v in (params or {}).items() if k not in report.params})
    logger.info(f"Check {name} {'passed' if report.passed else 'FAILED'}")
    return report


# -------------------
# Simulation
# -------------------

def _chain_trial(config: ExperimentConfig, chain: FiniteChain, steps: int, trial: int) -> float:
    seed = config.seed
    z1 = sample_chain_path(chain, chain.x1, steps, seed_stream(seed, trial), seed=(seed, trial))
    z2 = None
    if config.coupling == "independent":
        other = (seed + 1) % 2 ** 64
        z2 = sample_chain_path(chain, chain.x2, steps, seed_stream(other, trial), seed=(other, trial))
    return chain_path_coupling(config.coupling, chain, z1, z2).coupling_time


def _continuous_trial(config: ExperimentConfig, space: Space, x1: Point, x2: Point, structure, dt: float,
                      trial: int) -> float:
    seed = config.seed
    rng = seed_stream(seed, trial)
    horizon = config.t_grid[-1]
    if config.coupling == "kc":
        eps = config.eps or math.sqrt(dt)
        n_steps = int(math.ceil(horizon / (eps * eps)))
        if config.poisson_lambda:
            n_steps = int(math.ceil(1.5 * config.poisson_lambda * horizon)) + 10
        return kc_run(space, x1, x2, eps, n_steps, rng, poisson_lambda=config.poisson_lambda).coupling_time
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    if isinstance(space, (EuclideanSpace, CircleSpace, FlatTorusSpace)):
        sample = lambda start, gen, key: sample_bm_path(space, start, dt, n_steps, gen, seed=key)
    else:
        eps = math.sqrt(dt)
        sample = lambda start, gen, key: sample_geodesic_rw_path(space, start, eps, n_steps, gen, seed=key)
    z1 = sample(x1, rng, (seed, trial))
    if config.coupling == "independent":
        other = (seed + 1) % 2 ** 64
        return independent_run(z1, sample(x2, seed_stream(other, trial), (other, trial))).coupling_time
    return mirror_run(structure, z1, rng).coupling_time


def _default_dt(space: Space, t_grid: Sequence[float]) -> float:
    if isinstance(space, (EuclideanSpace, CircleSpace, FlatTorusSpace)):
        points = [0.0] + list(t_grid)
        return float(min(b - a for a, b in zip(points, points[1:])))
    return float(t_grid[-1]) / 400.0


def simulate(config: ExperimentConfig) -> Tuple[TVCurve, TVCurve, Dict[str, Any]]:
    """Monte Carlo survival curve of the configured coupling plus phi on the same grid"""
    if config.chain is not None:
        chain = build_chain(config.chain)
        if config.coupling == "kc":
            raise CapabilityError("the Kendall-Cranston coupling needs a manifold, not a chain")
        if config.coupling in ("eight", "tree") and config.chain.kind != config.coupling:
            raise CapabilityError(f"the {config.coupling} counterexample runs on a {config.coupling} chain only")
        if any(t != int(t) for t in config.t_grid):
            raise ConfigError("chain time grids must be integer step counts")
        steps = int(config.t_grid[-1])
        trial_fn = lambda k: _chain_trial(config, chain, steps, k)
        phi = analysis.phi_curve(chain, [int(t) for t in config.t_grid], chain.x1, chain.x2)
        meta = chain.describe()
    else:
        space = space_by_name(config.space, config.dim)
        if config.coupling in ("eight", "tree"):
            raise CapabilityError(f"the {config.coupling} counterexample needs a chain request")
        if config.coupling == "kc" and not isinstance(space, Manifold):
            raise CapabilityError(f"the Kendall-Cranston coupling is not offered on {space.name}")
        x1, x2 = _continuous_pair(space, config)
        try:
            structure = build_structure(space, x1, x2)
        except NoReflectionError as e:
            if config.coupling != "independent":
                raise CapabilityError(f"{e}; see the bisector command for the equidistant set") from e
            structure = None
        dt = config.dt or _default_dt(space, config.t_grid)
        trial_fn = lambda k: _continuous_trial(config, space, x1, x2, structure, dt, k)
        meta = {"space": space.name, "x1": x1.label(), "x2": x2.label(), "dt": dt}
        try:
            phi = analysis.phi_curve(space, config.t_grid, x1, x2)
        except CouplingLabError:
            phi = TVCurve(config.t_grid, np.full(len(config.t_grid), np.nan), CurveMethod.EXACT_KERNEL)

    logger.info(f"Simulating {config.coupling} coupling: {config.trials} trials on {config.threads} thread(s)")
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            times = list(pool.map(trial_fn, range(config.trials)))
    else:
        times = [trial_fn(k) for k in range(config.trials)]
    survival = analysis.survival_from_times(times, config.t_grid)
    return survival, phi, meta


def exact_tables(config: ExperimentConfig) -> Dict[str, Tuple[List[str], List[List[Any]]]]:
    """Name -> (header, rows) of the exact pipeline: laws or densities per t, and phi"""
    tables: Dict[str, Tuple[List[str], List[List[Any]]]] = {}
    if config.chain is not None:
        chain = build_chain(config.chain)
        for t in config.t_grid:
            law = chain_distribution(chain, chain.x1, int(t))
            tables[f"law_t{int(t)}.csv"] = (["state", "prob"], [[p.label(), w] for p, w in zip(chain.states, law)])
        t_max = int(config.t_grid[-1])
        phi = analysis.chain_phi(chain, t_max)
        survival = chain_mirror_kernel(chain, t_max).survival
        tables["phi.csv"] = (["t", "value", "se", "n"], [[t, float(phi[t]), 0.0, 0] for t in range(t_max + 1)])
        tables["survival.csv"] = (["t", "value", "se", "n"],
                                  [[t, float(survival[t]), 0.0, 0] for t in range(t_max + 1)])
        return tables

    space = space_by_name(config.space, config.dim)
    x1, x2 = _continuous_pair(space, config)
    ys = _density_points(space, x1)
    for t in config.t_grid:
        if t <= 0:
            continue
        tables[f"density_t{t:g}.csv"] = (["y", "density"], [[y.label(), heat_kernel(space, t, x1, y)] for y in ys])
    positive = [t for t in config.t_grid if t > 0]
    curve = analysis.phi_curve(space, positive, x1, x2)
    tables["phi.csv"] = (["t", "value", "se", "n"], [[t, v, 0.0, 0] for t, v in zip(curve.t, curve.values)])
    return tables


def _density_points(space: Space, x: Point, count: int = 101) -> List[Point]:
    if isinstance(space, CircleSpace):
        return to_points(space, [[k / (count - 1)] for k in range(count - 1)])
    if isinstance(space, FlatTorusSpace):
        return to_points(space, [[k / (count - 1), x.coords[1]] for k in range(count - 1)])
    if isinstance(space, Sphere2Space):
        # great circle through x and the pole (or e2 when x is the pole)
        a = x.as_array()
        other = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e = other - np.dot(other, a) * a
        e = e / np.linalg.norm(e)
        return [Point.sphere(math.cos(s) * a + math.sin(s) * e, normalize=True)
                for s in np.linspace(0.0, math.pi, count)]
    if isinstance(space, EuclideanSpace):
        return [Point.euclidean(*(x.as_array() + s * np.eye(space.dim)[0])) for s in np.linspace(-5.0, 5.0, count)]
    raise CapabilityError(f"no heat kernel on {space.name}")


# -------------------
# Entry point
# -------------------

def run_experiment(config: ExperimentConfig, storage: Optional[ResultStorage] = None) -> ResultManifest:
    """Dispatch to the simulate / exact / verify pipeline, write outputs and the manifest"""
    storage = storage or ResultStorage(config.output)
    run_id = storage.new_run_id()
    started = time.perf_counter()
    logger.info(f"Starting {config.pipeline} run {run_id}")
    outputs: List[str] = []
    checks: List[Dict[str, Any]] = []
    summary: Dict[str, Any] = {}
    passed = True

    if config.pipeline == "simulate":
        survival, phi, meta = simulate(config)
        outputs.append(storage.write_curve_csv(run_id, "survival.csv", survival.t, survival.values, survival.se,
                                               survival.n, header=("t", "survival_hat", "se", "n")))
        outputs.append(storage.write_curve_csv(run_id, "phi.csv", phi.t, phi.values, phi.se, 0))
        if np.all(np.isfinite(phi.values)):
            report = analysis.maximality_report(survival, phi)
            # the coupling inequality binds every coupling; equality is only expected of maximal ones
            below = [r for r in report.residuals if r.residual < 0 and r.flagged]
            report.check = "coupling-inequality"
            report.passed = not below
            if config.coupling in ("mirror", "eight", "tree") and config.chain is not None:
                report.check = "maximality"
                report.passed = not any(r.flagged for r in report.residuals)
            checks.append(report.dump())
            passed = report.passed
        summary = meta
    elif config.pipeline == "exact":
        for name, (header, rows) in exact_tables(config).items():
            outputs.append(storage.write_rows_csv(run_id, name, header, rows))
    else:
        report = run_check(config.check, config.params)
        outputs.append(storage.write_json(run_id, "report.json", report.dump()))
        checks.append(report.dump())
        passed = report.passed

    manifest = ResultManifest(
        run_id=run_id,
        pipeline=config.pipeline,
        created_at=datetime.now().isoformat(),
        config=config.model_dump(mode="json"),
        config_hash=config_hash(config),
        outputs=outputs,
        checks=checks,
        summary=summary,
        wall_clock=time.perf_counter() - started,
        passed=passed,
    )
    manifest.outputs.append(storage.save_manifest(manifest.model_dump(mode="json")))
    logger.info(f"Finished run {run_id} in {manifest.wall_clock:.2f}s (passed={passed})")
    return manifest
