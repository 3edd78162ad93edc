import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, stats
from scipy.special import eval_legendre

from config import EXACT_TOL, SE_MULTIPLIER, SPHERE_SERIES_TOL
from errors import ConsistencyError, DomainError, GridMismatchError, UnsupportedError
from models.analysis_models import CheckReport, CurveMethod, DiscreteMeasurePair, ResidualRow, TVCurve
from models.chain_models import FiniteChain, GasketRequest
from models.point_models import Point
from models.structure_models import ReflectionStructure, Side
from models.trajectory_models import CoupledTrajectory
from service.chain_service import build_chain, chain_distribution, chain_distributions
from service.couplings_service import chain_mirror_kernel, component_laws, joint_laws, pair_table
from service.diffusion_service import (
    bm_endpoints,
    circle_kernel_wrapped,
    log_heat_kernel,
    sphere_walk_endpoints,
)
from service.reflection_service import build_structure
from service.spaces_service import (
    CircleSpace,
    EuclideanSpace,
    FlatTorusSpace,
    Space,
    Sphere2Space,
    to_points,
)

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-12
QUAD_TOL = 1e-10


# -------------------
# Total variation
# -------------------

def tv_distance(mu1: np.ndarray, mu2: np.ndarray) -> float:
    mu1, mu2 = np.asarray(mu1, dtype=float), np.asarray(mu2, dtype=float)
    if mu1.shape != mu2.shape:
        raise DomainError(f"measures live on different state spaces: {mu1.shape} vs {mu2.shape}")
    for mu in (mu1, mu2):
        if abs(mu.sum() - 1.0) > NORMALIZATION_TOL:
            raise DomainError(f"measure sums to {mu.sum()}, not 1")
    return float(0.5 * np.sum(np.abs(mu1 - mu2)))


def hahn_check(chain: FiniteChain, t: int) -> Dict[str, float]:
    """tv of the time-t laws against max over the regions X1 and X1 u H of mu1(A) - mu2(A)"""
    mu1, mu2 = chain_distribution(chain, chain.x1, t), chain_distribution(chain, chain.x2, t)
    x1 = chain.side_mask(Side.X1)
    regions = {"X1": x1, "X1+H": x1 | chain.h_mask}
    gaps = {name: float(mu1[mask].sum() - mu2[mask].sum()) for name, mask in regions.items()}
    tv = tv_distance(mu1, mu2)
    best = max(gaps.values())
    return {"t": t, "tv": tv, "hahn": best, "residual": abs(tv - best), **{f"gap[{k}]": v for k, v in gaps.items()}}


def chain_phi(chain: FiniteChain, t_max: int, x: Optional[int] = None, y: Optional[int] = None) -> np.ndarray:
    """phi_t between states x and y (default the mirror pair) for t = 0..t_max"""
    a = chain.x1 if x is None else x
    b = chain.x2 if y is None else y
    rows1, rows2 = chain_distributions(chain, a, t_max), chain_distributions(chain, b, t_max)
    return np.array([tv_distance(r1, r2) for r1, r2 in zip(rows1, rows2)])


# -------------------
# phi_t from kernels
# -------------------

def _circle_half_phi(u: float, center: float, t: float) -> float:
    # mass of p_t(u, .) - p_t(R u, .) on the half circle containing u
    ru = 2.0 * center - u
    start = center if (u - center) % 1.0 < 0.5 else center + 0.5

    def integrand(s: float) -> float:
        return circle_kernel_wrapped(u - s, t) - circle_kernel_wrapped(ru - s, t)

    value, _ = integrate.quad(integrand, start, start + 0.5, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
    return float(value)


def sphere_hemisphere_phi(c: float, t: float, tol: float = SPHERE_SERIES_TOL) -> float:
    """
    P_x[Z_t in X1] - P_Rx[Z_t in X1] for the hemisphere X1 = {z : z.n > 0}, c = x.n:
    sum over odd l of (2l+1) exp(-l(l+1)t/2) I_l P_l(c), I_l = int_0^1 P_l.
    """
    total = 0.0
    l = 1
    while True:
        weight = (2 * l + 1) * math.exp(-l * (l + 1) * t / 2.0)
        if weight < tol and l * t >= 1.0:
            return float(total)
        integral = (eval_legendre(l - 1, 0.0) - eval_legendre(l + 1, 0.0)) / (2 * l + 1)
        total += weight * integral * eval_legendre(l, c)
        l += 2


def phi_exact(space: Union[Space, FiniteChain], t: float, x: Union[Point, int], y: Union[Point, int]) -> float:
    """
    phi_t(x, y) = P_x[Z_t in X1] - P_y[Z_t in X1] for a reflection pair. Chains take state
    indices and an integer t and use the total variation of P^t rows.
    """
    if isinstance(space, FiniteChain):
        if int(t) != t or t < 0:
            raise DomainError(f"chain time must be a non-negative integer, got {t}")
        return tv_distance(chain_distribution(space, x, int(t)), chain_distribution(space, y, int(t)))
    if not t > 0:
        raise DomainError(f"time must be positive, got {t}")
    if x == y:
        return 0.0
    if isinstance(space, EuclideanSpace):
        r = space.distance(x, y)
        return float(2.0 * stats.norm.cdf(r / (2.0 * math.sqrt(t))) - 1.0)
    if isinstance(space, CircleSpace):
        structure = build_structure(space, x, y)
        return _circle_half_phi(x.coords[0], structure.mirror.center, t)
    if isinstance(space, FlatTorusSpace):
        structure = build_structure(space, x, y)
        mirror = structure.mirror
        return _circle_half_phi(x.coords[mirror.axis], mirror.center, t)
    if isinstance(space, Sphere2Space):
        structure = build_structure(space, x, y)
        c = float(np.dot(x.as_array(), structure.mirror.normal))
        return sphere_hemisphere_phi(c, t)
    raise UnsupportedError(f"no closed-form phi on {space.name}")


def phi_curve(space: Union[Space, FiniteChain], t_grid: Sequence[float], x, y) -> TVCurve:
    method = CurveMethod.EXACT_CHAIN if isinstance(space, FiniteChain) else CurveMethod.EXACT_KERNEL
    return TVCurve(t=np.asarray(t_grid, dtype=float), values=np.array([phi_exact(space, t, x, y) for t in t_grid]),
                   method=method)


# -------------------
# Monte Carlo phi from side counts
# -------------------

def _endpoints(space: Space, start: Point, t: float, trials: int, rng: np.random.Generator,
               n_steps: int, increments: Optional[np.ndarray] = None) -> np.ndarray:
    if isinstance(space, (EuclideanSpace, CircleSpace, FlatTorusSpace)):
        dim = 1 if isinstance(space, CircleSpace) else (2 if isinstance(space, FlatTorusSpace) else space.dim)
        if increments is None:
            increments = rng.standard_normal((trials, dim))
        return bm_endpoints(space, start.as_array(), t, increments)
    if isinstance(space, Sphere2Space):
        return sphere_walk_endpoints(start.as_array(), t, n_steps, trials, rng)
    raise UnsupportedError(f"no endpoint sampler on {space.name}")


def sides_difference(space: Space, structure: ReflectionStructure, a: Point, b: Point, t: float, trials: int,
                     rng: np.random.Generator, n_steps: int = 200) -> Tuple[float, float]:
    """
    Estimate of P_a[Z_t in X1] - P_b[Z_t in X1]. On flat spaces both starts share their
    Gaussian increments, so a == b gives exactly 0.
    """
    if trials < 2:
        raise DomainError("need at least two trials for a standard error")
    shared = None
    if isinstance(space, (EuclideanSpace, CircleSpace, FlatTorusSpace)):
        dim = len(a.coords)
        shared = rng.standard_normal((trials, dim))
    za = _endpoints(space, a, t, trials, rng, n_steps, shared)
    zb = za if (a == b and shared is None) else _endpoints(space, b, t, trials, rng, n_steps, shared)
    in_a = np.array([structure.side(p) == Side.X1 for p in to_points(space, za)], dtype=float)
    in_b = np.array([structure.side(p) == Side.X1 for p in to_points(space, zb)], dtype=float)
    diff = in_a - in_b
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(trials))


def phi_sides_mc(space: Space, structure: ReflectionStructure, t: float, trials: int, rng: np.random.Generator,
                 reuse_reflection: bool = True, n_steps: int = 200) -> Tuple[float, float]:
    """
    phi_t estimate with its standard error. With `reuse_reflection` the law from x2 is
    read off the samples from x1 through R, so one sample set serves both terms.
    """
    if not reuse_reflection:
        return sides_difference(space, structure, structure.x1, structure.x2, t, trials, rng, n_steps)
    z = _endpoints(space, structure.x1, t, trials, rng, n_steps)
    sides = [structure.side(p) for p in to_points(space, z)]
    diff = np.array([(s == Side.X1) - (s == Side.X2) for s in sides], dtype=float)
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(trials))


# -------------------
# Mirror measure and optimality
# -------------------

def measure_pair(chain: FiniteChain, t: int) -> DiscreteMeasurePair:
    return DiscreteMeasurePair(
        mu1=chain_distribution(chain, chain.x1, t),
        mu2=chain_distribution(chain, chain.x2, t),
        sides=chain.sides,
        sym=chain.sym,
    )


def mirror_measure(pair: DiscreteMeasurePair) -> Dict[Tuple[int, int], float]:
    """mu0(i) on (i, i) and (mu1 - mu0)(i) on (i, sigma i)"""
    excess = pair.mu1 - pair.mu0
    violation = max(float(np.max(pair.mu0 - pair.mu1)), float(np.max(pair.mu0 - pair.mu2)))
    if violation > EXACT_TOL:
        raise ConsistencyError(f"mu0 exceeds a marginal by {violation:.3g}")
    weights: Dict[Tuple[int, int], float] = {}
    for i, (w0, w1) in enumerate(zip(pair.mu0, excess)):
        if w0 > 0:
            weights[(i, i)] = weights.get((i, i), 0.0) + float(w0)
        if w1 > 0:
            key = (i, int(pair.sym[i]))
            weights[key] = weights.get(key, 0.0) + float(w1)

    first, second = np.zeros_like(pair.mu1), np.zeros_like(pair.mu2)
    for (i, j), w in weights.items():
        first[i] += w
        second[j] += w
    gap = max(float(np.max(np.abs(first - pair.mu1))), float(np.max(np.abs(second - pair.mu2))))
    if gap > EXACT_TOL:
        raise ConsistencyError(f"mirror measure marginals off by {gap:.3g}")
    return weights


def _tv_matrix(rows: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=2)


def random_coupling(mu1: np.ndarray, mu2: np.ndarray, rng: np.random.Generator, tol: float = 1e-14,
                    max_iter: int = 10000) -> np.ndarray:
    """Random transport plan with marginals (mu1, mu2): iterative proportional scaling of a random positive matrix"""
    plan = rng.random((len(mu1), len(mu2))) + 1e-3
    plan *= np.outer(mu1 > 0, mu2 > 0)
    for _ in range(max_iter):
        rows = plan.sum(axis=1)
        plan *= np.divide(mu1, rows, out=np.zeros_like(mu1), where=rows > 0)[:, None]
        cols = plan.sum(axis=0)
        plan *= np.divide(mu2, cols, out=np.zeros_like(mu2), where=cols > 0)[None, :]
        if np.max(np.abs(plan.sum(axis=1) - mu1)) < tol:
            break
    return plan


def wasser_check(chain: FiniteChain, s: int, t: int, random_couplings: int = 100,
                 rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """
    E over the mirror measure at time t of phi_s(z1, z2), minus phi_{s+t}(x1, x2). Random
    couplings of the time-t laws must never do better than the mirror measure.
    """
    pair = measure_pair(chain, t)
    weights = mirror_measure(pair)
    Ps = np.linalg.matrix_power(chain.P, s)
    phi_s = _tv_matrix(Ps)
    target = phi_exact(chain, s + t, chain.x1, chain.x2)
    mirror_cost = sum(w * phi_s[i, j] for (i, j), w in weights.items())
    worst = math.inf
    if random_couplings:
        rng = rng if rng is not None else np.random.default_rng(0)
        for _ in range(random_couplings):
            plan = random_coupling(pair.mu1, pair.mu2, rng)
            worst = min(worst, float(np.sum(plan * phi_s)) - target)
    return {
        "s": s,
        "t": t,
        "mirror_expectation": float(mirror_cost),
        "phi": target,
        "residual": float(mirror_cost - target),
        "min_random_gap": worst if random_couplings else float("nan"),
    }


# -------------------
# Verdicts
# -------------------

def _check_grid(a: TVCurve, b: TVCurve):
    if a.t.shape != b.t.shape or not np.allclose(a.t, b.t, rtol=0.0, atol=1e-12):
        raise GridMismatchError("survival and phi curves use different time grids")


def maximality_report(survival: TVCurve, phi: TVCurve) -> CheckReport:
    _check_grid(survival, phi)
    exact = survival.exact and phi.exact
    rows = []
    for k, t in enumerate(survival.t):
        diff = float(survival.values[k] - phi.values[k])
        if exact:
            flagged = abs(diff) > EXACT_TOL
        else:
            band = SE_MULTIPLIER * math.hypot(float(survival.se[k]), float(phi.se[k]))
            flagged = abs(diff) > band
        rows.append(ResidualRow(t=float(t), lhs=float(survival.values[k]), rhs=float(phi.values[k]),
                                residual=diff, flagged=flagged))
    return CheckReport(
        check="maximality",
        params={"exact": exact, "points": len(rows)},
        residuals=rows,
        passed=not any(r.flagged for r in rows),
    )


def survival_curve(runs: Sequence[CoupledTrajectory], t_grid: Sequence[float]) -> TVCurve:
    return survival_from_times([r.coupling_time for r in runs], t_grid)


def survival_from_times(coupling_times: Sequence[float], t_grid: Sequence[float]) -> TVCurve:
    """Empirical P[T > t] with binomial standard errors, trials reduced in index order"""
    times = np.asarray(coupling_times, dtype=float)
    n = len(times)
    grid = np.asarray(t_grid, dtype=float)
    p = np.array([(times > t).mean() for t in grid])
    se = np.sqrt(p * (1.0 - p) / max(n, 1))
    return TVCurve(t=grid, values=p, method=CurveMethod.MC_COUPLING, se=se, n=n)


def phi_monotonicity(curve: TVCurve, enforce: bool = False) -> Dict[str, object]:
    """Largest increase of phi along the grid; raises when `enforce` is set and phi increases"""
    steps = np.diff(curve.values)
    increase = float(max(steps.max(initial=0.0), 0.0))
    monotone = increase <= EXACT_TOL
    if enforce and not monotone:
        raise ConsistencyError(f"phi increases by {increase:.3g} along the grid")
    return {"monotone": monotone, "max_increase": increase, "asserted": enforce}


VARADHAN_MIN_T = {"sphere2": 1e-3, "default": 1e-6}
VARADHAN_FINAL_TOL = {"sphere2": 0.10, "default": 0.05}


def varadhan_check(space: Space, x: Point, y: Point, t_list: Sequence[float]) -> CheckReport:
    """-2t log p_t(x, y) against d(x, y)^2 along a decreasing list of times"""
    ts = [float(t) for t in t_list]
    if any(b >= a for a, b in zip(ts, ts[1:])):
        raise DomainError("t_list must be strictly decreasing")
    key = space.name if space.name in VARADHAN_MIN_T else "default"
    if ts[-1] < VARADHAN_MIN_T[key]:
        raise DomainError(f"smallest t on {space.name} must be at least {VARADHAN_MIN_T[key]}")
    d2 = float(space.distance(x, y)) ** 2
    rows = []
    for t in ts:
        value = -2.0 * t * log_heat_kernel(space, t, x, y)
        deviation = abs(value - d2) / d2 if d2 > 0 else abs(value)
        rows.append(ResidualRow(t=t, lhs=value, rhs=d2, residual=deviation))
    deviations = [r.residual for r in rows]
    monotone = all(b <= a + EXACT_TOL for a, b in zip(deviations, deviations[1:]))
    final_ok = deviations[-1] <= VARADHAN_FINAL_TOL[key] or d2 == 0
    for r, ok in zip(rows, [True] + [b <= a + EXACT_TOL for a, b in zip(deviations, deviations[1:])]):
        r.flagged = not ok
    return CheckReport(
        check="varadhan",
        params={"space": space.name, "x": x.label(), "y": y.label(), "d2": d2},
        residuals=rows,
        details={"monotone": monotone, "final_deviation": deviations[-1], "final_tolerance": VARADHAN_FINAL_TOL[key]},
        passed=monotone and final_ok,
    )


KS_MIN_SAMPLES = 100


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value; infinite coupling times share one sentinel value"""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DomainError("KS test needs non-empty samples")
    if a.size < KS_MIN_SAMPLES or b.size < KS_MIN_SAMPLES:
        raise DomainError(f"KS test needs at least {KS_MIN_SAMPLES} samples per side")
    finite = np.concatenate([a[np.isfinite(a)], b[np.isfinite(b)]])
    sentinel = (float(finite.max()) + 1.0) * 2.0 if finite.size else 1.0
    a = np.where(np.isfinite(a), a, sentinel)
    b = np.where(np.isfinite(b), b, sentinel)
    result = stats.ks_2samp(a, b, method="asymp")
    return float(result.statistic), float(result.pvalue)


# -------------------
# Chain reports
# -------------------

def chain_maximality(chain: FiniteChain, t_max: int = 50) -> CheckReport:
    survival = chain_mirror_kernel(chain, t_max).survival
    phi = chain_phi(chain, t_max)
    grid = np.arange(t_max + 1, dtype=float)
    report = maximality_report(TVCurve(grid, survival, CurveMethod.EXACT_CHAIN),
                               TVCurve(grid, phi, CurveMethod.EXACT_CHAIN))
    report.params.update(chain.describe())
    return report


def gasket_subdivision_report(levels: Iterable[int], laziness: float = 0.5, t_max: int = 40) -> List[Dict[str, float]]:
    """max_t |survival - phi| of the mirror coupling per gasket level, with and without axis subdivision"""
    rows = []
    for n in levels:
        row: Dict[str, float] = {"level": n}
        for subdivide in (False, True):
            chain = build_chain(GasketRequest(n=n, axis_subdivision=subdivide, laziness=laziness))
            gap = np.abs(chain_mirror_kernel(chain, t_max).survival - chain_phi(chain, t_max))
            row["subdivided" if subdivide else "plain"] = float(gap.max())
            if not subdivide:
                row["crossing_edges"] = len(chain.crossing_edges)
        rows.append(row)
        logger.info(f"Gasket level {n}: plain gap {row['plain']:.3g}, subdivided gap {row['subdivided']:.3g}")
    return rows


def chain_marginal_residual(kernel, t_max: int) -> float:
    """Largest gap between each component law of the pair chain and the single-walker law"""
    chain = kernel.chain
    laws = joint_laws(kernel, t_max)
    a, b = kernel.pairs[kernel.start][:2]
    rows1, rows2 = chain_distributions(chain, a, t_max), chain_distributions(chain, b, t_max)
    worst = 0.0
    for t in range(t_max + 1):
        first, second = component_laws(kernel, laws[t])
        worst = max(worst, float(np.max(np.abs(first - rows1[t]))), float(np.max(np.abs(second - rows2[t]))))
    return worst


def joint_law_gap(kernel_a, kernel_b, t_max: int) -> Dict[str, float]:
    """Largest difference between two pair-state laws (stage summed out) over t = 0..t_max"""
    laws_a, laws_b = joint_laws(kernel_a, t_max), joint_laws(kernel_b, t_max)
    best = {"gap": 0.0, "t": 0, "pair": None}
    for t in range(t_max + 1):
        ta, tb = pair_table(kernel_a, laws_a[t]), pair_table(kernel_b, laws_b[t])
        for key in set(ta) | set(tb):
            gap = abs(ta.get(key, 0.0) - tb.get(key, 0.0))
            if gap > best["gap"]:
                best = {"gap": gap, "t": t, "pair": [int(key[0]), int(key[1])]}
    return best
