import logging
import math
from collections import deque
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from config import H_BAND, MIRROR_TOL
from errors import ConsistencyError, DomainError, NonUniqueGeodesicError, UnsupportedError
from models.chain_models import FiniteChain, MirrorSurvival, PairKernel, PairState
from models.graph_models import TopologyTag, eight_topology, star_tree_topology
from models.point_models import Point, TangentVector
from models.structure_models import ReflectionStructure, Side
from models.trajectory_models import CoupledTrajectory, MirrorMapFrame, Trajectory
from service.diffusion_service import bridge_crossing_prob, sample_unit_disk, strip_crossing_prob
from service.reflection_service import build_structure, eight_alternate_structure, star_tree_eta
from service.rng_service import seed_stream
from service.spaces_service import Manifold, MetricGraphSpace, Space

logger = logging.getLogger(__name__)


# -------------------
# Mirror map and frames
# -------------------

def _mirror_array(manifold: Manifold, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    w = manifold.transport_array(x, y, v)
    u = manifold.log_array(y, x)
    uu = manifold.inner(u, u)
    if uu <= 0.0:
        raise DomainError("mirror map needs distinct points")
    return w - 2.0 * manifold.inner(w, u) / uu * u


def mirror_map(manifold: Space, x: Point, y: Point, v: TangentVector) -> TangentVector:
    """Parallel transport x -> y followed by reflection across the normal hyperplane of the geodesic at y"""
    if not isinstance(manifold, Manifold):
        raise UnsupportedError(f"{manifold.name} carries no exponential map")
    manifold.check(x, y)
    if x == y:
        raise DomainError("mirror map needs distinct points")
    return TangentVector(y, _mirror_array(manifold, x.as_array(), y.as_array(), v.components))


def mirror_frame(manifold: Manifold, x: Point, y: Point) -> MirrorMapFrame:
    phi1 = manifold.frame_array(x.as_array())
    phi2 = np.column_stack([
        _mirror_array(manifold, x.as_array(), y.as_array(), phi1[:, k]) for k in range(phi1.shape[1])
    ])
    return MirrorMapFrame(x=x, y=y, phi1=phi1, phi2=phi2)


# -------------------
# Mirror coupling along a sampled path
# -------------------

def _crossed(structure: ReflectionStructure, prev: Point, here: Point, dt: float,
             rng: Optional[np.random.Generator]) -> bool:
    mirror = structure.mirror
    now = mirror.side(here)
    if now == Side.H:
        return True
    if mirror.exact:
        return False
    if now != mirror.side(prev):
        return True
    if rng is None:
        return False
    before, after = mirror.barrier_distances(prev), mirror.barrier_distances(here)
    if mirror.strip is not None:
        width, period = mirror.strip
        hit = strip_crossing_prob(before[0], after[0], width, dt, period=period)
    else:
        hit = bridge_crossing_prob(before[0], after[0], dt)
    return rng.random() < hit


def _mirror_flags(structure: ReflectionStructure, first: Sequence[Point], second: Sequence[Point]) -> np.ndarray:
    space = structure.space
    return np.array([
        float(space.distance(b, structure.reflect(a))) <= MIRROR_TOL for a, b in zip(first, second)
    ], dtype=bool)


def _reflect_until_hit(structure: ReflectionStructure, z1: Trajectory,
                       rng: Optional[np.random.Generator]) -> Tuple[List[Point], float]:
    if float(structure.space.distance(z1.start, structure.x1)) > H_BAND:
        raise DomainError(f"path starts at {z1.start.label()}, not at x1 = {structure.x1.label()}")
    second: List[Point] = []
    T = math.inf
    for k, p in enumerate(z1.positions):
        if math.isinf(T) and k > 0 and _crossed(structure, z1.positions[k - 1], p, z1.dt, rng):
            T = float(z1.times[k])
        second.append(p if z1.times[k] >= T else structure.reflect(p))
    return second, T


def mirror_run(structure: ReflectionStructure, z1: Trajectory,
               rng: Optional[np.random.Generator] = None) -> CoupledTrajectory:
    """
    Z2 = R Z1 until Z1 first meets H, then Z2 = Z1. On continuous spaces a hit between
    two samples is detected from a side change or, when `rng` is given, by Brownian
    bridge thinning against every piece of H.
    """
    second, T = _reflect_until_hit(structure, z1, rng)
    return CoupledTrajectory(
        times=z1.times,
        first=z1.positions,
        second=tuple(second),
        coupling_time=T,
        mirror_flags=_mirror_flags(structure, z1.positions, second),
        label="mirror",
    )


@lru_cache(maxsize=1)
def _eight_space() -> MetricGraphSpace:
    return MetricGraphSpace(eight_topology())


@lru_cache(maxsize=1)
def _tree_space() -> MetricGraphSpace:
    return MetricGraphSpace(star_tree_topology())


def counterexample_eight_run(z1: Trajectory) -> CoupledTrajectory:
    """Z2 = eta R Z1 until Z1 reaches the glue point, Z2 = Z1 afterwards"""
    space = _eight_space()
    alternate = eight_alternate_structure(space)
    standard = build_structure(space, space.vertex("o1"), space.vertex("o2"))
    second, T = _reflect_until_hit(alternate, z1, None)
    return CoupledTrajectory(
        times=z1.times,
        first=z1.positions,
        second=tuple(second),
        coupling_time=T,
        mirror_flags=_mirror_flags(standard, z1.positions, second),
        label="eight",
    )


def counterexample_tree_run(z1: Trajectory) -> CoupledTrajectory:
    """R Z1 before Z1 reaches p1, eta R Z1 until it reaches p0, Z1 afterwards"""
    space = _tree_space()
    structure = build_structure(space, space.vertex("p11"), space.vertex("p22"))
    eta = star_tree_eta(space)
    if z1.start != structure.x1:
        raise DomainError(f"tree path must start at p11, got {z1.start.label()}")
    p1, p0 = space.vertex("p1"), space.vertex("p0")
    stage = 0
    T = math.inf
    second: List[Point] = []
    for k, p in enumerate(z1.positions):
        if stage == 0 and p == p1:
            stage = 1
        if stage < 2 and p == p0:
            stage = 2
            T = float(z1.times[k])
        if stage == 0:
            second.append(structure.reflect(p))
        elif stage == 1:
            second.append(eta.apply(structure.reflect(p)))
        else:
            second.append(p)
    return CoupledTrajectory(
        times=z1.times,
        first=z1.positions,
        second=tuple(second),
        coupling_time=T,
        mirror_flags=_mirror_flags(structure, z1.positions, second),
        label="tree",
    )


def independent_run(z1: Trajectory, z2: Trajectory) -> CoupledTrajectory:
    """Independent components until they first share a chain state; continuous paths never merge"""
    if z1.seed is not None and z1.seed == z2.seed:
        raise DomainError(f"independent coupling needs distinct seeds, both are {z1.seed}")
    if len(z1) != len(z2):
        raise DomainError("paths differ in length")
    T = math.inf
    second = list(z2.positions)
    if z1.states is not None and z2.states is not None:
        meet = np.flatnonzero(z1.states == z2.states)
        if meet.size:
            k = int(meet[0])
            T = float(z1.times[k])
            second[k:] = z1.positions[k:]
    return CoupledTrajectory(times=z1.times, first=z1.positions, second=tuple(second), coupling_time=T,
                             mirror_flags=np.zeros(len(z1), dtype=bool), label="independent")


# -------------------
# Kendall-Cranston coupled geodesic random walk
# -------------------

def kc_run(manifold: Space, x1: Point, x2: Point, eps: float, n_steps: int, rng: np.random.Generator,
           poisson_lambda: Optional[float] = None, noise: Optional[np.ndarray] = None) -> CoupledTrajectory:
    """
    Both walkers share xi_n uniform on the unit disk; the first steps along phi1 xi, the
    second along m_xy phi1 xi. Once the pair is closer than eps sqrt(d + 2) it merges.
    With `poisson_lambda` the n-th step happens at the n-th event of a rate-lambda clock,
    otherwise at time n eps^2. `noise` replaces the sampled xi sequence.
    """
    if not isinstance(manifold, Manifold):
        raise UnsupportedError(f"{manifold.name} carries no exponential map")
    manifold.check(x1, x2)
    if x1 == x2:
        raise DomainError("starting points must differ")
    d = manifold.dim
    scale = eps * math.sqrt(d + 2.0)
    try:
        structure = build_structure(manifold, x1, x2)
    except ConsistencyError:
        structure = None

    if poisson_lambda is not None:
        times = np.concatenate([[0.0], np.cumsum(rng.exponential(1.0 / poisson_lambda, n_steps))])
    else:
        times = eps * eps * np.arange(n_steps + 1)

    a, b = x1.as_array(), x2.as_array()
    first, second = [x1], [x2]
    T = math.inf
    for n in range(n_steps):
        xi = noise[n] if noise is not None else sample_unit_disk(d, rng)
        phi1 = manifold.frame_array(a)
        a_next = manifold.exp_array(a, scale * (phi1 @ xi))
        if math.isinf(T):
            try:
                phi2 = np.column_stack([_mirror_array(manifold, a, b, phi1[:, k]) for k in range(d)])
            except NonUniqueGeodesicError as e:
                raise NonUniqueGeodesicError(f"mirror frame undefined at step {n}: {e}") from e
            b_next = manifold.exp_array(b, scale * (phi2 @ xi))
        else:
            b_next = a_next
        p, q = manifold.make_point(a_next), manifold.make_point(b_next)
        a, b = p.as_array(), q.as_array()
        if math.isinf(T) and manifold.distance(p, q) < scale:
            T = float(times[n + 1])
            b, q = a, p
        first.append(p)
        second.append(q)

    flags = np.zeros(len(first), dtype=bool)
    deviation = 0.0
    if structure is not None:
        flags = _mirror_flags(structure, first, second)
        cut = len(first) if math.isinf(T) else int(np.searchsorted(times, T))
        if cut:
            deviation = max(float(manifold.distance(second[k], structure.reflect(first[k]))) for k in range(cut))
    if math.isfinite(T):
        logger.debug(f"KC pair merged at t={T:.6g} (threshold {scale:.3g})")
    return CoupledTrajectory(times=times, first=tuple(first), second=tuple(second), coupling_time=T,
                             mirror_flags=flags, mirror_deviation=deviation, label="kc")


def kc_eps_schedule(manifold: Manifold, x1: Point, x2: Point, ks: Iterable[int], horizon: float,
                    trials: int, master_seed: int) -> List[Dict[str, float]]:
    """
    KC walks at eps = k^(-1/2) on a rate-k Poisson clock, `trials` runs per k. Reports the
    merge fraction within the horizon, the mean merge time of merged runs and the worst
    mirror deviation, so that stability across eps can be read off.
    """
    rows = []
    for k in ks:
        eps = 1.0 / math.sqrt(k)
        n_steps = int(math.ceil(1.5 * k * horizon)) + 10
        merged, times, deviation = 0, [], 0.0
        for trial in range(trials):
            run = kc_run(manifold, x1, x2, eps, n_steps, seed_stream(master_seed, trial), poisson_lambda=float(k))
            deviation = max(deviation, run.mirror_deviation)
            if run.coupling_time <= horizon:
                merged += 1
                times.append(run.coupling_time)
        rows.append({
            "k": k,
            "eps": eps,
            "merged_fraction": merged / trials,
            "mean_merge_time": float(np.mean(times)) if times else math.inf,
            "max_mirror_deviation": deviation,
        })
        logger.info(f"KC schedule k={k}: merged {merged}/{trials}, max deviation {deviation:.3g}")
    return rows


# -------------------
# Exact pair kernels on chains
# -------------------

Step = Callable[[PairState], List[Tuple[PairState, float]]]


def _build_kernel(name: str, chain: FiniteChain, start: PairState, step: Step, merged_stage: int) -> PairKernel:
    index: Dict[PairState, int] = {start: 0}
    pairs: List[PairState] = [start]
    rows, cols, vals = [], [], []
    queue = deque([start])
    while queue:
        pair = queue.popleft()
        src = index[pair]
        for nxt, prob in step(pair):
            if nxt not in index:
                index[nxt] = len(pairs)
                pairs.append(nxt)
                queue.append(nxt)
            rows.append(src)
            cols.append(index[nxt])
            vals.append(prob)
    size = len(pairs)
    Q = sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))
    merged = np.array([s == merged_stage for _, _, s in pairs], dtype=bool)
    return PairKernel(name=name, chain=chain, pairs=tuple(pairs), index=index, Q=Q, start=0, merged=merged)


def _reflection_step(chain: FiniteChain, sym: np.ndarray, fixed: np.ndarray) -> Step:
    P = chain.P

    def step(pair: PairState) -> List[Tuple[PairState, float]]:
        i, _, stage = pair
        out = []
        for k in chain.neighbours(i):
            if stage == 1 or fixed[k]:
                out.append(((int(k), int(k), 1), P[i, k]))
            else:
                out.append(((int(k), int(sym[k]), 0), P[i, k]))
        return out

    return step


def _state_map(chain: FiniteChain, apply: Callable[[Point], Point]) -> np.ndarray:
    return np.array([chain.state_of(apply(p)) for p in chain.states], dtype=np.int64)


def mirror_pair_kernel(chain: FiniteChain) -> PairKernel:
    return _build_kernel(f"mirror:{chain.name}", chain, (chain.x1, chain.x2, 0),
                         _reflection_step(chain, chain.sym, chain.h_mask), merged_stage=1)


def eight_pair_kernel(chain: FiniteChain) -> PairKernel:
    structure = chain.structure
    if not isinstance(structure.space, MetricGraphSpace) or structure.space.topology.tag != TopologyTag.EIGHT:
        raise UnsupportedError("the eight counterexample needs an EightChain")
    alternate = eight_alternate_structure(structure.space)
    sym = _state_map(chain, alternate.reflect)
    fixed = np.array([alternate.side(p) == Side.H for p in chain.states], dtype=bool)
    return _build_kernel(f"eight:{chain.name}", chain, (chain.x1, chain.x2, 0),
                         _reflection_step(chain, sym, fixed), merged_stage=1)


def tree_pair_kernel(chain: FiniteChain) -> PairKernel:
    structure = chain.structure
    space = structure.space
    if not isinstance(space, MetricGraphSpace) or space.topology.tag != TopologyTag.STAR_TREE:
        raise UnsupportedError("the tree counterexample needs a TreeChain")
    eta = star_tree_eta(space)
    sym = chain.sym
    eta_sym = _state_map(chain, lambda p: eta.apply(structure.reflect(p)))
    p1, p0 = chain.state_of(space.vertex("p1")), chain.state_of(space.vertex("p0"))
    P = chain.P

    def step(pair: PairState) -> List[Tuple[PairState, float]]:
        i, _, stage = pair
        out = []
        for k in chain.neighbours(i):
            k = int(k)
            if stage == 2 or k == p0:
                out.append(((k, k, 2), P[i, k]))
            elif stage == 1 or k == p1:
                out.append(((k, int(eta_sym[k]), 1), P[i, k]))
            else:
                out.append(((k, int(sym[k]), 0), P[i, k]))
        return out

    return _build_kernel(f"tree:{chain.name}", chain, (chain.x1, chain.x2, 0), step, merged_stage=2)


def independent_pair_kernel(chain: FiniteChain, x1: Optional[int] = None, x2: Optional[int] = None) -> PairKernel:
    P = chain.P
    a = chain.x1 if x1 is None else x1
    b = chain.x2 if x2 is None else x2

    def step(pair: PairState) -> List[Tuple[PairState, float]]:
        i, j, stage = pair
        if stage == 1:
            return [((int(k), int(k), 1), P[i, k]) for k in chain.neighbours(i)]
        out = []
        for k in chain.neighbours(i):
            for l in chain.neighbours(j):
                nxt = (int(k), int(k), 1) if k == l else (int(k), int(l), 0)
                out.append((nxt, P[i, k] * P[j, l]))
        return out

    start = (a, a, 1) if a == b else (a, b, 0)
    return _build_kernel(f"independent:{chain.name}", chain, start, step, merged_stage=1)


PAIR_KERNELS: Dict[str, Callable[[FiniteChain], PairKernel]] = {
    "mirror": mirror_pair_kernel,
    "eight": eight_pair_kernel,
    "tree": tree_pair_kernel,
    "independent": independent_pair_kernel,
}


def pair_kernel(coupling: str, chain: FiniteChain) -> PairKernel:
    if coupling not in PAIR_KERNELS:
        raise UnsupportedError(f"no exact pair kernel for coupling '{coupling}'")
    return PAIR_KERNELS[coupling](chain)


def joint_laws(kernel: PairKernel, t_max: int) -> np.ndarray:
    """Distribution over pair states at t = 0..t_max (rows)"""
    out = np.zeros((t_max + 1, kernel.size))
    out[0, kernel.start] = 1.0
    QT = kernel.Q.T.tocsr()
    for t in range(1, t_max + 1):
        out[t] = QT @ out[t - 1]
    return out


def joint_law(kernel: PairKernel, t: int) -> np.ndarray:
    return joint_laws(kernel, t)[-1]


def exact_survival(kernel: PairKernel, t_max: int) -> np.ndarray:
    """P[T > t] for t = 0..t_max"""
    laws = joint_laws(kernel, t_max)
    return laws[:, ~kernel.merged].sum(axis=1)


def pair_table(kernel: PairKernel, law: np.ndarray) -> Dict[Tuple[int, int], float]:
    """Pair-state law with the stage label summed out"""
    table: Dict[Tuple[int, int], float] = {}
    for (i, j, _), w in zip(kernel.pairs, law):
        if w:
            table[(i, j)] = table.get((i, j), 0.0) + float(w)
    return table


def component_laws(kernel: PairKernel, law: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = kernel.chain.size
    first, second = np.zeros(n), np.zeros(n)
    for (i, j, _), w in zip(kernel.pairs, law):
        first[i] += w
        second[j] += w
    return first, second


def markov_contract_residual(kernel: PairKernel) -> float:
    """
    Largest deviation, over every reachable pair state (i, j), between the marginals of
    the one-step joint kernel and the rows P[i], P[j].
    """
    P = kernel.chain.P
    Q = kernel.Q
    worst = 0.0
    for src, (i, j, _) in enumerate(kernel.pairs):
        row = Q.getrow(src)
        first, second = np.zeros(P.shape[0]), np.zeros(P.shape[0])
        for dst, w in zip(row.indices, row.data):
            a, b, _ = kernel.pairs[dst]
            first[a] += w
            second[b] += w
        worst = max(worst, float(np.max(np.abs(first - P[i]))), float(np.max(np.abs(second - P[j]))))
    return worst


def chain_mirror_kernel(chain: FiniteChain, t_max: int = 50) -> MirrorSurvival:
    """P[tau > t] for the walk from x1, tau the first visit to H, from the block of P off H"""
    keep = np.flatnonzero(~chain.h_mask)
    sub = chain.P[np.ix_(keep, keep)]
    position = {int(s): k for k, s in enumerate(keep)}
    v = np.zeros(len(keep))
    v[position[chain.x1]] = 1.0
    survival = np.empty(t_max + 1)
    for t in range(t_max + 1):
        survival[t] = v.sum()
        v = v @ sub
    return MirrorSurvival(states=keep, sub_matrix=sub, survival=survival)


def chain_path_coupling(coupling: str, chain: FiniteChain, z1: Trajectory,
                        z2: Optional[Trajectory] = None) -> CoupledTrajectory:
    """Dispatch a sampled chain path to the named runner"""
    if coupling == "mirror":
        return mirror_run(chain.structure, z1)
    if coupling == "eight":
        return counterexample_eight_run(z1)
    if coupling == "tree":
        return counterexample_tree_run(z1)
    if coupling == "independent":
        if z2 is None:
            raise DomainError("independent coupling needs a second path")
        return independent_run(z1, z2)
    raise UnsupportedError(f"unknown coupling '{coupling}'")
