import logging
import math
from typing import Optional, Tuple

import mpmath
import numpy as np
from scipy.special import eval_legendre, logsumexp

from config import GEODESIC_TOL, SPHERE_MIN_T, SPHERE_SERIES_TOL
from errors import DomainError, UnsupportedError
from models.chain_models import FiniteChain
from models.point_models import Point
from models.trajectory_models import Trajectory
from service.spaces_service import (
    CircleSpace,
    EuclideanSpace,
    FlatTorusSpace,
    Manifold,
    Space,
    Sphere2Space,
)

logger = logging.getLogger(__name__)

WRAP_TERMS = 10


# -------------------
# Heat kernels (generator Laplacian / 2)
# -------------------

def _check_time(t: float):
    if not t > 0:
        raise DomainError(f"time must be positive, got {t}")


def _wrap_terms(t: float) -> int:
    # images beyond |n| = WRAP_TERMS only matter once sqrt(t) is comparable to them
    return max(WRAP_TERMS, int(np.ceil(np.sqrt(80.0 * t))) + 1)


def circle_kernel_wrapped(delta: float, t: float) -> float:
    terms = _wrap_terms(t)
    n = np.arange(-terms, terms + 1)
    return float(np.sum(np.exp(-((delta + n) ** 2) / (2.0 * t))) / np.sqrt(2.0 * np.pi * t))


def circle_kernel_eigen(delta: float, t: float) -> float:
    """1 + 2 sum_k exp(-2 pi^2 k^2 t) cos(2 pi k delta), summed until the tail drops below 1e-17"""
    k_max = max(1, int(np.ceil(np.sqrt(40.0 / (2.0 * np.pi ** 2 * t)))))
    k = np.arange(1, k_max + 1)
    return float(1.0 + 2.0 * np.sum(np.exp(-2.0 * np.pi ** 2 * k ** 2 * t) * np.cos(2.0 * np.pi * k * delta)))


def circle_log_kernel(delta: float, t: float) -> float:
    terms = _wrap_terms(t)
    n = np.arange(-terms, terms + 1)
    return float(logsumexp(-((delta + n) ** 2) / (2.0 * t)) - 0.5 * np.log(2.0 * np.pi * t))


def _sphere_l_max(t: float, tol: float) -> int:
    # first l past the peak with (2l+1)/(4 pi) exp(-l(l+1)t/2) < tol
    l = 0
    while True:
        bound = (2 * l + 1) / (4.0 * np.pi) * np.exp(-l * (l + 1) * t / 2.0)
        if bound < tol and l * t >= 1.0:
            return l
        l += 1


def sphere_kernel_series(c: float, t: float, tol: float = SPHERE_SERIES_TOL) -> float:
    """sum_l (2l+1)/(4 pi) exp(-l(l+1)t/2) P_l(c), c = cos d(x, y)"""
    ls = np.arange(_sphere_l_max(t, tol) + 1)
    weights = (2 * ls + 1) / (4.0 * np.pi) * np.exp(-ls * (ls + 1) * t / 2.0)
    return float(np.sum(weights * eval_legendre(ls, np.clip(c, -1.0, 1.0))))


def sphere_log_kernel_mp(c: float, t: float) -> float:
    """
    log p_t on the sphere in extended precision. The series alternates at small t and
    the density sits far below double range, so the working precision grows with
    d^2 / 2t.
    """
    d = math.acos(max(-1.0, min(1.0, c)))
    exponent = d * d / (2.0 * t)
    dps = int(exponent / math.log(10.0)) + 30
    target = exponent + 60.0
    l_max = int(math.ceil(math.sqrt(2.0 * target / t))) + 2
    with mpmath.workdps(dps):
        x = mpmath.mpf(c)
        half_t = mpmath.mpf(t) / 2
        prev, cur = mpmath.mpf(1), x
        total = mpmath.mpf(1) + 3 * mpmath.exp(-2 * half_t) * cur
        for l in range(1, l_max):
            prev, cur = cur, ((2 * l + 1) * x * cur - l * prev) / (l + 1)
            n = l + 1
            total += (2 * n + 1) * mpmath.exp(-n * (n + 1) * half_t) * cur
        if total <= 0:
            raise DomainError(f"sphere series lost precision at t={t}, d={d}")
        return float(mpmath.log(total / (4 * mpmath.pi)))


def heat_kernel(space: Space, t: float, x: Point, y: Point, method: str = "wrapped") -> float:
    """Transition density p_t(x, y); on the circle `method` picks the wrapped or eigen form"""
    _check_time(t)
    space.check(x, y)
    if isinstance(space, EuclideanSpace):
        r2 = float(np.sum((x.as_array() - y.as_array()) ** 2))
        return float((2.0 * np.pi * t) ** (-space.dim / 2.0) * np.exp(-r2 / (2.0 * t)))
    if isinstance(space, CircleSpace):
        delta = x.coords[0] - y.coords[0]
        if method == "eigen":
            return circle_kernel_eigen(delta, t)
        return circle_kernel_wrapped(delta, t)
    if isinstance(space, FlatTorusSpace):
        return float(np.prod([
            circle_kernel_eigen(a - b, t) if method == "eigen" else circle_kernel_wrapped(a - b, t)
            for a, b in zip(x.coords, y.coords)
        ]))
    if isinstance(space, Sphere2Space):
        if t < SPHERE_MIN_T:
            logger.warning(f"Sphere kernel series not evaluated below t={SPHERE_MIN_T} (got {t}); use log_heat_kernel")
            return float("nan")
        return sphere_kernel_series(float(np.dot(x.as_array(), y.as_array())), t)
    raise UnsupportedError(f"no closed-form heat kernel on {space.name}")


def log_heat_kernel(space: Space, t: float, x: Point, y: Point) -> float:
    _check_time(t)
    space.check(x, y)
    if isinstance(space, EuclideanSpace):
        r2 = float(np.sum((x.as_array() - y.as_array()) ** 2))
        return -0.5 * space.dim * np.log(2.0 * np.pi * t) - r2 / (2.0 * t)
    if isinstance(space, CircleSpace):
        return circle_log_kernel(x.coords[0] - y.coords[0], t)
    if isinstance(space, FlatTorusSpace):
        return sum(circle_log_kernel(a - b, t) for a, b in zip(x.coords, y.coords))
    if isinstance(space, Sphere2Space):
        c = float(np.dot(x.as_array(), y.as_array()))
        if t >= 0.05:
            return float(np.log(sphere_kernel_series(c, t)))
        return sphere_log_kernel_mp(c, t)
    raise UnsupportedError(f"no closed-form heat kernel on {space.name}")


# -------------------
# Samplers
# -------------------

def _wrap01(a: np.ndarray) -> np.ndarray:
    a = np.mod(a, 1.0)
    return np.where(a >= 1.0, 0.0, a)


def bm_increment(space: Space, x: Point, dt: float, rng: np.random.Generator) -> Point:
    """Exact Brownian step over time dt on a flat space"""
    _check_time(dt)
    space.check(x)
    if isinstance(space, EuclideanSpace):
        return Point.euclidean(*(x.as_array() + np.sqrt(dt) * rng.standard_normal(space.dim)))
    if isinstance(space, CircleSpace):
        return Point.circle(x.coords[0] + np.sqrt(dt) * rng.standard_normal())
    if isinstance(space, FlatTorusSpace):
        step = x.as_array() + np.sqrt(dt) * rng.standard_normal(2)
        return Point.torus(step[0], step[1])
    raise UnsupportedError(f"no exact Brownian increment on {space.name}; use geodesic_rw_step")


def sample_unit_disk(d: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Uniform draw(s) from the closed unit ball of R^d"""
    shape = (d,) if size is None else (size, d)
    g = rng.standard_normal(shape)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    radius = rng.random(shape[:-1] + (1,)) ** (1.0 / d)
    return g / norms * radius


def geodesic_rw_step(manifold: Space, x: Point, frame: np.ndarray, eps: float, xi: np.ndarray) -> Point:
    if not isinstance(manifold, Manifold):
        raise UnsupportedError(f"{manifold.name} carries no exponential map")
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) > 1.0 + 1e-12:
        raise DomainError(f"xi must lie in the unit disk, |xi| = {np.linalg.norm(xi)}")
    gram = np.array([[manifold.inner(a, b) for b in frame.T] for a in frame.T])
    if np.max(np.abs(gram - np.eye(frame.shape[1]))) > GEODESIC_TOL:
        raise DomainError("frame is not orthonormal")
    scale = eps * np.sqrt(manifold.dim + 2.0)
    return manifold.make_point(manifold.exp_array(x.as_array(), scale * (frame @ xi)))


def poisson_clock(lam: float, t: float, rng: np.random.Generator) -> int:
    if not lam > 0:
        raise DomainError(f"Poisson rate must be positive, got {lam}")
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    return int(rng.poisson(lam * t))


def bridge_crossing_prob(d1: float, d2: float, dt: float) -> float:
    """P[a Brownian bridge over time dt from distance d1 to d2 (same side) touches the barrier]"""
    _check_time(dt)
    if d1 <= 0.0 or d2 <= 0.0:
        return 1.0
    return float(np.exp(-2.0 * d1 * d2 / dt))


def strip_crossing_prob(d1: float, d2: float, width: float, dt: float, period: Optional[float] = None) -> float:
    """
    P[a Brownian bridge over time dt from d1 to d2 inside the strip (0, width) touches
    either wall], by the method of images. With `period` the endpoints are only known
    modulo period (circle coordinates), and the bridge law is the mixture over all lifts
    of the endpoint.
    """
    _check_time(dt)
    if not width > 0:
        raise DomainError(f"strip width must be positive, got {width}")
    if d1 <= 0.0 or d2 <= 0.0 or d1 >= width or d2 >= width:
        return 1.0
    reach = 10.0 * math.sqrt(dt) + (period or 0.0)
    n = np.arange(-int(math.ceil(reach / (2.0 * width))) - 1, int(math.ceil(reach / (2.0 * width))) + 2)
    same = -((d2 - d1 + 2.0 * n * width) ** 2) / (2.0 * dt)
    mirrored = -((d2 + d1 + 2.0 * n * width) ** 2) / (2.0 * dt)
    log_killed, sign = logsumexp(np.concatenate([same, mirrored]),
                                 b=np.concatenate([np.ones(len(n)), -np.ones(len(n))]), return_sign=True)
    if sign <= 0:
        return 1.0
    if period is None:
        log_free = -((d2 - d1) ** 2) / (2.0 * dt)
    else:
        k = np.arange(-int(math.ceil(reach / period)) - 1, int(math.ceil(reach / period)) + 2)
        log_free = logsumexp(-((d2 - d1 + k * period) ** 2) / (2.0 * dt))
    return float(np.clip(1.0 - np.exp(log_killed - log_free), 0.0, 1.0))


# -------------------
# Path samplers
# -------------------

def sample_bm_path(space: Space, x: Point, dt: float, n_steps: int, rng: np.random.Generator,
                   seed: Optional[Tuple[int, int]] = None) -> Trajectory:
    positions = [x]
    for _ in range(n_steps):
        positions.append(bm_increment(space, positions[-1], dt, rng))
    return Trajectory(times=dt * np.arange(n_steps + 1), positions=tuple(positions), dt=dt, seed=seed)


def sample_geodesic_rw_path(manifold: Manifold, x: Point, eps: float, n_steps: int, rng: np.random.Generator,
                            seed: Optional[Tuple[int, int]] = None) -> Trajectory:
    """Geodesic random walk; each step advances time by eps^2"""
    positions = [x]
    for _ in range(n_steps):
        here = positions[-1]
        frame = manifold.frame_array(here.as_array())
        positions.append(geodesic_rw_step(manifold, here, frame, eps, sample_unit_disk(manifold.dim, rng)))
    dt = eps * eps
    return Trajectory(times=dt * np.arange(n_steps + 1), positions=tuple(positions), dt=dt, seed=seed)


def sample_chain_path(chain: FiniteChain, init: int, n_steps: int, rng: np.random.Generator,
                      seed: Optional[Tuple[int, int]] = None) -> Trajectory:
    cumulative = np.cumsum(chain.P, axis=1)
    states = np.empty(n_steps + 1, dtype=np.int64)
    states[0] = init
    draws = rng.random(n_steps)
    for k in range(n_steps):
        row = cumulative[states[k]]
        states[k + 1] = min(int(np.searchsorted(row, draws[k] * row[-1], side="right")), chain.size - 1)
    positions = tuple(chain.states[s] for s in states)
    return Trajectory(times=chain.dt * np.arange(n_steps + 1), positions=positions, dt=chain.dt, seed=seed,
                      states=states)


# -------------------
# Batched endpoints for Monte Carlo estimators
# -------------------

def bm_endpoints(space: Space, x: np.ndarray, t: float, increments: np.ndarray) -> np.ndarray:
    """Endpoint coordinates x + sqrt(t) * increments on a flat space"""
    out = np.asarray(x, dtype=float) + np.sqrt(t) * increments
    if isinstance(space, (CircleSpace, FlatTorusSpace)):
        return _wrap01(out)
    return out


def sphere_walk_endpoints(x: np.ndarray, t: float, n_steps: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Geodesic random walk on the sphere run for `size` walkers at once, total time t.
    Steps use the frame (e, x cross e) with e the projected axis least aligned with x.
    """
    eps = np.sqrt(t / n_steps)
    scale = eps * 2.0
    z = np.tile(np.asarray(x, dtype=float), (size, 1))
    rows = np.arange(size)
    for _ in range(n_steps):
        axis = np.argmin(np.abs(z), axis=1)
        e = np.zeros_like(z)
        e[rows, axis] = 1.0
        e = e - np.sum(e * z, axis=1, keepdims=True) * z
        e = e / np.linalg.norm(e, axis=1, keepdims=True)
        f = np.cross(z, e)
        xi = sample_unit_disk(2, rng, size=size)
        v = scale * (xi[:, :1] * e + xi[:, 1:] * f)
        n = np.linalg.norm(v, axis=1, keepdims=True)
        safe = np.where(n > 0, n, 1.0)
        z = np.cos(n) * z + np.sin(n) * v / safe
        z = z / np.linalg.norm(z, axis=1, keepdims=True)
    return z
