"""Path sampling with the navigation-map driven dynamic Bayesian network.

One step from state ``(P_k, Omega_k, Theta_k)``:

1. read the statistics of the patch holding ``P_k``;
2. re-weight its histogram of directions by angular similarity to the
   current heading (:func:`direction_weights`);
3. reshape the result with the patch routing score (:func:`routing_transform`);
4. draw a direction index; the stop symbol sets the speed to zero and keeps
   the heading, any other index sets the heading to that compass direction
   and draws the speed from the matching Gamma model;
5. move: ``P_{k+1} = P_k + Omega_{k+1} (cos Theta_{k+1}, sin Theta_{k+1}) + w``
   with ``w ~ N(0, sigma^2 I)``.

Every random quantity of a step comes from four uniforms, so a path is a
deterministic function of its ``(steps, 4)`` block of uniforms. Paths in a
batch use independent streams keyed by ``(seed, sample index)``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaincinv, ndtri

from .navmap import DIRECTION_ANGLES, DIRECTION_VECTORS, N_DIRECTIONS, STOP, NavigationMap
from .scene import OutOfSceneError, PatchGrid
from .utils import ValidationError, atomic_write_text, derive_rng

TWO_PI = 2.0 * math.pi
STRATEGIES = ("closest-to-goal", "max-popularity", "mean-top-10")
TERMINATIONS = ("goal-reached", "out-of-scene", "max-steps", "unobserved-patch")
_TINY_U = 1e-300
_PATH_STREAM = "dbn-path"
# large enough that a capped transform of (0.1, 0.3, 0.6) puts >= 0.999 on 0.6
DEFAULT_ALPHA_CAP = 64.0


@dataclass(frozen=True)
class TargetState:
    """Position in world units and polar velocity (speed per frame, heading)."""

    x: float
    y: float
    omega: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        if self.omega < 0:
            raise ValidationError(f"speed must be non-negative, got {self.omega}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    @property
    def position(self) -> tuple[float, float]:
        return self.x, self.y

    @classmethod
    def from_positions(cls, p0: Sequence[float], p1: Sequence[float], frames: float = 1.0) -> TargetState:
        """State at ``p0`` whose velocity is the displacement to ``p1``."""
        dx, dy = (p1[0] - p0[0]) / frames, (p1[1] - p0[1]) / frames
        return cls(float(p0[0]), float(p0[1]), math.hypot(dx, dy), math.atan2(dy, dx))


@dataclass(frozen=True)
class PredictorConfig:
    sigma: float = 0.1
    lam: float = 1.0
    t_max: int = 500
    goal_radius: float | None = None  # None: one patch side
    alpha_cap: float = DEFAULT_ALPHA_CAP
    seed: int = 0
    num_samples: int = 100
    strategy: str = "closest-to-goal"
    stop_distance: float = math.pi
    unobserved: str = "continue"
    delta: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma < 0 or self.lam < 0:
            raise ValidationError("sigma and lam must be non-negative")
        if self.t_max < 1 or self.num_samples < 1:
            raise ValidationError("t_max and num_samples must be at least 1")
        if not self.alpha_cap > 0:
            raise ValidationError("alpha_cap must be positive")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}; expected one of {', '.join(STRATEGIES)}")
        if self.unobserved not in ("continue", "terminate"):
            raise ValidationError("unobserved must be 'continue' or 'terminate'")
        if self.delta != 1.0:
            raise ValidationError("the sampling time is fixed to 1 frame")

    def radius_for(self, grid: PatchGrid) -> float:
        return grid.patch_side if self.goal_radius is None else self.goal_radius


@dataclass(eq=False)
class PredictedPath:
    """Sampled future states ``X_1 .. X_T`` (the initial state is not included)."""

    positions: np.ndarray
    velocities: np.ndarray
    score: float
    termination: str
    fallback_steps: int = 0
    sample_id: int | None = None

    @property
    def states(self) -> list[TargetState]:
        return [TargetState(x, y, om, th) for (x, y), (om, th) in zip(self.positions, self.velocities)]

    def __len__(self) -> int:
        return len(self.positions)

    def final_point(self, start: TargetState) -> np.ndarray:
        return self.positions[-1] if len(self.positions) else np.array(start.position)

    def with_start(self, start: TargetState) -> np.ndarray:
        """Positions including the initial state, shape ``(T + 1, 2)``."""
        return np.vstack([np.array([start.position]), self.positions])


@dataclass(eq=False)
class Prediction:
    selected: PredictedPath
    samples: list[PredictedPath] = field(default_factory=list)


# ------------------------------------------------------------ distributions

def angular_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Wrapped absolute angle difference in ``[0, pi]``."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % TWO_PI
    return np.minimum(d, TWO_PI - d)


def _direction_weights(theta: np.ndarray, hod: np.ndarray, lam: float, stop_distance: float) -> np.ndarray:
    dist = angular_distance(theta[:, None], DIRECTION_ANGLES[None, :])
    dist[:, STOP] = stop_distance
    w = hod * np.exp(-lam * dist)
    return w / w.sum(axis=1, keepdims=True)


def direction_weights(theta_k: float, hod: Sequence[float], lam: float, stop_distance: float = math.pi) -> np.ndarray:
    """Histogram of directions re-weighted by similarity to heading ``theta_k``.

    ``p_i exp(-lam d_i)`` normalised, with ``d_i`` the wrapped angular distance
    to direction ``i`` and a fixed pseudo-distance for the stop symbol.
    """
    hod = np.asarray(hod, dtype=float)
    if hod.shape != (N_DIRECTIONS + 1,):
        raise ValueError(f"hod must have {N_DIRECTIONS + 1} entries")
    if not hod.sum() > 0:
        raise ValueError("hod has no probability mass")
    return _direction_weights(np.array([float(theta_k)]), hod[None, :], lam, stop_distance)[0]


def routing_alpha(xi: np.ndarray, alpha_cap: float) -> np.ndarray:
    """Exponent ``(1 - xi) / xi`` clipped to ``alpha_cap`` (and to the cap at ``xi = 0``)."""
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        alpha = np.where(xi > 0, (1.0 - xi) / np.where(xi > 0, xi, 1.0), np.inf)
    return np.minimum(alpha, alpha_cap)


def _routing_transform(pf: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    support = pf > 0
    single = support.sum(axis=1) == 1
    out = np.zeros_like(pf)
    if single.any():
        out[single] = support[single].astype(float)
    multi = ~single
    if multi.any():
        p = pf[multi]
        sup = support[multi]
        with np.errstate(divide="ignore"):
            term = np.where(sup, np.log(np.where(sup, p, 1.0)) + np.log1p(-p), -np.inf)
        logw = np.where(sup, alpha[multi, None] * np.where(sup, term, 0.0), -np.inf)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        out[multi] = w / w.sum(axis=1, keepdims=True)
    return out


def routing_transform(pf: Sequence[float], xi: float, alpha_cap: float = DEFAULT_ALPHA_CAP) -> np.ndarray:
    """Reshape ``pf`` with the routing score: ``pf^a (1 - pf)^a`` renormalised.

    ``a = (1 - xi) / xi`` capped at ``alpha_cap``; ``xi = 1`` gives the uniform
    distribution over the support of ``pf``. Zero entries stay zero.
    """
    pf = np.asarray(pf, dtype=float)
    if pf.ndim != 1 or np.any(pf < 0) or not pf.sum() > 0:
        raise ValueError("pf must be a non-negative vector with positive mass")
    pf = pf / pf.sum()
    return _routing_transform(pf[None, :], routing_alpha(np.array([xi]), alpha_cap))[0]


# ------------------------------------------------------------ sampling kernel

def _advance(
    pos: np.ndarray, omega: np.ndarray, theta: np.ndarray, u: np.ndarray, navmap: NavigationMap, cfg: PredictorConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One DBN step for a batch of in-scene states. ``u`` has shape ``(S, 4)``.

    Returns new positions, speeds, headings and a mask of fallback steps
    taken on unobserved patches.
    """
    patch = navmap.grid.locate(pos)
    observed = navmap.observed[patch]
    new_omega = np.array(omega, dtype=float)
    new_theta = np.array(theta, dtype=float)
    step_vec = np.column_stack([np.cos(theta), np.sin(theta)])

    obs = np.flatnonzero(observed)
    if obs.size:
        pidx = patch[obs]
        pf = _direction_weights(theta[obs], navmap.hod[pidx], cfg.lam, cfg.stop_distance)
        pt = _routing_transform(pf, routing_alpha(navmap.xi[pidx], cfg.alpha_cap))
        cdf = np.cumsum(pt, axis=1)
        target = u[obs, 0] * cdf[:, -1]
        choice = (cdf <= target[:, None]).sum(axis=1)
        last_pos = N_DIRECTIONS - np.argmax((pt > 0)[:, ::-1], axis=1)
        choice = np.minimum(choice, last_pos)

        moving = choice != STOP
        mv = obs[moving]
        col = choice[moving] - 1
        mu = navmap.speed_mu[patch[mv], col]
        sd = navmap.speed_sigma[patch[mv], col]
        fitted = mu > 0
        speed = omega[mv].copy()
        if fitted.any():
            m, s = mu[fitted], sd[fitted]
            shape, scale = m * m / (s * s), s * s / m
            uu = np.clip(u[mv[fitted], 1], _TINY_U, 1.0)
            draw = gammaincinv(shape, uu) * scale
            speed[fitted] = np.maximum(draw, np.finfo(float).tiny)
        new_omega[mv] = speed
        new_theta[mv] = DIRECTION_ANGLES[choice[moving]]
        step_vec[mv] = DIRECTION_VECTORS[choice[moving]]

        stopped = obs[~moving]
        new_omega[stopped] = 0.0

    new_pos = pos + new_omega[:, None] * step_vec
    if cfg.sigma > 0:
        z = ndtri(np.clip(u[:, 2:4], _TINY_U, 1.0 - 1e-16))
        new_pos = new_pos + cfg.sigma * z
    return new_pos, new_omega, new_theta, ~observed


def sample_step(state: TargetState, navmap: NavigationMap, cfg: PredictorConfig, rng: np.random.Generator) -> TargetState:
    """Draw the next state from ``state``; consumes four uniforms from ``rng``."""
    pos = np.array([state.position], dtype=float)
    if navmap.grid.locate(pos)[0] < 0:
        raise OutOfSceneError(f"state {state.position} is outside the scene")
    u = rng.random((1, 4))
    p, om, th, _ = _advance(pos, np.array([state.omega]), np.array([state.theta]), u, navmap, cfg)
    return TargetState(float(p[0, 0]), float(p[0, 1]), float(om[0]), float(th[0]))


def _path_score(navmap: NavigationMap, positions: np.ndarray, start: TargetState) -> float:
    pts = positions if len(positions) else np.array([start.position])
    idx = navmap.grid.locate(pts)
    rho = np.where(idx >= 0, navmap.rho[np.maximum(idx, 0)], 0.0)
    return float(rho.mean())


def _run_paths(
    starts: Sequence[TargetState],
    goal: Sequence[float] | None,
    navmap: NavigationMap,
    cfg: PredictorConfig,
    uniforms: np.ndarray,
    sample_ids: Sequence[int | None],
) -> list[PredictedPath]:
    """Advance a batch of paths in lockstep; path ``i`` reads ``uniforms[i]``."""
    grid = navmap.grid
    n, t_max = uniforms.shape[0], uniforms.shape[1]
    pos = np.array([s.position for s in starts], dtype=float).reshape(n, 2)
    omega = np.array([s.omega for s in starts], dtype=float)
    theta = np.array([s.theta for s in starts], dtype=float)
    outside = grid.locate(pos) < 0
    if outside.any():
        bad = starts[int(np.argmax(outside))]
        raise OutOfSceneError(f"initial state {bad.position} is outside the scene")
    goal_arr = None if goal is None else np.asarray(goal, dtype=float)
    radius = cfg.radius_for(grid)

    out_pos = np.zeros((n, t_max, 2))
    out_vel = np.zeros((n, t_max, 2))
    length = np.zeros(n, dtype=np.int64)
    term = np.full(n, -1, dtype=np.int64)
    fallbacks = np.zeros(n, dtype=np.int64)
    if goal_arr is not None:
        term[np.hypot(pos[:, 0] - goal_arr[0], pos[:, 1] - goal_arr[1]) <= radius] = 0

    for k in range(t_max):
        act = np.flatnonzero(term < 0)
        if act.size == 0:
            break
        if cfg.unobserved == "terminate":
            unobs = ~navmap.observed[grid.locate(pos[act])]
            term[act[unobs]] = 3
            act = act[~unobs]
            if act.size == 0:
                break
        p, om, th, fb = _advance(pos[act], omega[act], theta[act], uniforms[act, k], navmap, cfg)
        fallbacks[act] += fb
        inside = grid.contains(p)
        term[act[~inside]] = 1
        keep = act[inside]
        p, om, th = p[inside], om[inside], th[inside]
        pos[keep], omega[keep], theta[keep] = p, om, th
        out_pos[keep, k] = p
        out_vel[keep, k, 0] = om
        out_vel[keep, k, 1] = th
        length[keep] = k + 1
        if goal_arr is not None:
            reached = np.hypot(p[:, 0] - goal_arr[0], p[:, 1] - goal_arr[1]) <= radius
            term[keep[reached]] = 0
    term[term < 0] = 2

    paths = []
    for i in range(n):
        positions = out_pos[i, : length[i]].copy()
        paths.append(
            PredictedPath(
                positions,
                out_vel[i, : length[i]].copy(),
                _path_score(navmap, positions, starts[i]),
                TERMINATIONS[term[i]],
                int(fallbacks[i]),
                sample_ids[i],
            )
        )
    return paths


def run_batch(
    starts: Sequence[TargetState],
    goal: Sequence[float] | None,
    navmap: NavigationMap,
    cfg: PredictorConfig,
    uniforms: np.ndarray,
) -> list[PredictedPath]:
    """Sample one path per start state; ``uniforms`` has shape ``(n, steps, 4)``."""
    uniforms = np.asarray(uniforms, dtype=float)
    if uniforms.ndim != 3 or uniforms.shape[0] != len(starts) or uniforms.shape[2] != 4:
        raise ValueError("uniforms must have shape (len(starts), steps, 4)")
    return _run_paths(list(starts), goal, navmap, cfg, uniforms, list(range(len(starts))))


def sample_path(
    x0: TargetState,
    goal: Sequence[float] | None,
    navmap: NavigationMap,
    cfg: PredictorConfig,
    rng: np.random.Generator,
) -> PredictedPath:
    """Sample one path until the goal, the scene border or ``cfg.t_max`` steps.

    Draws a ``(t_max, 4)`` block of uniforms from ``rng`` up front.
    """
    u = rng.random((cfg.t_max, 4))
    return _run_paths([x0], goal, navmap, cfg, u[None], [None])[0]


def path_uniforms(seed: int, sample_id: int, t_max: int) -> np.ndarray:
    return derive_rng(seed, _PATH_STREAM, sample_id).random((t_max, 4))


def sample_paths(
    x0: TargetState, goal: Sequence[float] | None, navmap: NavigationMap, cfg: PredictorConfig
) -> list[PredictedPath]:
    """``cfg.num_samples`` independent paths, sample ``i`` driven by stream ``(seed, i)``."""
    ids = list(range(cfg.num_samples))
    u = np.stack([path_uniforms(cfg.seed, i, cfg.t_max) for i in ids])
    return _run_paths([x0] * len(ids), goal, navmap, cfg, u, ids)


def select_path(
    paths: Sequence[PredictedPath], x0: TargetState, goal: Sequence[float] | None, strategy: str, navmap: NavigationMap
) -> PredictedPath:
    """Pick (or, for ``mean-top-10``, build) the preferred path.

    Without a goal, ``closest-to-goal`` behaves like ``max-popularity``.
    Ties resolve to the lowest sample position in ``paths``.
    """
    if not paths:
        raise ValueError("no paths to select from")
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    scores = np.array([p.score for p in paths])
    if strategy == "closest-to-goal" and goal is not None:
        g = np.asarray(goal, dtype=float)
        dists = np.array([np.hypot(*(p.final_point(x0) - g)) for p in paths])
        return paths[int(np.argmin(dists))]
    if strategy in ("max-popularity", "closest-to-goal"):
        return paths[int(np.argmax(scores))]

    order = sorted(range(len(paths)), key=lambda i: (-scores[i], i))[:10]
    top = [paths[i] for i in order]
    if len(top) == 1:
        return top[0]
    n = min(len(p) for p in top)
    mean_pos = np.mean([p.positions[:n] for p in top], axis=0).reshape(n, 2)
    prev = np.vstack([np.array([x0.position]), mean_pos[:-1]]) if n else np.zeros((0, 2))
    d = mean_pos - prev
    vel = np.column_stack([np.hypot(d[:, 0], d[:, 1]), np.arctan2(d[:, 1], d[:, 0]) % TWO_PI])
    return PredictedPath(
        mean_pos,
        vel,
        _path_score(navmap, mean_pos, x0),
        top[0].termination,
        sum(p.fallback_steps for p in top),
        None,
    )


def predict(
    x0: TargetState, goal: Sequence[float] | None, navmap: NavigationMap, cfg: PredictorConfig | None = None
) -> Prediction:
    """Sample ``cfg.num_samples`` paths and select one by ``cfg.strategy``."""
    cfg = cfg or PredictorConfig()
    paths = sample_paths(x0, goal, navmap, cfg)
    return Prediction(select_path(paths, x0, goal, cfg.strategy, navmap), paths)


def linear_baseline(
    x0: TargetState,
    steps: int,
    grid: PatchGrid | None = None,
    goal: Sequence[float] | None = None,
    goal_radius: float | None = None,
    navmap: NavigationMap | None = None,
) -> PredictedPath:
    """Constant-velocity extrapolation of ``x0`` for ``steps`` frames, noise free.

    With a ``grid`` the path stops when it leaves the scene; with a ``goal`` it
    stops once within ``goal_radius`` (default one patch side) of it.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    k = np.arange(1, steps + 1, dtype=float)[:, None]
    vec = np.array([math.cos(x0.theta), math.sin(x0.theta)])
    positions = np.array(x0.position) + x0.omega * k * vec
    termination = "max-steps"
    start = np.array(x0.position, dtype=float)
    if grid is not None:
        radius = grid.patch_side if goal_radius is None else goal_radius
    else:
        radius = 0.0 if goal_radius is None else goal_radius
    if goal is not None and np.hypot(*(start - np.asarray(goal))) <= radius:
        positions, termination = positions[:0], "goal-reached"
    cut = len(positions)
    if grid is not None:
        outside = np.flatnonzero(~grid.contains(positions))
        if outside.size:
            cut, termination = int(outside[0]), "out-of-scene"
    if goal is not None:
        reached = np.flatnonzero(np.hypot(*(positions - np.asarray(goal, dtype=float)).T) <= radius)
        if reached.size and reached[0] < cut:
            cut, termination = int(reached[0]) + 1, "goal-reached"
    positions = positions[:cut]
    vel = np.tile([x0.omega, x0.theta], (len(positions), 1))
    score = _path_score(navmap, positions, x0) if navmap is not None else 0.0
    return PredictedPath(positions, vel, score, termination)


# ------------------------------------------------------------ export

PATHS_HEADER = "sample_id,step,x,y,omega,theta,score,termination"


def format_paths_csv(prediction: Prediction) -> str:
    """CSV of the selected path (``sample_id`` = ``selected``) then every sample.

    ``step`` counts from 1; the initial state is not repeated.
    """
    lines = [PATHS_HEADER]

    def emit(label: str, path: PredictedPath) -> None:
        for step, ((x, y), (om, th)) in enumerate(zip(path.positions, path.velocities), start=1):
            row = (float(x), float(y), float(om), float(th), float(path.score))
            lines.append(f"{label},{step}," + ",".join(map(repr, row)) + f",{path.termination}")

    emit("selected", prediction.selected)
    for i, path in enumerate(prediction.samples):
        emit(str(path.sample_id if path.sample_id is not None else i), path)
    return "\n".join(lines) + "\n"


def write_paths_csv(path: str | os.PathLike, prediction: Prediction) -> None:
    atomic_write_text(path, format_paths_csv(prediction))
