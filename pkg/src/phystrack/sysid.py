"""Parameter identification from tracking data.

The one-step prediction loss simulates each logged transition and compares
the predicted next pose with the logged one under a weighted position +
quaternion metric.  Optimization is a cross-entropy method variant that
refits the sampling mean as a softmax-weighted average over all particles
(negative temperature: lower loss, higher weight), with a constant diagonal
sampling covariance.

The particle sweep shares each transition's contact candidates across all
particles (the geometry residual only shifts gap values), which is what
makes a few hundred thousand one-step simulations per identification run
affordable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import dynamics
from ._solver import step_particles
from .dynamics import (CONTACT_BIN_QUANTUM, PhysicalParams, Pose, SceneConfig,
                       SolverError, Trajectory, Twist, gather_candidates,
                       speculative_margin)
from .geometry import ResidualSdf


class NoFeasibleParticle(RuntimeError):
    """Every particle in a CEM iteration failed to simulate."""


@dataclass
class LossWeights:
    """Scales balancing translation and rotation errors (default 100x position)."""

    position: float = 100.0
    rotation: float = 1.0

    def __post_init__(self):
        if self.position <= 0.0 or self.rotation <= 0.0:
            raise ValueError("loss weights must be positive")


def weighted_pose_error(pos_a, quat_a, pos_b, quat_b, weights: LossWeights):
    """w_pos*||dp||^2 + w_rot*min(||qa-qb||, ||qa+qb||)^2, broadcast over leading axes."""
    dp = np.sum((np.asarray(pos_a) - np.asarray(pos_b)) ** 2, axis=-1)
    qa, qb = np.asarray(quat_a), np.asarray(quat_b)
    dq = np.minimum(np.sum((qa - qb) ** 2, axis=-1), np.sum((qa + qb) ** 2, axis=-1))
    return weights.position * dp + weights.rotation * dq


@dataclass
class TrackingDataset:
    """Logged one-step transitions (q_k, v_k, q_{k+1}) at fixed timestep."""

    positions: np.ndarray
    quaternions: np.ndarray
    linear: np.ndarray
    angular: np.ndarray
    next_positions: np.ndarray
    next_quaternions: np.ndarray
    times: np.ndarray
    source: str = ""
    segments: list = dc_field(default_factory=list)

    def __post_init__(self):
        n = len(self.times)
        if n == 0:
            raise ValueError("tracking dataset is empty")
        for f in ("positions", "quaternions", "linear", "angular",
                  "next_positions", "next_quaternions"):
            if len(getattr(self, f)) != n:
                raise ValueError(f"field {f} length differs from times")
        if not self.segments:
            self.segments = [(0, n)]
        for (a, b) in self.segments:
            t = self.times[a:b]
            if len(t) > 1:
                gaps = np.diff(t)
                if np.any(gaps <= 0):
                    raise ValueError("timestamps must be strictly increasing")
                if np.any(np.abs(gaps - gaps[0]) > 1e-9):
                    raise ValueError("transition spacing must be uniform within a trajectory")

    def __len__(self):
        return len(self.times)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, source: str = "") -> "TrackingDataset":
        return cls(positions=traj.positions[:-1].copy(),
                   quaternions=traj.quaternions[:-1].copy(),
                   linear=traj.linear_velocities[:-1].copy(),
                   angular=traj.angular_velocities[:-1].copy(),
                   next_positions=traj.positions[1:].copy(),
                   next_quaternions=traj.quaternions[1:].copy(),
                   times=traj.times[:-1].copy(),
                   source=source)

    @classmethod
    def concat(cls, datasets, source: str = "") -> "TrackingDataset":
        segs = []
        off = 0
        for d in datasets:
            for (a, b) in d.segments:
                segs.append((a + off, b + off))
            off += len(d)
        return cls(*(np.concatenate([getattr(d, f) for d in datasets])
                     for f in ("positions", "quaternions", "linear", "angular",
                               "next_positions", "next_quaternions", "times")),
                   source=source, segments=segs)

    def transition(self, k: int):
        return (Pose(self.positions[k], self.quaternions[k]),
                Twist(self.linear[k], self.angular[k]),
                Pose(self.next_positions[k], self.next_quaternions[k]),
                float(self.times[k]))


_PARAM_NAMES = ("mass", "inertia_x", "inertia_y", "inertia_z", "friction", "delta")


@dataclass
class CemConfig:
    """Softmax-weighted CEM settings; parameter order is
    (mass, Ix, Iy, Iz, friction, delta)."""

    samples: int = 256
    iterations: int = 30
    temperature: float = -5.0
    stddev: np.ndarray = dc_field(default_factory=lambda: np.array(
        [0.01, 2e-5, 2e-5, 2e-5, 0.05, 0.003]))
    lower: np.ndarray = dc_field(default_factory=lambda: np.array(
        [0.005, 1e-6, 1e-6, 1e-6, 0.0, -0.05]))
    upper: np.ndarray = dc_field(default_factory=lambda: np.array(
        [0.5, 5e-3, 5e-3, 5e-3, 1.5, 0.05]))
    seed: int = 0
    identify_delta: bool = True

    def __post_init__(self):
        self.stddev = np.asarray(self.stddev, dtype=float).reshape(6)
        self.lower = np.asarray(self.lower, dtype=float).reshape(6)
        self.upper = np.asarray(self.upper, dtype=float).reshape(6)
        if self.samples < 2:
            raise ValueError("CEM needs at least 2 samples")
        if self.temperature >= 0.0:
            raise ValueError("temperature must be negative (low loss -> high weight)")
        if np.any(self.stddev <= 0.0):
            raise ValueError("sampling stddev entries must be positive")
        if np.any(self.upper <= self.lower):
            raise ValueError("upper bounds must exceed lower bounds")


def _fix_inertia_triangle(theta: np.ndarray) -> None:
    # Cap each principal moment at the sum of the other two (flat-body limit).
    for _ in range(2):
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            cap = theta[:, 1 + j] + theta[:, 1 + k]
            np.minimum(theta[:, 1 + i], cap, out=theta[:, 1 + i])


def _sample_array(mean_vec: np.ndarray, config: CemConfig,
                  rng: np.random.Generator) -> np.ndarray:
    sigma = config.stddev.copy()
    if not config.identify_delta:
        sigma[5] = 0.0
    theta = mean_vec + sigma * rng.standard_normal((config.samples, 6))
    np.clip(theta, config.lower, config.upper, out=theta)
    _fix_inertia_triangle(theta)
    return theta


def cem_sample(mean: PhysicalParams, config: CemConfig,
               rng: np.random.Generator) -> list[PhysicalParams]:
    """Gaussian perturbations of the mean, clamped to bounds."""
    mean_vec = mean.as_vector()
    if np.any(mean_vec < config.lower - 1e-12) or np.any(mean_vec > config.upper + 1e-12):
        raise ValueError("sampling mean lies outside the configured bounds")
    theta = _sample_array(mean_vec, config, rng)
    return [PhysicalParams.from_vector(v) for v in theta]


def cem_update(particles, losses, gamma: float) -> PhysicalParams:
    """Softmax-weighted average over all particles (min-shifted for stability)."""
    if gamma >= 0.0:
        raise ValueError("gamma must be negative")
    if isinstance(particles[0], PhysicalParams):
        theta = np.stack([p.as_vector() for p in particles])
    else:
        theta = np.asarray(particles, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if len(losses) != len(theta):
        raise ValueError("particles and losses must match in length")
    ok = np.isfinite(losses)
    if not ok.any():
        raise NoFeasibleParticle("all particles have infinite loss")
    theta, losses = theta[ok], losses[ok]
    w = np.exp(gamma * (losses - losses.min()))
    mean = (w[:, None] * theta).sum(axis=0) / w.sum()
    return PhysicalParams.from_vector(mean)


def prediction_loss(params: PhysicalParams, dataset: TrackingDataset,
                    weights: LossWeights, object_sdf, scene: SceneConfig) -> float:
    """One-step prediction loss of the contact dynamics over a dataset.

    ``object_sdf`` is the residual-free base geometry; ``params.residual_delta``
    is wrapped around it here, so the loss is a function of the full
    parameter vector.  Returns +inf if any transition fails to simulate.
    """
    field = ResidualSdf(object_sdf, params.residual_delta)
    total = 0.0
    for k in range(len(dataset)):
        pose, twist, target, t = dataset.transition(k)
        try:
            new_pose, _ = dynamics.step(pose, twist, params, field, scene, None, t)
        except SolverError:
            return math.inf
        total += float(weighted_pose_error(new_pose.position, new_pose.quaternion,
                                           target.position, target.quaternion,
                                           weights))
    return total


@dataclass
class _TransitionCache:
    pose: Pose
    twist: Twist
    target_pos: np.ndarray
    target_quat: np.ndarray
    cand: object


def _prepare_transitions(dataset: TrackingDataset, base_field,
                         scene: SceneConfig, delta_slack: float):
    caches = []
    for k in range(len(dataset)):
        pose, twist, target, t = dataset.transition(k)
        extra = speculative_margin(scene, twist, base_field)
        cand = gather_candidates(pose, base_field, scene, t, extra, delta_slack, twist)
        caches.append(_TransitionCache(pose=pose, twist=twist,
                                       target_pos=target.position,
                                       target_quat=target.quaternion,
                                       cand=cand))
    return caches


class _ParticleEvaluator:
    """Batched one-step loss over particles with shared contact candidates."""

    def __init__(self, dataset: TrackingDataset, base_field, scene: SceneConfig,
                 weights: LossWeights, delta_slack: float):
        self.scene = scene
        self.weights = weights
        self.caches = _prepare_transitions(dataset, base_field, scene, delta_slack)
        self._zero = np.zeros(3)

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        n = theta.shape[0]
        scene = self.scene
        npairs = scene.friction_facets // 2
        m = scene.max_contacts
        order = np.argsort(theta[:, 5], kind="stable")
        mass = np.ascontiguousarray(theta[:, 0])
        inertia = np.ascontiguousarray(theta[:, 1:4])
        mu = np.ascontiguousarray(theta[:, 4])
        delta = np.ascontiguousarray(theta[:, 5])
        out_pos = np.empty((n, 3))
        out_quat = np.empty((n, 4))
        out_vlin = np.empty((n, 3))
        out_wbody = np.empty((n, 3))
        out_nsel = np.zeros(n, np.int64)
        out_sel = np.zeros((n, m), np.int64)
        out_lam = np.zeros((n, m, 1 + npairs))
        out_sweeps = np.zeros(n, np.int64)
        out_conv = np.zeros(n, np.bool_)
        losses = np.zeros(n)
        for c in self.caches:
            step_particles(c.pose.position, c.pose.quaternion,
                           c.twist.linear, c.twist.angular,
                           scene.h, scene.gravity, self._zero, self._zero,
                           c.cand.phi, c.cand.points, c.cand.an, c.cand.bn,
                           c.cand.at, c.cand.bt, c.cand.nvel, c.cand.tvel,
                           c.cand.entity, c.cand.pred, c.cand.pred_order,
                           c.cand.margin_eff, m, CONTACT_BIN_QUANTUM,
                           scene.pgs_tol, scene.pgs_max_sweeps,
                           scene.pgs_relaxation,
                           mass, inertia, mu, delta, order,
                           out_pos, out_quat, out_vlin, out_wbody,
                           out_nsel, out_sel, out_lam, out_sweeps, out_conv)
            losses += weighted_pose_error(out_pos, out_quat,
                                          c.target_pos[None, :],
                                          c.target_quat[None, :], self.weights)
        return losses


@dataclass
class IdentifyResult:
    """Outcome of a CEM identification run."""

    params: PhysicalParams
    history: list
    final_loss: float

    def report(self) -> dict:
        return {
            "iterations": self.history,
            "final": {"params": _params_dict(self.params), "loss": self.final_loss},
        }


def _params_dict(p: PhysicalParams) -> dict:
    return {"mass": p.mass, "inertia": list(p.inertia),
            "friction": p.friction_mu, "delta": p.residual_delta}


def identify(dataset: TrackingDataset, initial_mean: PhysicalParams,
             config: CemConfig, object_sdf, scene: SceneConfig,
             weights: LossWeights | None = None) -> IdentifyResult:
    """Softmax-weighted CEM over the physical parameter vector.

    ``object_sdf`` is the shared base (visual) geometry; each particle's
    residual is wrapped around it during evaluation.  Deterministic under
    ``config.seed``; particle losses are reduced in particle-index order.
    """
    weights = weights or LossWeights()
    mean = initial_mean
    if not config.identify_delta:
        mean = replace_params_delta(mean, 0.0)
    mean_vec = mean.as_vector()
    if np.any(mean_vec < config.lower - 1e-12) or np.any(mean_vec > config.upper + 1e-12):
        raise ValueError("initial mean lies outside the configured bounds")
    delta_slack = float(max(abs(config.lower[5]), abs(config.upper[5])))
    evaluator = _ParticleEvaluator(dataset, object_sdf, scene, weights, delta_slack)
    rng = np.random.default_rng(config.seed)
    history = []
    for j in range(config.iterations):
        theta = _sample_array(mean.as_vector(), config, rng)
        losses = evaluator(theta)
        ok = np.isfinite(losses)
        if not ok.any():
            raise NoFeasibleParticle(f"iteration {j}: all particles infeasible")
        mean = cem_update(theta, losses, config.temperature)
        if not config.identify_delta:
            mean = replace_params_delta(mean, 0.0)
        history.append({
            "iteration": j,
            "mean_params": _params_dict(mean),
            "best_loss": float(np.min(losses[ok])),
            "mean_loss": float(np.mean(losses[ok])),
        })
    final_loss = float(evaluator(mean.as_vector()[None, :])[0])
    return IdentifyResult(params=mean, history=history, final_loss=final_loss)


def replace_params_delta(p: PhysicalParams, delta: float) -> PhysicalParams:
    return PhysicalParams(p.mass, p.inertia, p.friction_mu, delta)
