"""Rigid-body contact dynamics with SDF collision queries.

One object interacts with kinematic scene entities (half-planes, moving
spheres).  Contacts come from querying the object's collision SDF at surface
points sampled on the entities; impulses solve a velocity-level
complementarity problem (inelastic normal, pyramid friction) by projected
Gauss-Seidel; integration is semi-implicit Euler with exact quaternion
exponential.  Steps are pure functions: identical inputs give bit-identical
outputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import geometry, se3
from ._solver import dedup_candidates, pgs_solve, select_contacts, step_particles
from .geometry import DEFAULT_DELTA_BOUND, ResidualSdf

CONTACT_BIN_QUANTUM = 0.001


class SolverError(RuntimeError):
    """Contact solve rejected (invalid mass matrix or inputs)."""


@dataclass
class Pose:
    """Rigid transform: world position and unit quaternion (w, x, y, z)."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(self.position).all() or not np.isfinite(q).all():
            raise ValueError("pose components must be finite")
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        self.quaternion = se3.quat_canonical(q / n)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), se3.QUAT_IDENTITY.copy())

    def rotation_matrix(self) -> np.ndarray:
        return se3.quat_to_matrix(self.quaternion)

    def transform(self, pts: np.ndarray) -> np.ndarray:
        """Body -> world."""
        return np.asarray(pts) @ self.rotation_matrix().T + self.position

    def inverse_transform(self, pts: np.ndarray) -> np.ndarray:
        """World -> body."""
        return (np.asarray(pts) - self.position) @ self.rotation_matrix()

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.quaternion])

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.quaternion.copy())


@dataclass
class Twist:
    """World-frame linear velocity and body-frame angular velocity."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float).reshape(3).copy()
        self.angular = np.asarray(self.angular, dtype=float).reshape(3).copy()
        if not (np.isfinite(self.linear).all() and np.isfinite(self.angular).all()):
            raise ValueError("twist components must be finite")

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    def copy(self) -> "Twist":
        return Twist(self.linear.copy(), self.angular.copy())


@dataclass
class PhysicalParams:
    """Identifiable physical parameters: mass, diagonal inertia, friction, residual."""

    mass: float
    inertia: np.ndarray
    friction_mu: float
    residual_delta: float = 0.0

    def __post_init__(self):
        self.mass = float(self.mass)
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3).copy()
        self.friction_mu = float(self.friction_mu)
        self.residual_delta = float(self.residual_delta)
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if np.any(self.inertia <= 0.0):
            raise ValueError(f"inertia must be positive, got {self.inertia}")
        ix, iy, iz = self.inertia
        if ix + iy < iz - 1e-12 or iy + iz < ix - 1e-12 or iz + ix < iy - 1e-12:
            raise ValueError(f"inertia violates triangle inequality: {self.inertia}")
        if self.friction_mu < 0.0:
            raise ValueError("friction coefficient must be non-negative")

    def as_vector(self) -> np.ndarray:
        return np.array([self.mass, *self.inertia, self.friction_mu,
                         self.residual_delta])

    @classmethod
    def from_vector(cls, v) -> "PhysicalParams":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1:4], v[4], v[5])

    def mass_matrix(self) -> np.ndarray:
        return np.diag([self.mass, self.mass, self.mass, *self.inertia])


def box_inertia(mass: float, half_extents) -> np.ndarray:
    """Diagonal inertia of a solid box about its center."""
    hx, hy, hz = np.asarray(half_extents, dtype=float)
    return (mass / 3.0) * np.array([hy * hy + hz * hz,
                                    hx * hx + hz * hz,
                                    hx * hx + hy * hy])


@dataclass
class HalfPlane:
    """Static half-space solid; the unit normal points out of the material."""

    normal: np.ndarray
    offset: float
    name: str = "plane"

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(self.offset)

    def surface_points(self, spacing, region, t):
        return geometry.sample_plane_surface(self.normal, self.offset, spacing, region)

    def velocity(self, t: float) -> np.ndarray:
        return np.zeros(3)


@dataclass
class MovingSphere:
    """Kinematic sphere following a sinusoidal position schedule.

    center(t) = base + amplitude * sin(2*pi*frequency*t + phase), per axis.
    Infinite effective mass: it imparts impulses but never reacts.
    """

    radius: float
    base: np.ndarray
    amplitude: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    frequency: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    phase: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    name: str = "sphere"

    def __post_init__(self):
        self.radius = float(self.radius)
        self.base = np.asarray(self.base, dtype=float).reshape(3)
        self.amplitude = np.asarray(self.amplitude, dtype=float).reshape(3)
        self.frequency = np.asarray(self.frequency, dtype=float).reshape(3)
        self.phase = np.asarray(self.phase, dtype=float).reshape(3)

    def center(self, t: float) -> np.ndarray:
        return self.base + self.amplitude * np.sin(2.0 * np.pi * self.frequency * t + self.phase)

    def velocity(self, t: float) -> np.ndarray:
        w = 2.0 * np.pi * self.frequency
        return self.amplitude * w * np.cos(w * t + self.phase)

    def surface_points(self, spacing, region, t):
        return geometry.sample_sphere_surface(self.center(t), self.radius, spacing, region)


@dataclass
class SceneConfig:
    """Scene description: gravity, contactor entities, stepping and solver knobs."""

    gravity: np.ndarray = dc_field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    entities: list = dc_field(default_factory=list)
    h: float = 0.01
    margin: float = 0.005
    friction_facets: int = 4
    sample_spacing: float = 0.005
    max_contacts: int = 32
    merge_distance: float = 0.001
    pgs_tol: float = 1e-8
    pgs_max_sweeps: int = 200
    pgs_relaxation: float = 0.8
    speculative: bool = True

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        if not (0.0 < self.h <= 0.02):
            raise ValueError(f"timestep h must be in (0, 0.02], got {self.h}")
        if self.margin <= 0.0:
            raise ValueError("contact margin must be positive")
        if self.friction_facets < 4 or self.friction_facets % 2:
            raise ValueError("friction_facets must be an even count >= 4")


@dataclass
class Contact:
    """One contact constraint: environment sample point vs object surface."""

    point: np.ndarray
    normal: np.ndarray           # unit, pointing from the environment into the object
    gap: float
    entity: str
    entity_velocity: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))


@dataclass
class _CandidateArrays:
    phi: np.ndarray
    points: np.ndarray
    body_points: np.ndarray
    an: np.ndarray
    bn: np.ndarray
    at: np.ndarray
    bt: np.ndarray
    nvel: np.ndarray
    tvel: np.ndarray
    entity: np.ndarray
    entity_vel: np.ndarray
    pred: np.ndarray
    pred_order: np.ndarray
    margin_eff: float

    def __len__(self):
        return len(self.phi)


def split_residual(field) -> tuple:
    """Collision field -> (base field, constant residual)."""
    if isinstance(field, ResidualSdf):
        return field.base, field.delta
    return field, 0.0


def _empty_candidates(margin_eff: float, npairs: int) -> _CandidateArrays:
    return _CandidateArrays(
        phi=np.zeros(0), points=np.zeros((0, 3)), body_points=np.zeros((0, 3)),
        an=np.zeros((0, 3)), bn=np.zeros((0, 3)),
        at=np.zeros((0, npairs, 3)), bt=np.zeros((0, npairs, 3)),
        nvel=np.zeros(0), tvel=np.zeros((0, npairs)),
        entity=np.zeros(0, np.int64), entity_vel=np.zeros((0, 3)),
        pred=np.zeros(0), pred_order=np.zeros(0, np.int64),
        margin_eff=margin_eff)


def speculative_margin(scene: SceneConfig, twist: Twist, base_field) -> float:
    """Extra detection margin covering the surface travel of one step."""
    if not scene.speculative:
        return 0.0
    reach = base_field.bounding_radius() + DEFAULT_DELTA_BOUND
    speed = float(np.linalg.norm(twist.linear)) \
        + float(np.linalg.norm(twist.angular)) * reach
    return scene.h * speed


def gather_candidates(pose: Pose, base_field, scene: SceneConfig, t: float,
                      extra_margin: float, delta_slack: float,
                      twist: Twist | None = None) -> _CandidateArrays:
    """Contact candidates against the base field, gap-sorted and deduplicated.

    ``delta_slack`` widens the keep threshold so every residual shift within
    +-delta_slack sees its full active set as a prefix of these arrays.
    ``twist`` (when known) feeds the urgency priority used by contact
    selection: predicted end-of-step gap at the start velocity.
    """
    npairs = scene.friction_facets // 2
    margin_eff = scene.margin + extra_margin
    if not scene.entities:
        return _empty_candidates(margin_eff, npairs)
    R = pose.rotation_matrix()
    x = pose.position
    half = base_field.bounding_radius() + delta_slack + margin_eff
    region = (x - half, x + half)
    pts, vels, ents = [], [], []
    for idx, ent in enumerate(scene.entities):
        p = ent.surface_points(scene.sample_spacing, region, t)
        if len(p):
            pts.append(p)
            vels.append(np.broadcast_to(ent.velocity(t), p.shape))
            ents.append(np.full(len(p), idx, np.int64))
    if not pts:
        return _empty_candidates(margin_eff, npairs)
    world = np.concatenate(pts)
    vel = np.concatenate(vels)
    ent_idx = np.concatenate(ents)
    body = (world - x) @ R
    phi = np.atleast_1d(base_field.evaluate(body))
    keep = phi < margin_eff + delta_slack
    if not keep.any():
        return _empty_candidates(margin_eff, npairs)
    world, vel, ent_idx, body, phi = (a[keep] for a in (world, vel, ent_idx, body, phi))
    order = np.argsort(phi, kind="stable")
    world, vel, ent_idx, body, phi = (a[order] for a in (world, vel, ent_idx, body, phi))
    keep = dedup_candidates(world, scene.merge_distance)
    world, vel, ent_idx, body, phi = (a[keep] for a in (world, vel, ent_idx, body, phi))

    g_body = np.atleast_2d(base_field.gradient(body))
    n_body = -g_body
    n_world = n_body @ R.T
    bn = np.cross(body, n_body)
    ref = np.where(np.abs(n_world[:, 2:3]) < 0.9,
                   np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t1 = np.cross(ref, n_world)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n_world, t1)
    k = len(phi)
    at = np.empty((k, npairs, 3))
    bt = np.empty((k, npairs, 3))
    tvel = np.empty((k, npairs))
    for j in range(npairs):
        ang = np.pi * j / npairs
        d = np.cos(ang) * t1 + np.sin(ang) * t2
        at[:, j, :] = d
        bt[:, j, :] = np.cross(body, d @ R)
        tvel[:, j] = np.einsum("ij,ij->i", d, vel)
    nvel = np.einsum("ij,ij->i", n_world, vel)
    if twist is None:
        pred = phi.copy()
    else:
        rate = n_world @ twist.linear + np.einsum("ij,j->i", bn, twist.angular) - nvel
        pred = phi + scene.h * rate
    pred_order = np.argsort(pred, kind="stable")
    return _CandidateArrays(phi=phi, points=world, body_points=body,
                            an=n_world, bn=bn, at=at, bt=bt,
                            nvel=nvel, tvel=tvel, entity=ent_idx,
                            entity_vel=np.ascontiguousarray(vel),
                            pred=pred, pred_order=pred_order,
                            margin_eff=margin_eff)


def detect_contacts(pose: Pose, object_sdf, scene: SceneConfig, t: float = 0.0,
                    extra_margin: float = 0.0,
                    twist: Twist | None = None) -> list[Contact]:
    """Contacts where the collision SDF at an entity surface sample is below margin.

    Near-duplicates (within ``scene.merge_distance``) are merged keeping the
    smallest gap; at most ``scene.max_contacts`` survive, deepest first, with
    slots shared across entities and spread over equal-depth patches.
    """
    base, delta = split_residual(object_sdf)
    cand = gather_candidates(pose, base, scene, t, extra_margin, abs(delta), twist)
    if len(cand) == 0:
        return []
    n_active = int(np.searchsorted(cand.phi, cand.margin_eff + delta, side="left"))
    sel = np.empty(scene.max_contacts, np.int64)
    n_sel = select_contacts(cand.phi, n_active, cand.pred, cand.pred_order,
                            cand.points, cand.entity,
                            scene.max_contacts, CONTACT_BIN_QUANTUM, sel)
    out = []
    for i in range(n_sel):
        c = sel[i]
        out.append(Contact(point=cand.points[c].copy(),
                           normal=cand.an[c].copy(),
                           gap=float(cand.phi[c] - delta),
                           entity=scene.entities[cand.entity[c]].name,
                           entity_velocity=cand.entity_vel[c].copy()))
    return out


@dataclass
class StepInfo:
    """Diagnostics of one contact step (selected contacts and impulses)."""

    contacts: list
    impulses: np.ndarray          # (k, 1 + facet_pairs) in the contact frames
    normal_rows: tuple            # (an, bn) world/body rows of the normal constraints
    tangent_rows: tuple           # (at, bt)
    normal_targets: np.ndarray    # lower bounds used by the solver
    entity_normal_vel: np.ndarray
    gaps: np.ndarray
    sweeps: int
    converged: bool


def _u_wrench(u) -> tuple[np.ndarray, np.ndarray]:
    if u is None:
        return np.zeros(3), np.zeros(3)
    u = np.asarray(u, dtype=float).reshape(6)
    return u[:3].copy(), u[3:].copy()


def step_with_info(pose: Pose, twist: Twist, params: PhysicalParams, object_sdf,
                   scene: SceneConfig, u=None, t: float = 0.0):
    """One semi-implicit Euler contact step; also returns solver diagnostics.

    ``object_sdf`` is the collision field as queried (wrap any geometry
    residual into it); ``params.residual_delta`` is bookkeeping only and is
    not applied here again.
    """
    base, delta = split_residual(object_sdf)
    extra = speculative_margin(scene, twist, base)
    cand = gather_candidates(pose, base, scene, t, extra, abs(delta), twist)
    return _step_from_candidates(pose, twist, params, delta, cand, scene, u)


def _step_from_candidates(pose, twist, params, delta, cand, scene, u):
    force, torque = _u_wrench(u)
    npairs = scene.friction_facets // 2
    m = scene.max_contacts
    out_pos = np.empty((1, 3))
    out_quat = np.empty((1, 4))
    out_vlin = np.empty((1, 3))
    out_wbody = np.empty((1, 3))
    out_nsel = np.zeros(1, np.int64)
    out_sel = np.zeros((1, m), np.int64)
    out_lam = np.zeros((1, m, 1 + npairs))
    out_sweeps = np.zeros(1, np.int64)
    out_conv = np.zeros(1, np.bool_)
    step_particles(pose.position, pose.quaternion, twist.linear, twist.angular,
                   scene.h, scene.gravity, force, torque,
                   cand.phi, cand.points, cand.an, cand.bn, cand.at, cand.bt,
                   cand.nvel, cand.tvel, cand.entity, cand.pred, cand.pred_order,
                   cand.margin_eff, m, CONTACT_BIN_QUANTUM,
                   scene.pgs_tol, scene.pgs_max_sweeps, scene.pgs_relaxation,
                   np.array([params.mass]), params.inertia[None, :],
                   np.array([params.friction_mu]), np.array([delta]),
                   np.zeros(1, np.int64),
                   out_pos, out_quat, out_vlin, out_wbody,
                   out_nsel, out_sel, out_lam, out_sweeps, out_conv)
    n_sel = int(out_nsel[0])
    sel = out_sel[0, :n_sel]
    contacts = []
    ln = np.empty(n_sel)
    for i, c in enumerate(sel):
        gap = float(cand.phi[c] - delta)
        ln[i] = cand.nvel[c] - max(gap, 0.0) / scene.h
        contacts.append(Contact(point=cand.points[c].copy(),
                                normal=cand.an[c].copy(), gap=gap,
                                entity=scene.entities[cand.entity[c]].name,
                                entity_velocity=cand.entity_vel[c].copy()))
    info = StepInfo(contacts=contacts,
                    impulses=out_lam[0, :n_sel].copy(),
                    normal_rows=(cand.an[sel].copy(), cand.bn[sel].copy()),
                    tangent_rows=(cand.at[sel].copy(), cand.bt[sel].copy()),
                    normal_targets=ln,
                    entity_normal_vel=cand.nvel[sel].copy(),
                    gaps=cand.phi[sel] - delta,
                    sweeps=int(out_sweeps[0]), converged=bool(out_conv[0]))
    new_pose = Pose(out_pos[0], out_quat[0])
    new_twist = Twist(out_vlin[0], out_wbody[0])
    return new_pose, new_twist, info


def step(pose: Pose, twist: Twist, params: PhysicalParams, object_sdf,
         scene: SceneConfig, u=None, t: float = 0.0) -> tuple[Pose, Twist]:
    """One contact dynamics step: free velocity, impulses, pose integration."""
    new_pose, new_twist, _ = step_with_info(pose, twist, params, object_sdf,
                                            scene, u, t)
    return new_pose, new_twist


def integrate_pose(pose: Pose, twist: Twist, h: float) -> Pose:
    """q' = q (+) h*v: position plus world velocity, orientation times exp(h*omega)."""
    if h <= 0.0:
        raise ValueError("h must be positive")
    pos = pose.position + h * twist.linear
    dq = se3.quat_exp(h * twist.angular)
    quat = se3.quat_normalize(se3.quat_mul(pose.quaternion, dq))
    return Pose(pos, quat)


@dataclass
class Trajectory:
    """Time-indexed rigid-body states, one row per step (initial state included)."""

    times: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray
    linear_velocities: np.ndarray
    angular_velocities: np.ndarray

    def __len__(self):
        return len(self.times)

    def pose(self, i: int) -> Pose:
        return Pose(self.positions[i], self.quaternions[i])

    def twist(self, i: int) -> Twist:
        return Twist(self.linear_velocities[i], self.angular_velocities[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "px", "py", "pz", "qw", "qx", "qy", "qz",
                        "vx", "vy", "vz", "wx", "wy", "wz"])
            for i in range(len(self)):
                row = [self.times[i], *self.positions[i], *self.quaternions[i],
                       *self.linear_velocities[i], *self.angular_velocities[i]]
                w.writerow([f"{v:.17g}" for v in row])


def rollout(pose0: Pose, twist0: Twist, params: PhysicalParams, object_sdf,
            scene: SceneConfig, u_schedule=None, n_steps: int = 1,
            t0: float = 0.0) -> Trajectory:
    """Iterate ``step`` for n_steps; trajectory has n_steps + 1 states."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    times = t0 + scene.h * np.arange(n_steps + 1)
    pos = np.empty((n_steps + 1, 3))
    quat = np.empty((n_steps + 1, 4))
    lin = np.empty((n_steps + 1, 3))
    ang = np.empty((n_steps + 1, 3))
    pose, twist = pose0.copy(), twist0.copy()
    for k in range(n_steps + 1):
        pos[k], quat[k] = pose.position, pose.quaternion
        lin[k], ang[k] = twist.linear, twist.angular
        if k == n_steps:
            break
        if u_schedule is None:
            u = None
        elif callable(u_schedule):
            u = u_schedule(k, times[k])
        else:
            u = np.asarray(u_schedule)[k]
        try:
            pose, twist = step(pose, twist, params, object_sdf, scene, u, times[k])
        except SolverError as exc:
            raise SolverError(f"step {k} (t={times[k]:.4f}): {exc}") from exc
    return Trajectory(times, pos, quat, lin, ang)


@dataclass
class ImpulseResult:
    """Outcome of a standalone contact impulse solve."""

    impulses: np.ndarray          # (k, 1 + facet_pairs)
    world_impulses: np.ndarray    # (k, 3) summed world-frame impulse vectors
    velocity: Twist               # post-impulse velocity
    sweeps: int
    converged: bool


def solve_contact_impulses(contacts, mass_matrix, v_free: Twist, mu: float,
                           h: float, pose: Pose, friction_facets: int = 4,
                           tol: float = 1e-8, max_sweeps: int = 100) -> ImpulseResult:
    """Frictional impulse solve for an explicit contact set.

    The mass matrix must be diag(m, m, m, Ix, Iy, Iz) and positive definite;
    anything else is rejected with a diagnostic.
    """
    if not contacts:
        raise SolverError("contact list is empty")
    M = np.asarray(mass_matrix, dtype=float)
    if M.shape != (6, 6):
        raise SolverError(f"mass matrix must be 6x6, got {M.shape}")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise SolverError("mass matrix is not positive definite") from exc
    if not np.allclose(M, np.diag(np.diag(M))):
        raise SolverError("mass matrix must be diagonal (m, m, m, Ix, Iy, Iz)")
    dm = np.diag(M)
    if not (dm[0] == dm[1] == dm[2]):
        raise SolverError("linear mass block must be isotropic")
    npairs = friction_facets // 2
    k = len(contacts)
    R = pose.rotation_matrix()
    an = np.empty((k, 3))
    bn = np.empty((k, 3))
    at = np.empty((k, npairs, 3))
    bt = np.empty((k, npairs, 3))
    ln = np.empty(k)
    tt = np.empty((k, npairs))
    for i, c in enumerate(contacts):
        n = np.asarray(c.normal, dtype=float)
        n = n / np.linalg.norm(n)
        r_body = R.T @ (np.asarray(c.point, dtype=float) - pose.position)
        n_body = R.T @ n
        an[i] = n
        bn[i] = np.cross(r_body, n_body)
        ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        t1 = np.cross(ref, n)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        vel = np.asarray(getattr(c, "entity_velocity", np.zeros(3)), dtype=float)
        ln[i] = float(n @ vel) - max(float(c.gap), 0.0) / h
        for j in range(npairs):
            ang = np.pi * j / npairs
            d = np.cos(ang) * t1 + np.sin(ang) * t2
            at[i, j] = d
            bt[i, j] = np.cross(r_body, R.T @ d)
            tt[i, j] = float(d @ vel)
    u = np.concatenate([v_free.linear, v_free.angular]).astype(float)
    lam = np.zeros((k, 1 + npairs))
    sweeps, converged = pgs_solve(an, bn, at, bt, ln, tt,
                                  1.0 / dm[0], 1.0 / dm[3], 1.0 / dm[4],
                                  1.0 / dm[5], float(mu), u, tol, max_sweeps, lam)
    world = lam[:, :1] * an
    for j in range(npairs):
        world = world + lam[:, 1 + j:2 + j] * at[:, j]
    return ImpulseResult(impulses=lam, world_impulses=world,
                         velocity=Twist(u[:3], u[3:]),
                         sweeps=sweeps, converged=converged)
