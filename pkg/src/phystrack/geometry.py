"""Implicit collision geometry: signed distance fields and surface sampling.

All fields live in the object body frame with the origin at the nominal
center of mass.  Evaluation is pure and vectorized: ``evaluate`` and
``gradient`` accept a single point ``(3,)`` or a batch ``(..., 3)``.
Distances are meters, negative inside.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

GRID_GRADIENT_STEP = 1e-4
DEFAULT_DELTA_BOUND = 0.05
_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def _as_points(p) -> tuple[np.ndarray, bool]:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return p[None, :], True
    return p.reshape(-1, 3), False


class SdfField:
    """Base class for body-frame signed distance fields."""

    def evaluate(self, p):
        pts, single = _as_points(p)
        v = self._eval(pts)
        return float(v[0]) if single else v.reshape(np.asarray(p).shape[:-1])

    def gradient(self, p):
        """Unit gradient; near-degenerate gradients fall back to +z."""
        pts, single = _as_points(p)
        g = self._grad(pts)
        n = np.linalg.norm(g, axis=1)
        bad = n < 1e-8
        if np.any(bad):
            g[bad] = (0.0, 0.0, 1.0)
            n[bad] = 1.0
        g = g / n[:, None]
        return g[0] if single else g.reshape(np.asarray(p).shape)

    def bounding_radius(self) -> float:
        raise NotImplementedError

    def _eval(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class SphereSdf(SdfField):
    radius: float

    def _eval(self, pts):
        return np.linalg.norm(pts, axis=1) - self.radius

    def _grad(self, pts):
        return pts.copy()

    def bounding_radius(self):
        return self.radius


@dataclass(frozen=True)
class BoxSdf(SdfField):
    half_extents: tuple[float, float, float]

    def _eval(self, pts):
        q = np.abs(pts) - np.asarray(self.half_extents)
        outer = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inner = np.minimum(np.max(q, axis=1), 0.0)
        return outer + inner

    def _grad(self, pts):
        q = np.abs(pts) - np.asarray(self.half_extents)
        sign = np.where(pts >= 0.0, 1.0, -1.0)
        g = np.maximum(q, 0.0) * sign
        inside = np.all(q <= 0.0, axis=1)
        if np.any(inside):
            # Closest face normal for interior (and exactly-on-face) points.
            ax = np.argmax(q[inside], axis=1)
            gi = np.zeros((int(inside.sum()), 3))
            gi[np.arange(len(ax)), ax] = sign[inside, ax]
            g[inside] = gi
        return g

    def bounding_radius(self):
        return float(np.linalg.norm(self.half_extents))


@dataclass(frozen=True)
class CapsuleSdf(SdfField):
    """Capsule along the body z axis: segment of +-half_length, radius."""

    half_length: float
    radius: float

    def _closest_axis_offset(self, pts):
        q = pts.copy()
        q[:, 2] -= np.clip(pts[:, 2], -self.half_length, self.half_length)
        return q

    def _eval(self, pts):
        q = self._closest_axis_offset(pts)
        return np.linalg.norm(q, axis=1) - self.radius

    def _grad(self, pts):
        return self._closest_axis_offset(pts)

    def bounding_radius(self):
        return self.half_length + self.radius


@dataclass(frozen=True)
class UnionSdf(SdfField):
    """Min-combination of child fields (exact only outside; fine near surfaces)."""

    children: tuple[SdfField, ...]

    def __post_init__(self):
        if not self.children:
            raise ValueError("union needs at least one child")

    def _eval(self, pts):
        vals = np.stack([c._eval(pts) for c in self.children], axis=0)
        return np.min(vals, axis=0)

    def _grad(self, pts):
        vals = np.stack([c._eval(pts) for c in self.children], axis=0)
        grads = np.stack([c.gradient(pts) for c in self.children], axis=0)
        pick = np.argmin(vals, axis=0)
        return grads[pick, np.arange(pts.shape[0])]

    def bounding_radius(self):
        return max(c.bounding_radius() for c in self.children)


class GridSdf(SdfField):
    """Trilinearly interpolated grid of SDF samples on an axis-aligned box.

    Queries outside the bounds extrapolate as (boundary value + distance to
    bounds); ``evaluate_with_flag`` reports when that happened.
    """

    def __init__(self, lower, upper, values):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("grid values must be 3-D")
        if np.any(self.upper <= self.lower):
            raise ValueError("grid upper bound must exceed lower bound")
        self.resolution = np.array(self.values.shape, dtype=int)
        self._span = self.upper - self.lower

    def cell_diagonal(self) -> float:
        cell = self._span / (self.resolution - 1)
        return float(np.linalg.norm(cell))

    def _interp(self, pts):
        coords = (pts - self.lower) / self._span * (self.resolution - 1)
        # Snap to nodes so stored samples are reproduced exactly.
        ci = np.rint(coords)
        snap = np.abs(coords - ci) < 1e-9
        coords = np.where(snap, ci, coords)
        idx = np.clip(np.floor(coords).astype(int), 0, self.resolution - 2)
        frac = coords - idx
        ix, iy, iz = idx[:, 0], idx[:, 1], idx[:, 2]
        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
        v = self.values
        c00 = v[ix, iy, iz] * (1 - fx) + v[ix + 1, iy, iz] * fx
        c01 = v[ix, iy, iz + 1] * (1 - fx) + v[ix + 1, iy, iz + 1] * fx
        c10 = v[ix, iy + 1, iz] * (1 - fx) + v[ix + 1, iy + 1, iz] * fx
        c11 = v[ix, iy + 1, iz + 1] * (1 - fx) + v[ix + 1, iy + 1, iz + 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def evaluate_with_flag(self, p):
        """Return (value, out_of_bounds) with the extrapolation rule applied."""
        pts, single = _as_points(p)
        clamped = np.clip(pts, self.lower, self.upper)
        outside_dist = np.linalg.norm(pts - clamped, axis=1)
        vals = self._interp(clamped) + outside_dist
        flags = outside_dist > 0.0
        if single:
            return float(vals[0]), bool(flags[0])
        shape = np.asarray(p).shape[:-1]
        return vals.reshape(shape), flags.reshape(shape)

    def _eval(self, pts):
        vals, _ = self.evaluate_with_flag(pts)
        return np.atleast_1d(vals)

    def _grad(self, pts):
        h = GRID_GRADIENT_STEP
        g = np.empty_like(pts)
        for ax in range(3):
            dp = np.zeros(3)
            dp[ax] = h
            g[:, ax] = (self._eval(pts + dp) - self._eval(pts - dp)) / (2.0 * h)
        return g

    def bounding_radius(self):
        corners = np.abs(np.stack([self.lower, self.upper]))
        return float(np.linalg.norm(np.max(corners, axis=0)))


@dataclass(frozen=True)
class ResidualSdf(SdfField):
    """Collision geometry = visual geometry minus a constant residual.

    ``evaluate(p) == base.evaluate(p) - delta`` exactly; positive delta
    inflates the zero level set (compensates a shrunken visual surface).
    """

    base: SdfField
    delta: float
    max_delta: float = DEFAULT_DELTA_BOUND

    def __post_init__(self):
        if abs(self.delta) > self.max_delta + 1e-12:
            raise ValueError(
                f"residual delta {self.delta} exceeds bound +-{self.max_delta}")

    def _eval(self, pts):
        return self.base._eval(pts) - self.delta

    def _grad(self, pts):
        return self.base._grad(pts)

    def bounding_radius(self):
        return self.base.bounding_radius() + abs(self.delta)


def sdf_eval(field, p):
    """Signed distance of ``field`` at point(s) ``p``."""
    return field.evaluate(p)


def sdf_gradient(field, p):
    """Unit outward gradient of ``field`` at point(s) ``p``."""
    return field.gradient(p)


def grid_from_field(field: SdfField, lower, upper, resolution) -> GridSdf:
    """Sample an SDF onto a regular grid (stands in for fitting a learned SDF).

    The bounds must contain the zero level set; a grid whose samples are all
    one sign is rejected.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,)).copy()
    if np.any(res < 8):
        raise ValueError("grid resolution must be >= 8 per axis")
    axes = [np.linspace(lower[i], upper[i], res[i]) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    vals = field.evaluate(pts).reshape(tuple(res))
    if vals.min() >= 0.0 or vals.max() <= 0.0:
        raise ValueError("grid bounds exclude the surface (no sign change)")
    return GridSdf(lower, upper, vals)


_GRID_MAGIC = b"SDFG"


def save_grid_sdf(grid: GridSdf, path) -> None:
    """Flat binary layout: bounds (6 float64), resolution (3 uint32), samples (float32, C order)."""
    with open(path, "wb") as f:
        f.write(_GRID_MAGIC)
        f.write(struct.pack("<6d", *grid.lower, *grid.upper))
        f.write(struct.pack("<3I", *grid.resolution))
        f.write(grid.values.astype("<f4").tobytes(order="C"))


def load_grid_sdf(path) -> GridSdf:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _GRID_MAGIC:
            raise ValueError("not a grid SDF file")
        lo_hi = struct.unpack("<6d", f.read(48))
        res = struct.unpack("<3I", f.read(12))
        count = res[0] * res[1] * res[2]
        vals = np.frombuffer(f.read(4 * count), dtype="<f4").astype(float)
    return GridSdf(lo_hi[:3], lo_hi[3:], vals.reshape(res))


@dataclass
class SurfaceSampleSet:
    """World-frame surface points sampled from one scene entity."""

    points: np.ndarray
    entity: str = ""

    def __len__(self):
        return len(self.points)


def plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic in-plane orthonormal basis for a unit normal."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(normal[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, normal)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def sample_plane_surface(normal, offset: float, spacing: float, region) -> np.ndarray:
    """Regular grid on the plane n.p = offset, clipped to an AABB region.

    The grid is anchored at the plane's closest point to the world origin so
    sample positions do not swim as the query region moves.
    """
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    lo, hi = np.asarray(region[0], dtype=float), np.asarray(region[1], dtype=float)
    u, v = plane_basis(normal)
    anchor = offset * normal
    corners = np.array([[lo[i] if k & (1 << i) else hi[i] for i in range(3)]
                        for k in range(8)])
    rel = corners - anchor
    s_rng = rel @ u
    t_rng = rel @ v
    tol = 1e-9
    s_idx = np.arange(np.ceil((s_rng.min() - tol) / spacing),
                      np.floor((s_rng.max() + tol) / spacing) + 1)
    t_idx = np.arange(np.ceil((t_rng.min() - tol) / spacing),
                      np.floor((t_rng.max() + tol) / spacing) + 1)
    if len(s_idx) == 0 or len(t_idx) == 0:
        pts = np.zeros((0, 3))
    else:
        ss, tt = np.meshgrid(s_idx * spacing, t_idx * spacing, indexing="ij")
        pts = anchor + ss.reshape(-1, 1) * u + tt.reshape(-1, 1) * v
        keep = np.all((pts >= lo - tol) & (pts <= hi + tol), axis=1)
        pts = pts[keep]
    if len(pts) == 0:
        # Region narrower than the spacing: fall back to the projected center.
        center = 0.5 * (lo + hi)
        proj = center - (center @ normal - offset) * normal
        if np.all(proj >= lo - tol) and np.all(proj <= hi + tol):
            pts = proj[None, :]
    return pts


def sample_sphere_surface(center, radius: float, spacing: float, region) -> np.ndarray:
    """Fibonacci point set on a sphere, clipped to an AABB region."""
    center = np.asarray(center, dtype=float)
    lo, hi = np.asarray(region[0], dtype=float), np.asarray(region[1], dtype=float)
    n = max(1, int(round(4.0 * np.pi * radius * radius / (spacing * spacing))))
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    rxy = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = i * _GOLDEN_ANGLE
    dirs = np.stack([np.cos(theta) * rxy, np.sin(theta) * rxy, z], axis=1)
    pts = center + radius * dirs
    tol = 1e-9
    keep = np.all((pts >= lo - tol) & (pts <= hi + tol), axis=1)
    return pts[keep]


def sample_entity_surface(entity, spacing: float, region, t: float = 0.0) -> SurfaceSampleSet:
    """Sample surface points of a scene entity inside an AABB region.

    ``entity`` is any object exposing ``surface_points(spacing, region, t)``
    and a ``name``; an empty intersection yields an empty (valid) set.
    """
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    pts = entity.surface_points(spacing, region, t)
    return SurfaceSampleSet(points=pts, entity=getattr(entity, "name", ""))
