"""Desk-scale rigid-body simulation of convex bodies on a finite table.

The world keeps body state in packed arrays so that one call into the kernel
advances every body. Body poses are the mesh-frame poses; the kernel works on
centres of mass internally, so a body that does not move keeps its pose
bit-for-bit.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import ConvexShape, GeometryError, Pose, box_mesh, rotation_angle, quat_multiply, quat_conjugate

STATIC = "static"
DYNAMIC = "dynamic"
DENSITY = 1000.0
STANDARD_GRAVITY = 9.81


@dataclass
class ContactParams:
    """Solver settings shared by every contact in a world."""

    friction: float = 0.5
    restitution: float = 0.0
    iterations: int = 16
    dt: float = 1.0 / 240.0
    slop: float = 0.0005
    baumgarte: float = 0.2
    margin: float = 0.004
    max_linear_step: float = 0.05  # m per step
    max_angular_step: float = 0.5  # rad per step
    sleep_linear: float = 0.002
    sleep_angular: float = 0.02
    sleep_steps: int = 40


@dataclass
class Body:
    """Snapshot of one simulated body."""

    body_id: int
    shape: ConvexShape
    pose: Pose
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    mass: float
    inertia: np.ndarray  # body frame, about the centre of mass
    linear_damping: float
    angular_damping: float
    mode: str


@dataclass
class StillTolerance:
    linear: float = 0.005
    angular: float = 0.05


@dataclass
class SettleResult:
    world: World
    stable_ids: set
    unstable_ids: set
    steps: int


@dataclass(frozen=True)
class PoseDelta:
    translation: float
    rotation_angle: float

    def exceeds(self, translation_tol: float, rotation_tol: float) -> bool:
        return self.translation > translation_tol or self.rotation_angle > rotation_tol


def pose_delta(a: Pose, b: Pose) -> PoseDelta:
    """Translation distance and relative rotation angle between two poses."""
    t = float(np.linalg.norm(np.asarray(a.translation) - np.asarray(b.translation)))
    rel = quat_multiply(quat_conjugate(a.rotation), b.rotation)
    return PoseDelta(t, rotation_angle(rel))


class _Packed:
    """Concatenated hull data for the kernel (read-only once built)."""

    def __init__(self, shapes):
        hv, fn, fd, fvi, ev, e_dir, ud = [], [], [], [], [], [], []
        v_off, f_off, fptr, e_off, u_off = [0], [0], [0], [0], [0]
        for s in shapes:
            base_v, base_u = v_off[-1], u_off[-1]
            hv.append(s.vertices)
            fn.append(s.face_normals)
            fd.append(s.face_offsets)
            for poly in s.face_vertices:
                fvi.extend(base_v + i for i in poly)
                fptr.append(len(fvi))
            ev.append(s.edges + base_v)
            e_dir.append(s.edge_dir_index + base_u)
            ud.append(s.edge_dirs)
            v_off.append(base_v + len(s.vertices))
            f_off.append(f_off[-1] + len(s.face_normals))
            e_off.append(e_off[-1] + len(s.edges))
            u_off.append(base_u + len(s.edge_dirs))

        def cat(parts, shape, dtype=float):
            if not parts:
                return np.zeros(shape, dtype=dtype)
            return np.ascontiguousarray(np.concatenate(parts), dtype=dtype)

        self.hv = cat(hv, (0, 3))
        self.fn = cat(fn, (0, 3))
        self.fd = cat(fd, (0,))
        self.ev = cat(ev, (0, 2), np.int64).reshape(-1, 2)
        self.e_dir = cat(e_dir, (0,), np.int64)
        self.ud = cat(ud, (0, 3))
        self.fvi = np.asarray(fvi, dtype=np.int64)
        self.fptr = np.asarray(fptr, dtype=np.int64)
        self.v_off = np.asarray(v_off, dtype=np.int64)
        self.f_off = np.asarray(f_off, dtype=np.int64)
        self.e_off = np.asarray(e_off, dtype=np.int64)
        self.u_off = np.asarray(u_off, dtype=np.int64)


class World:
    """A table plus an ordered collection of convex bodies keyed by id.

    The table is a static slab whose top face lies at z = 0. Bodies are either
    static (immovable obstacles) or dynamic.
    """

    def __init__(self, gravity=(0.0, 0.0, -STANDARD_GRAVITY / 10.0), params: ContactParams | None = None,
                 table_size=(0.6, 0.6), table_thickness: float = 0.05, table_center=(0.0, 0.0)):
        self.gravity = np.array(gravity, dtype=float)
        self.params = params or ContactParams()
        self.table_size = (float(table_size[0]), float(table_size[1]))
        self.table_center = (float(table_center[0]), float(table_center[1]))
        mesh = box_mesh(self.table_size[0], self.table_size[1], table_thickness, "table", "table")
        verts = mesh.vertices + np.array([self.table_center[0], self.table_center[1], -table_thickness / 2])
        self.table_shape = ConvexShape.from_points(verts)
        self._ids: list[int] = []
        self._shapes: list[ConvexShape] = [self.table_shape]
        self._pos = np.zeros((1, 3))
        self._quat = np.array([[1.0, 0.0, 0.0, 0.0]])
        self._vel = np.zeros((1, 3))
        self._angv = np.zeros((1, 3))
        self._com = self.table_shape.centroid.reshape(1, 3).copy()
        self._mass = np.zeros(1)
        self._inertia = np.zeros((1, 3, 3))
        self._inv_mass = np.zeros(1)
        self._inv_inertia = np.zeros((1, 3, 3))
        self._damping = np.zeros((1, 2))
        self._dynamic = np.zeros(1, dtype=np.uint8)
        self._awake = np.zeros(1, dtype=np.uint8)
        self._sleep = np.zeros(1, dtype=np.int64)
        self._packed: _Packed | None = None
        self._reset_cache()

    # -- body management ----------------------------------------------------

    @property
    def body_ids(self) -> list[int]:
        return list(self._ids)

    def __len__(self):
        return len(self._ids)

    def __contains__(self, body_id):
        return body_id in self._ids

    def _index(self, body_id) -> int:
        try:
            return self._ids.index(body_id) + 1
        except ValueError:
            raise KeyError(f"no body with id {body_id}") from None

    def add_body(self, body_id: int, shape: ConvexShape, pose: Pose, mode: str = DYNAMIC,
                 damping=(0.0, 0.0), density: float = DENSITY, linear_velocity=(0, 0, 0),
                 angular_velocity=(0, 0, 0)) -> None:
        if body_id in self._ids:
            raise ValueError(f"duplicate body id {body_id}")
        if mode not in (STATIC, DYNAMIC):
            raise ValueError(f"unknown mode {mode!r}")
        if shape.volume <= 0:
            raise GeometryError("body hull has no volume")
        mass = density * shape.volume
        inertia = density * shape.inertia
        self._ids.append(body_id)
        self._shapes.append(shape)
        self._pos = np.vstack([self._pos, np.asarray(pose.translation, dtype=float)])
        self._quat = np.vstack([self._quat, np.asarray(pose.rotation, dtype=float)])
        self._vel = np.vstack([self._vel, np.asarray(linear_velocity, dtype=float)])
        self._angv = np.vstack([self._angv, np.asarray(angular_velocity, dtype=float)])
        self._com = np.vstack([self._com, shape.centroid])
        self._mass = np.append(self._mass, mass)
        self._inertia = np.concatenate([self._inertia, inertia[None]])
        self._inv_mass = np.append(self._inv_mass, 0.0)
        self._inv_inertia = np.concatenate([self._inv_inertia, np.zeros((1, 3, 3))])
        self._damping = np.vstack([self._damping, np.asarray(damping, dtype=float)])
        self._dynamic = np.append(self._dynamic, np.uint8(0))
        self._awake = np.append(self._awake, np.uint8(1))
        self._sleep = np.append(self._sleep, np.int64(0))
        self._packed = None
        self._reset_cache()
        self.set_mode(body_id, mode)

    def remove_body(self, body_id: int) -> None:
        i = self._index(body_id)
        self._ids.pop(i - 1)
        self._shapes.pop(i)
        for name in ("_pos", "_quat", "_vel", "_angv", "_com", "_mass", "_inertia", "_inv_mass",
                     "_inv_inertia", "_damping", "_dynamic", "_awake", "_sleep"):
            setattr(self, name, np.delete(getattr(self, name), i, axis=0))
        self._packed = None
        self._reset_cache()

    def set_mode(self, body_id: int, mode: str) -> None:
        i = self._index(body_id)
        if mode == DYNAMIC:
            self._dynamic[i] = 1
            self._inv_mass[i] = 1.0 / self._mass[i]
            self._inv_inertia[i] = np.linalg.inv(self._inertia[i])
            self._awake[i] = 1
            self._sleep[i] = 0
        elif mode == STATIC:
            self._dynamic[i] = 0
            self._inv_mass[i] = 0.0
            self._inv_inertia[i] = 0.0
            self._vel[i] = 0.0
            self._angv[i] = 0.0
        else:
            raise ValueError(f"unknown mode {mode!r}")

    def mode(self, body_id: int) -> str:
        return DYNAMIC if self._dynamic[self._index(body_id)] else STATIC

    def wake(self, body_id: int | None = None) -> None:
        idx = range(1, len(self._ids) + 1) if body_id is None else [self._index(body_id)]
        for i in idx:
            self._awake[i] = 1
            self._sleep[i] = 0

    def is_sleeping(self, body_id: int) -> bool:
        i = self._index(body_id)
        return bool(self._dynamic[i]) and not self._awake[i]

    def pose(self, body_id: int) -> Pose:
        i = self._index(body_id)
        return Pose(self._quat[i].copy(), self._pos[i].copy())

    def set_pose(self, body_id: int, pose: Pose) -> None:
        i = self._index(body_id)
        self._pos[i] = pose.translation
        self._quat[i] = pose.rotation
        self._reset_cache()

    def set_velocity(self, body_id: int, linear=(0, 0, 0), angular=(0, 0, 0)) -> None:
        i = self._index(body_id)
        if not self._dynamic[i]:
            raise ValueError("static bodies cannot move")
        self._vel[i] = linear
        self._angv[i] = angular
        self._awake[i] = 1
        self._sleep[i] = 0

    def velocity(self, body_id: int) -> tuple[np.ndarray, np.ndarray]:
        i = self._index(body_id)
        return self._vel[i].copy(), self._angv[i].copy()

    def shape(self, body_id: int) -> ConvexShape:
        return self._shapes[self._index(body_id)]

    def mass(self, body_id: int) -> float:
        return float(self._mass[self._index(body_id)])

    def center_of_mass(self, body_id: int) -> np.ndarray:
        i = self._index(body_id)
        return self.pose(body_id).apply(self._com[i])

    def body(self, body_id: int) -> Body:
        i = self._index(body_id)
        return Body(body_id, self._shapes[i], self.pose(body_id), self._vel[i].copy(), self._angv[i].copy(),
                    float(self._mass[i]), self._inertia[i].copy(), float(self._damping[i, 0]),
                    float(self._damping[i, 1]), self.mode(body_id))

    def bodies(self) -> list[Body]:
        return [self.body(b) for b in self._ids]

    def clone(self) -> World:
        """Independent copy; hull data is shared because it is never mutated."""
        out = copy.copy(self)
        for name in ("_pos", "_quat", "_vel", "_angv", "_com", "_mass", "_inertia", "_inv_mass",
                     "_inv_inertia", "_damping", "_dynamic", "_awake", "_sleep",
                     "_c_pair", "_c_local", "_c_imp"):
            setattr(out, name, getattr(self, name).copy())
        out._ids = list(self._ids)
        out._shapes = list(self._shapes)
        out.gravity = self.gravity.copy()
        out.params = copy.copy(self.params)
        return out

    # -- simulation ---------------------------------------------------------

    def _reset_cache(self):
        self._c_pair = np.zeros((0, 2), dtype=np.int64)
        self._c_local = np.zeros((0, 3))
        self._c_imp = np.zeros((0, 3))

    def kinetic_energy(self) -> float:
        e = 0.0
        for i in range(1, len(self._ids) + 1):
            if not self._dynamic[i]:
                continue
            r = Pose(self._quat[i]).matrix
            inertia = r @ self._inertia[i] @ r.T
            e += 0.5 * self._mass[i] * self._vel[i] @ self._vel[i] + 0.5 * self._angv[i] @ inertia @ self._angv[i]
        return float(e)

    def step(self, dt: float | None = None) -> World:
        """Advance the world by one time step in place and return it."""
        p = self.params
        dt = p.dt if dt is None else float(dt)
        if dt <= 0:
            raise ValueError("dt must be positive")
        if self._packed is None:
            self._packed = _Packed(self._shapes)
        pk = self._packed
        n = len(self._shapes)
        cap = max(16, 4 * n * (n - 1) // 2)
        out_pair = np.zeros((cap, 2), dtype=np.int64)
        out_local = np.zeros((cap, 3))
        out_imp = np.zeros((cap, 3))
        fparams = np.array([*self.gravity, dt, p.friction, p.restitution, p.slop, p.baumgarte, p.margin,
                            p.max_linear_step, p.max_angular_step, p.sleep_linear, p.sleep_angular])
        iparams = np.array([p.iterations, p.sleep_steps], dtype=np.int64)
        m = kernels.step(self._pos, self._quat, self._vel, self._angv, self._com, self._inv_mass,
                         self._inv_inertia, self._damping, self._dynamic, self._awake, self._sleep,
                         pk.hv, pk.v_off, pk.fn, pk.fd, pk.f_off, pk.fptr, pk.fvi, pk.ev, pk.e_dir, pk.e_off,
                         pk.ud, pk.u_off, self._c_pair, self._c_local, self._c_imp, len(self._c_pair),
                         out_pair, out_local, out_imp, fparams, iparams)
        self._c_pair = out_pair[:m].copy()
        self._c_local = out_local[:m].copy()
        self._c_imp = out_imp[:m].copy()
        return self

    def contact_pairs(self) -> set[tuple[int, int]]:
        """Body-id pairs in contact during the last step; the table is id ``None``."""
        ids = [None] + self._ids
        return {(ids[a], ids[b]) for a, b in self._c_pair}

    def on_table(self, body_id: int) -> bool:
        """Whether the centre of mass lies above the table footprint."""
        c = self.center_of_mass(body_id)
        hx, hy = self.table_size[0] / 2, self.table_size[1] / 2
        return (abs(c[0] - self.table_center[0]) <= hx and abs(c[1] - self.table_center[1]) <= hy
                and c[2] > -0.01)

    def is_still(self, body_id: int, tol: StillTolerance) -> bool:
        i = self._index(body_id)
        if not self._dynamic[i] or not self._awake[i]:
            return True
        return bool(np.linalg.norm(self._vel[i]) < tol.linear and np.linalg.norm(self._angv[i]) < tol.angular)

    def all_asleep(self) -> bool:
        dyn = self._dynamic[1:].astype(bool)
        return not np.any(self._awake[1:][dyn])

    def all_resolved(self, floor: float = -0.2) -> bool:
        """True when every awake dynamic body has fallen below ``floor``."""
        live = self._dynamic[1:].astype(bool) & self._awake[1:].astype(bool) & (self._pos[1:, 2] > floor)
        return not np.any(live)


def step(world: World, dt: float | None = None) -> World:
    return world.step(dt)


def settle(world: World, max_steps: int = 2000, tol: StillTolerance | None = None) -> SettleResult:
    """Step until every dynamic body sleeps or ``max_steps`` is reached.

    A body is stable when it ends below the speed tolerance with its centre of
    mass above the table footprint. ``max_steps = 0`` only classifies.
    """
    if max_steps < 0:
        raise ValueError("max_steps must be non-negative")
    tol = tol or StillTolerance()
    steps = 0
    while steps < max_steps and len(world) and not world.all_resolved():
        world.step()
        steps += 1
    stable, unstable = set(), set()
    for b in world.body_ids:
        if world.mode(b) != DYNAMIC:
            continue
        if world.is_still(b, tol) and world.on_table(b):
            stable.add(b)
        else:
            unstable.add(b)
    return SettleResult(world, stable, unstable, steps)
