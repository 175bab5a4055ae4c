"""Manipulation relationship graphs from leave-one-out perturbation trials.

For a target object ``i`` every other object is frozen in place and ``i`` is
left free to move. Each neighbour ``j`` is then deleted in turn; if ``i``
moves further than a pose threshold within a short simulation, ``j`` is one of
``i``'s parents (it must be grasped after ``i``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .physics import DYNAMIC, STATIC, World, pose_delta
from .scene import ModelLibrary, SceneRecord, restore_scene

NONE, PARENT, CHILD, BIDIRECTIONAL = "None", "Parent", "Child", "Bidirectional"
LABELS = (NONE, PARENT, CHILD, BIDIRECTIONAL)


@dataclass(frozen=True)
class MrgConfig:
    epsilon_translation: float = 0.01
    epsilon_rotation: float = float(np.radians(5.0))
    perturb_steps: int = 100
    dt: float = 1.0 / 240.0

    def __post_init__(self):
        if min(self.epsilon_translation, self.epsilon_rotation, self.perturb_steps, self.dt) <= 0:
            raise ValueError("MRG thresholds, step count and dt must be positive")


@dataclass(frozen=True)
class MRG:
    """Parent lists plus the pairwise relationship they imply.

    ``rel(i, j) == PARENT`` means ``i`` supports ``j`` (``i`` is in
    ``parents[j]``), so ``j`` must be removed first.
    """

    parents: dict = field(default_factory=dict)

    def __post_init__(self):
        fixed = {int(k): frozenset(int(x) for x in v) for k, v in self.parents.items()}
        for k, v in fixed.items():
            if k in v:
                raise ValueError(f"object {k} cannot support itself")
            unknown = v - set(fixed)
            if unknown:
                raise ValueError(f"parents of {k} reference unknown objects {sorted(unknown)}")
        object.__setattr__(self, "parents", fixed)

    @property
    def object_ids(self) -> list[int]:
        return sorted(self.parents)

    def rel(self, i: int, j: int) -> str:
        if i == j:
            raise ValueError("relationship is defined for distinct objects only")
        a = i in self.parents[j]
        b = j in self.parents[i]
        if a and b:
            return BIDIRECTIONAL
        if a:
            return PARENT
        if b:
            return CHILD
        return NONE

    def matrix(self) -> list[tuple[int, int, str]]:
        ids = self.object_ids
        return [(i, j, self.rel(i, j)) for i in ids for j in ids if i != j]

    def counts(self) -> dict[str, int]:
        out = {lab: 0 for lab in LABELS}
        for _, _, lab in self.matrix():
            out[lab] += 1
        return out

    def bidirectional_pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j, lab in self.matrix() if lab == BIDIRECTIONAL and i < j]

    def descendants_closure(self) -> dict[int, frozenset]:
        """Transitive closure of the parent relation (all direct and indirect supporters)."""
        out = {}
        for i in self.object_ids:
            seen, stack = set(), list(self.parents[i])
            while stack:
                p = stack.pop()
                if p not in seen:
                    seen.add(p)
                    stack.extend(self.parents[p])
            seen.discard(i)
            out[i] = frozenset(seen)
        return out

    def is_acyclic_modulo_bidirectional(self) -> bool:
        bi = {frozenset(p) for p in self.bidirectional_pairs()}
        graph = {i: [p for p in self.parents[i] if frozenset((i, p)) not in bi] for i in self.object_ids}
        state = {}

        def visit(u):
            state[u] = 1
            for v in graph[u]:
                if state.get(v) == 1 or (v not in state and not visit(v)):
                    return False
            state[u] = 2
            return True

        return all(state.get(u) == 2 or visit(u) for u in graph)

    def to_dict(self) -> dict:
        return {"parents": {str(k): sorted(v) for k, v in sorted(self.parents.items())},
                "matrix": [[i, j, lab] for i, j, lab in self.matrix()]}

    @classmethod
    def from_dict(cls, d) -> MRG:
        return cls({int(k): set(v) for k, v in d["parents"].items()})


def graspable_set(mrg: MRG) -> set[int]:
    """Objects that support nothing and can be removed right now."""
    supporting = set().union(*mrg.parents.values()) if mrg.parents else set()
    return set(mrg.object_ids) - supporting


def order_check(mrg: MRG, order) -> tuple[bool, str]:
    """Validate a removal order; returns ``(ok, reason)``."""
    order = [int(x) for x in order]
    if sorted(order) != mrg.object_ids:
        raise ValueError("order must be a permutation of the scene's objects")
    bi = mrg.bidirectional_pairs()
    if bi:
        return False, f"bidirectional pair {bi[0]} admits no sequential order"
    rank = {o: k for k, o in enumerate(order)}
    for i, j, lab in mrg.matrix():
        if lab == PARENT and rank[j] > rank[i]:
            return False, f"{i} supports {j} but is removed first"
    return True, ""


def order_valid(mrg: MRG, order) -> bool:
    return order_check(mrg, order)[0]


# ----------------------------------------------------------------------------
# extraction
# ----------------------------------------------------------------------------

def _aabb(world: World, body_id: int) -> np.ndarray:
    pts = world.pose(body_id).apply(world.shape(body_id).vertices)
    return np.concatenate([pts.min(axis=0), pts.max(axis=0)])


def _run_trial(world: World, target: int, cfg: MrgConfig, track: bool):
    """Simulate until ``cfg.perturb_steps`` or until the target sleeps."""
    swept = _aabb(world, target) if track else None
    for _ in range(cfg.perturb_steps):
        if world.is_sleeping(target):
            break
        world.step(cfg.dt)
        if track:
            box = _aabb(world, target)
            swept = np.concatenate([np.minimum(swept[:3], box[:3]), np.maximum(swept[3:], box[3:])])
    return world.pose(target), swept


def _target_world(record: SceneRecord, lib: ModelLibrary, target: int, params=None) -> World:
    world = restore_scene(record, lib, params)
    for b in world.body_ids:
        world.set_mode(b, DYNAMIC if b == target else STATIC)
    return world


def parents_of(record: SceneRecord, lib: ModelLibrary, target: int, cfg: MrgConfig | None = None,
               params=None, prune: bool = True) -> set[int]:
    """Parent list of one object.

    Every neighbour is tested from a fresh restore. With ``prune`` the trial
    for a neighbour whose box never comes within contact range of the
    target's swept box during the undisturbed run is skipped; such a trial
    cannot differ from the undisturbed run.
    """
    cfg = cfg or MrgConfig()
    start = record.object(target).pose
    base = _target_world(record, lib, target, params)
    margin = base.params.margin
    ref_pose, swept = _run_trial(base.clone(), target, cfg, track=prune)
    base_moved = pose_delta(start, ref_pose).exceeds(cfg.epsilon_translation, cfg.epsilon_rotation)
    if prune:
        swept = swept + np.array([-1, -1, -1, 1, 1, 1]) * (margin + 1e-6)
    out = set()
    for j in record.object_ids():
        if j == target:
            continue
        if prune:
            box = _aabb(base, j) + np.array([-1, -1, -1, 1, 1, 1]) * margin
            if np.any(box[:3] > swept[3:]) or np.any(swept[:3] > box[3:]):
                if base_moved:
                    out.add(j)
                continue
        world = base.clone()
        world.remove_body(j)
        final, _ = _run_trial(world, target, cfg, track=False)
        if pose_delta(start, final).exceeds(cfg.epsilon_translation, cfg.epsilon_rotation):
            out.add(j)
    return out


def extract_mrg(record: SceneRecord, lib: ModelLibrary, cfg: MrgConfig | None = None, params=None,
                prune: bool = True) -> MRG:
    """Parent lists for every object of a recorded scene; the record is not modified."""
    cfg = cfg or MrgConfig()
    return MRG({i: parents_of(record, lib, i, cfg, params, prune) for i in record.object_ids()})
