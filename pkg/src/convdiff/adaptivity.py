"""Marking, mesh adaptation between steps, and step-size control.

Dörfler marking operates on squared indicator sums; mesh changes apply
coarsening before refinement and must stay gradual: the overlay of the
old and new mesh may not contain a triangle more than twice smaller in
diameter than its container in either mesh.  Step-size control
equilibrates the spatial against the linear temporal indicator using
only computable quantities.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import (refine, coarsen, common_refinement, uniform_refine,
                   mesh_metrics, ancestor_map, _forest_index)

__all__ = ["AdaptPolicy", "AdaptReport", "mark_doerfler", "mark_coarsen",
           "adapt_space", "control_timestep"]

_TINY = 1e-300
_shape_bounds = {}


@dataclass
class AdaptPolicy:
    """Knobs for the between-step adaptation loop."""
    enabled: bool = True
    refine_fraction: float = 0.5
    coarsen_fraction: float = 0.05
    adapt_time: bool = False
    tau_min: float = 1e-8
    tau_max: float = math.inf

    def __post_init__(self):
        for name in ("refine_fraction", "coarsen_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError("%s must lie in [0, 1]" % name)
        if self.tau_min > self.tau_max:
            raise ValueError("tau_min exceeds tau_max")


@dataclass
class AdaptReport:
    mesh: object
    refined: np.ndarray
    coarsened_pairs: list
    skipped_coarsen: list
    conflicts: list
    rolled_back: int
    transition: float
    shape: float

    @property
    def changed(self):
        return bool(len(self.refined) or len(self.coarsened_pairs))


def mark_doerfler(per_element, fraction):
    """Smallest index set whose squared sum reaches fraction * total,
    filling from the largest indicator down; ties resolved by element
    index."""
    vals = np.asarray(per_element, dtype=float)
    if vals.size and vals.min() < 0.0:
        raise ValueError("indicator values must be non-negative")
    sq = vals * vals
    order = np.argsort(-sq, kind="stable")
    csum = np.cumsum(sq[order])
    total = csum[-1] if vals.size else 0.0
    if fraction <= 0.0 or total <= 0.0:
        return np.array([], dtype=np.int64)
    k = int(np.searchsorted(csum, fraction * total, side="left"))
    k = min(k, vals.size - 1)
    return np.sort(order[:k + 1])


def mark_coarsen(per_element, fraction):
    """Largest low-indicator prefix whose squared sum stays within
    fraction * total, filling from the smallest indicator up."""
    vals = np.asarray(per_element, dtype=float)
    if vals.size and vals.min() < 0.0:
        raise ValueError("indicator values must be non-negative")
    sq = vals * vals
    total = sq.sum()
    if fraction <= 0.0 or total <= 0.0:
        return np.array([], dtype=np.int64)
    order = np.argsort(sq, kind="stable")
    csum = np.cumsum(sq[order])
    k = int(np.searchsorted(csum, fraction * total, side="right"))
    return np.sort(order[:k])


def _forest_shape_bound(root):
    """Worst shape metric over the similarity classes the bisection rule
    can generate from the root mesh (classes repeat with period two)."""
    key = id(root)
    if key not in _shape_bounds:
        m0 = mesh_metrics(root).shape
        m1 = mesh_metrics(uniform_refine(root)).shape
        m2 = mesh_metrics(uniform_refine(root, 2)).shape
        _shape_bounds[key] = max(m0, m1, m2)
    return _shape_bounds[key]


def _transition(old, new):
    """Largest diameter ratio of a containing triangle (in either mesh)
    over an overlay triangle."""
    if new is old:
        return 1.0
    return max(common_refinement(old, new).transition,
               common_refinement(new, old).transition)


def _merged_pairs(mesh, inter, marked):
    """Sibling pairs of `mesh` that the coarsening into `inter` actually
    merged, identified by their vanished forest codes."""
    if inter is mesh:
        return []
    idx = _forest_index(inter)
    forest = _forest_index(mesh)
    pairs = []
    for i in np.asarray(marked, dtype=np.int64):
        i = int(i)
        c = int(mesh.code[i])
        if c % 2 == 1 or mesh.depth[i] == 0:
            continue
        r = int(mesh.root_tri[i])
        if (r, c) not in idx:
            pairs.append((i, forest[(r, c + 1)]))
    return pairs


def adapt_space(mesh, marked_refine, marked_coarsen):
    """Coarsen the second set, then refine the first (with closure).

    Returns an AdaptReport whose mesh is the adapted triangulation.
    Coarsening that the later refinement closure immediately undoes is
    reported as a conflict; coarsening is rolled back while the
    transition bound 2 would be violated."""
    marked_refine = np.unique(np.asarray(marked_refine, dtype=np.int64))
    marked_coarsen = np.unique(np.asarray(marked_coarsen, dtype=np.int64))
    if np.intersect1d(marked_refine, marked_coarsen).size:
        raise ValueError("refine and coarsen sets overlap")

    coarsen_set = marked_coarsen
    rolled_back = 0
    while True:
        if coarsen_set.size:
            inter, creport = coarsen(mesh, coarsen_set)
            merged = _merged_pairs(mesh, inter, coarsen_set)
            skipped = creport.skipped
        else:
            inter, merged, skipped = mesh, [], np.array([], dtype=np.int64)
        if marked_refine.size:
            if inter is mesh:
                ref_ids = marked_refine
            else:
                ref_ids = np.unique(
                    ancestor_map(mesh, inter)[marked_refine])
            new = refine(inter, ref_ids)
        else:
            new = inter

        trans = _transition(mesh, new)
        if trans <= 2.0 + 1e-9 or not merged:
            break
        # gradualness violated: give back the most recent half of the
        # coarsening and try again
        keep = len(merged) // 2
        dropped = merged[keep:]
        rolled_back += sum(2 for _ in dropped)
        coarsen_set = np.array(sorted(
            set(int(i) for pair in merged[:keep] for i in pair)),
            dtype=np.int64)
        if not coarsen_set.size and not marked_refine.size:
            new = mesh
            merged, skipped = [], []
            trans = 1.0
            break

    assert trans <= 2.0 + 1e-9, "mesh transition bound violated"
    if new is not mesh:
        shape = mesh_metrics(new).shape
        assert shape <= _forest_shape_bound(mesh.root) + 1e-9, \
            "shape metric left the forest bound"
    else:
        shape = mesh_metrics(mesh).shape

    # merged parents that the refinement closure split right back
    conflicts = []
    if merged and new is not inter:
        codes = _forest_index(new)
        for (i, j) in merged:
            r, c = int(mesh.root_tri[i]), int(mesh.code[i]) >> 1
            if (r, c) not in codes:
                conflicts.append((i, j))
    return AdaptReport(mesh=new, refined=marked_refine,
                       coarsened_pairs=merged, skipped_coarsen=skipped,
                       conflicts=conflicts, rolled_back=rolled_back,
                       transition=trans, shape=shape)


def control_timestep(indicators, targets):
    """Next step size from the spatial / temporal indicator ratio, with
    the change per step capped to a factor of two."""
    ratio = math.sqrt(indicators.eta
                      / max(indicators.temporal_linear, _TINY))
    tau = indicators.tau * min(max(ratio, 0.5), 2.0)
    return min(max(tau, targets.tau_min), targets.tau_max)
