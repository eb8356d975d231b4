"""Spatial deployment, unit-disk neighbor graph and observation-disk flags."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .params import SystemParams


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple[float, float]


@dataclass(frozen=True)
class Topology:
    """An immutable deployment.

    ``positions`` is an ``(n, 2)`` array; ``adjacency[i]`` is the sorted
    tuple of neighbor ids of node ``i``.
    """

    positions: np.ndarray
    adjacency: tuple[tuple[int, ...], ...]
    abnormality_pos: tuple[float, float]
    inside: np.ndarray
    R: float

    def __post_init__(self):
        self.positions.setflags(write=False)
        self.inside.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def nodes(self) -> list[Node]:
        return [Node(i, (float(x), float(y))) for i, (x, y) in enumerate(self.positions)]

    def distance_to_abnormality(self) -> np.ndarray:
        return np.hypot(*(self.positions - np.asarray(self.abnormality_pos)).T)

    def dump(self) -> str:
        """Plain-text table, one row per node: ``id x y inside``."""
        buf = io.StringIO()
        buf.write(f"# R={self.R!r} abnormality={self.abnormality_pos[0]!r},{self.abnormality_pos[1]!r}\n")
        buf.write("id\tx\ty\tinside\n")
        for i, (x, y) in enumerate(self.positions.tolist()):
            buf.write(f"{i}\t{x!r}\t{y!r}\t{int(self.inside[i])}\n")
        return buf.getvalue()

    @classmethod
    def load(cls, text: str, r_c: float) -> "Topology":
        lines = text.splitlines()
        meta = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
        R = float(meta["R"])
        ax, ay = (float(v) for v in meta["abnormality"].split(","))
        rows = [ln.split("\t") for ln in lines[2:] if ln.strip()]
        for k, row in enumerate(rows):
            if int(row[0]) != k:
                raise ValueError(f"node ids must be contiguous from 0; row {k} has id {row[0]}")
        pos = np.array([[float(r[1]), float(r[2])] for r in rows], dtype=float).reshape(-1, 2)
        inside = np.array([r[3] == "1" for r in rows], dtype=bool)
        return cls(pos, neighbor_graph(pos, r_c), (ax, ay), inside, R)


def within_observation(position: Sequence[float], abnormality_pos: Sequence[float], r_d: float) -> bool:
    """True iff the point is at distance ``<= r_d`` from the abnormality."""
    if r_d <= 0:
        raise ValueError("r_d must be positive")
    dx = position[0] - abnormality_pos[0]
    dy = position[1] - abnormality_pos[1]
    return bool(np.hypot(dx, dy) <= r_d)


def neighbor_graph(positions: np.ndarray, r_c: float) -> tuple[tuple[int, ...], ...]:
    """Unit-disk graph (edge iff distance ``<= r_c``) via grid bucketing.

    Points are hashed into square cells of side ``r_c``; only pairs in the
    same or adjacent cells are distance-checked.
    """
    if r_c <= 0:
        raise ValueError("r_c must be positive")
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(positions)
    if n == 0:
        return ()
    cells = np.floor((positions - positions.min(axis=0)) / r_c).astype(np.int64)
    # one spare row/column on each side so neighbor keys never alias
    height = int(cells[:, 1].max()) + 3
    key = (cells[:, 0] + 1) * height + (cells[:, 1] + 1)
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    pos = positions[order]

    src_parts, dst_parts = [], []
    r2 = r_c * r_c
    # half-neighborhood so each cell pair is visited once
    for dx, dy in ((0, 0), (1, -1), (1, 0), (1, 1), (0, 1)):
        target = sorted_key + dx * height + dy
        lo = np.searchsorted(sorted_key, target, side="left")
        hi = np.searchsorted(sorted_key, target, side="right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            continue
        i = np.repeat(np.arange(n), counts)
        j = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + np.repeat(lo, counts)
        if dx == 0 and dy == 0:
            keep = j > i
            i, j = i[keep], j[keep]
        d = pos[i] - pos[j]
        close = (d * d).sum(axis=1) <= r2
        src_parts.append(order[i[close]])
        dst_parts.append(order[j[close]])

    src = np.concatenate(src_parts + dst_parts)
    dst = np.concatenate(dst_parts + src_parts)
    by = np.lexsort((dst, src))
    src, dst = src[by], dst[by]
    bounds = np.searchsorted(src, np.arange(n + 1))
    flat = dst.tolist()
    return tuple(tuple(flat[bounds[k]:bounds[k + 1]]) for k in range(n))


def neighbor_graph_bruteforce(positions: np.ndarray, r_c: float) -> tuple[tuple[int, ...], ...]:
    """O(n^2) reference for :func:`neighbor_graph`."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    d = positions[:, None, :] - positions[None, :, :]
    close = (d * d).sum(axis=2) <= r_c * r_c
    np.fill_diagonal(close, False)
    return tuple(tuple(np.nonzero(row)[0].tolist()) for row in close)


def sample_deployment(
    params: SystemParams,
    rng: np.random.Generator,
    fixed_n: int | None = None,
    abnormality_pos: tuple[float, float] | None = None,
) -> Topology:
    """Drop nodes on the ``R x R`` square.

    The count is Poisson with mean ``R**2 * lam`` unless ``fixed_n`` is
    given. The abnormality defaults to the field center.
    """
    R = params.R
    count = int(fixed_n) if fixed_n is not None else int(rng.poisson(R * R * params.lam))
    positions = rng.uniform(0.0, R, size=(count, 2))
    if abnormality_pos is None:
        abnormality_pos = (R / 2, R / 2)
    abn = (float(abnormality_pos[0]), float(abnormality_pos[1]))
    dist = np.hypot(positions[:, 0] - abn[0], positions[:, 1] - abn[1])
    return Topology(positions, neighbor_graph(positions, params.r_c), abn, dist <= params.r_d, R)
