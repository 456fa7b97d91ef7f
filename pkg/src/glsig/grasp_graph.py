"""Grasp-loop graph and the GL-signature.

The graph has one vertex for the robot base, one per grasping gripper and
one per attach point.  The base is joined to every other vertex; grippers
and attach points are joined when they are neighbours along the rope.
Every triangle containing a gripper closes a grasp loop, and the multiset
of the loops' h-vectors is the signature of the state.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from glsig.sim.state import SimState, rope_between
from glsig.topology import Skeleton, TopologyError, as_loop, h_vector

ANCHOR_TOL = 1e-6

BASE = "b"


class SignatureError(TopologyError):
    pass


class NoParticipants(SignatureError):
    """Nothing is grasped and nothing is attached, so no loop can exist."""


class DisconnectedPaths(SignatureError):
    pass


class MismatchedSkeleton(SignatureError):
    pass


@dataclass(frozen=True)
class GraspVertex:
    kind: str  # "base", "gripper" or "attach"
    index: int
    anchor: tuple
    loc: float | None = None

    @property
    def name(self) -> str:
        return BASE if self.kind == "base" else f"{self.kind[0]}{self.index}"


@dataclass
class GraspGraph:
    """Vertices plus edges carrying 3D paths.

    Each edge stores ``path`` running from the vertex named ``start`` to
    the other endpoint.
    """

    graph: nx.Graph
    vertices: dict

    def edges(self):
        return list(self.graph.edges)

    def path(self, u: str, v: str) -> np.ndarray:
        data = self.graph.edges[u, v]
        return data["path"] if data["start"] == u else data["path"][::-1]


def _vertex_sort_key(name: str):
    return (0 if name == BASE else 1 if name[0] == "g" else 2, int(name[1:] or 0))


def _dedupe(points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    keep = [0]
    for i in range(1, len(points)):
        if np.linalg.norm(points[i] - points[keep[-1]]) > tol:
            keep.append(i)
    return points[keep]


def arm_path(base, gripper) -> np.ndarray:
    """Base to gripper, through the shoulder when one is given."""
    pts = [np.asarray(base, dtype=float)]
    if gripper.shoulder is not None:
        pts.append(gripper.shoulder)
    pts.append(gripper.position)
    return _dedupe(np.array(pts))


def build_graph(state: SimState, base, exclude=()) -> GraspGraph:
    """Grasp-loop graph of ``state``; grippers listed in ``exclude`` are left out."""
    base = np.asarray(base, dtype=float)
    g = nx.Graph()
    vertices = {BASE: GraspVertex("base", 0, tuple(base))}
    g.add_node(BASE)

    # participants along the rope: (loc, name, world point at the vertex)
    along = []
    for i, gr in enumerate(state.grippers):
        if gr.grasping and i not in exclude:
            v = GraspVertex("gripper", i, tuple(gr.position), gr.grasp_loc)
            vertices[v.name] = v
            g.add_edge(BASE, v.name, path=arm_path(base, gr), start=BASE)
            along.append((gr.grasp_loc, v.name, gr.position))
    for i, a in enumerate(state.attach):
        v = GraspVertex("attach", i, tuple(float(c) for c in a.point), a.loc)
        vertices[v.name] = v
        g.add_edge(BASE, v.name, path=_dedupe(np.array([base, a.point], dtype=float)), start=BASE)
        along.append((a.loc, v.name, np.asarray(a.point, dtype=float)))
    if len(along) == 0 and not exclude:
        raise NoParticipants("no gripper is grasping and no attach point exists")

    along.sort(key=lambda t: (t[0], _vertex_sort_key(t[1])))
    for (la, na, pa), (lb, nb, pb) in zip(along[:-1], along[1:]):
        rope = rope_between(state.rope.points, la, lb)
        # the gripper may sit slightly off the rope; bridge the gap explicitly
        path = _dedupe(np.vstack([pa[None], rope, pb[None]]))
        g.add_edge(na, nb, path=path, start=na)
    return GraspGraph(g, vertices)


def extract_gripper_cycles(gg: GraspGraph) -> list[tuple[str, str, str]]:
    """All triangles of the graph that contain at least one gripper.

    Each triangle is returned once, as a vertex tuple in a fixed order
    (base first when present, then grippers, then attach points).
    """
    out = set()
    for cyc in nx.simple_cycles(gg.graph, length_bound=3):
        if len(cyc) == 3 and any(n[0] == "g" for n in cyc):
            out.add(tuple(sorted(cyc, key=_vertex_sort_key)))
    return sorted(out, key=lambda c: [_vertex_sort_key(n) for n in c])


def cycle_to_loop(gg: GraspGraph, cycle) -> np.ndarray:
    """Concatenate the three edge paths of ``cycle`` into one closed loop."""
    pieces = []
    n = len(cycle)
    for k in range(n):
        u, v = cycle[k], cycle[(k + 1) % n]
        if not gg.graph.has_edge(u, v):
            raise DisconnectedPaths(f"cycle {cycle} uses a missing edge ({u}, {v})")
        path = gg.path(u, v)
        if np.linalg.norm(path[0] - gg.vertices[u].anchor) > ANCHOR_TOL:
            raise DisconnectedPaths(f"edge ({u}, {v}) does not start at the anchor of {u}")
        if np.linalg.norm(path[-1] - gg.vertices[v].anchor) > ANCHOR_TOL:
            raise DisconnectedPaths(f"edge ({u}, {v}) does not end at the anchor of {v}")
        pieces.append(path[:-1])
    loop = _dedupe(np.vstack(pieces))
    if np.linalg.norm(loop[-1] - loop[0]) <= 1e-12:
        loop = loop[:-1]
    return as_loop(loop)


@dataclass(frozen=True)
class GLSignature:
    """Multiset of h-vectors; stored sorted so equality ignores order."""

    entries: tuple = ()
    size: int | None = field(default=None, compare=False)

    def __post_init__(self):
        ents = tuple(sorted(tuple(int(x) for x in e) for e in self.entries))
        if any(x < 0 for e in ents for x in e):
            raise ValueError("h-vectors must be non-negative")
        lengths = {len(e) for e in ents}
        if len(lengths) > 1:
            raise MismatchedSkeleton(f"h-vectors of different lengths: {sorted(lengths)}")
        size = self.size if self.size is not None else (lengths.pop() if lengths else None)
        if ents and size is not None and len(ents[0]) != size:
            raise MismatchedSkeleton(f"h-vectors have length {len(ents[0])}, expected {size}")
        object.__setattr__(self, "entries", ents)
        object.__setattr__(self, "size", size)

    def counts(self) -> Counter:
        return Counter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def text(self) -> str:
        return "{" + ",".join("[" + ",".join(str(x) for x in e) + "]" for e in self.entries) + "}"

    __str__ = text

    @classmethod
    def parse(cls, text: str, size: int | None = None) -> "GLSignature":
        s = re.sub(r"\s+", "", text)
        if not (s.startswith("{") and s.endswith("}")):
            raise ValueError(f"not a signature: {text!r}")
        body = s[1:-1]
        if body == "":
            return cls((), size)
        if not re.fullmatch(r"\[(\d+(,\d+)*)?\](,\[(\d+(,\d+)*)?\])*", body):
            raise ValueError(f"not a signature: {text!r}")
        vecs = [tuple(int(x) for x in m.split(",") if x) for m in re.findall(r"\[([^\]]*)\]", body)]
        return cls(tuple(vecs), size)


def signatures_equal(a: GLSignature, b: GLSignature) -> bool:
    if a.size is not None and b.size is not None and a.size != b.size:
        raise MismatchedSkeleton(f"signatures over {a.size} and {b.size} skeleton loops")
    return a.entries == b.entries


@dataclass
class SignatureReport:
    signature: GLSignature
    graph: GraspGraph
    cycles: list
    loops: list
    hvecs: list
    removed: list


def _removal_choice(state: SimState, cycle, keypoint: float) -> int:
    grippers = [int(n[1:]) for n in cycle if n[0] == "g"]

    def key(i):
        # rounded so that float noise does not break ties
        return (round(abs(state.grippers[i].grasp_loc - keypoint), 9), i)

    return max(grippers, key=key)


def signature_details(state: SimState, skel: Skeleton, base, keypoint: float = 1.0) -> SignatureReport:
    """Compute the signature and keep every intermediate for inspection."""
    removed: list[int] = []
    while True:
        gg = build_graph(state, base, exclude=removed)
        cycles = extract_gripper_cycles(gg)
        loops, hvecs = [], []
        drop = None
        for cyc in cycles:
            loop = cycle_to_loop(gg, cyc)
            try:
                hv = h_vector(loop, skel)
            except TopologyError as exc:
                raise type(exc)(f"grasp loop {'-'.join(cyc)}: {exc}") from exc
            loops.append(loop)
            hvecs.append(hv)
            if sum(n[0] == "g" for n in cyc) == 2 and not any(hv):
                drop = _removal_choice(state, cyc, keypoint)
                break
        if drop is None:
            sig = GLSignature(tuple(hvecs), len(skel))
            return SignatureReport(sig, gg, cycles, loops, hvecs, removed)
        removed.append(drop)


def compute_signature(state: SimState, skel: Skeleton, base, keypoint: float = 1.0) -> GLSignature:
    """GL-signature of ``state`` with redundant grippers removed.

    When a loop through two grippers links nothing, the gripper whose
    grasp is farther from ``keypoint`` is dropped (the higher index on a
    tie) and cycle extraction starts over.
    """
    return signature_details(state, skel, base, keypoint).signature
