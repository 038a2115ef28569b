"""Reading and writing pose graphs in the g2o text format.

Supported records:

    VERTEX_SE2 id x y theta
    EDGE_SE2 i j dx dy dtheta  I11 I12 I13 I22 I23 I33
    VERTEX_SE3:QUAT id x y z qx qy qz qw
    EDGE_SE3:QUAT i j dx dy dz qx qy qz qw  I11 ... I66 (21 upper entries)

Information matrices are stored row-major upper-triangular and rebuilt
symmetric. Quaternions are normalized on ingest.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_to_rotmat, rot2, rotmat_to_quat, so_log


@dataclass
class PoseGraphEdge:
    i: int
    j: int
    rel_pose: Pose
    information: np.ndarray

    @property
    def is_loop_closure(self) -> bool:
        return self.j != self.i + 1


@dataclass
class PoseGraph:
    dim: int
    poses: list = field(default_factory=list)   # index == vertex id
    edges: list = field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return len(self.poses)

    @property
    def loop_closures(self) -> list:
        return [e for e in self.edges if e.is_loop_closure]

    @property
    def chain_edges(self) -> list:
        return [e for e in self.edges if not e.is_loop_closure]


def _upper_to_symmetric(values, n):
    M = np.zeros((n, n))
    it = iter(values)
    for r in range(n):
        for c in range(r, n):
            M[r, c] = M[c, r] = next(it)
    return M


def _symmetric_to_upper(M):
    n = M.shape[0]
    return [M[r, c] for r in range(n) for c in range(r, n)]


def _check_information(M, lineno):
    if np.linalg.eigvalsh(M).min() < -1e-9:
        warnings.warn(f"line {lineno}: information matrix is not PSD")


def load_g2o(path) -> PoseGraph:
    """Parse a g2o text file into a PoseGraph; vertex ids must be dense from 0."""
    vertices = {}
    edges = []
    dim = None

    def set_dim(d, lineno):
        nonlocal dim
        if dim is None:
            dim = d
        elif dim != d:
            raise ValueError(f"line {lineno}: mixed SE2/SE3 records in one file")

    field_counts = {"VERTEX_SE2": 5, "EDGE_SE2": 12,
                    "VERTEX_SE3:QUAT": 9, "EDGE_SE3:QUAT": 31}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            tag = tokens[0]
            if tag not in field_counts:
                raise ValueError(f"line {lineno}: unknown record tag {tag!r}")
            if len(tokens) != field_counts[tag]:
                raise ValueError(
                    f"line {lineno}: {tag} record has {len(tokens) - 1} fields, "
                    f"expected {field_counts[tag] - 1}")
            try:
                if tag == "VERTEX_SE2":
                    set_dim(2, lineno)
                    vid = int(tokens[1])
                    x, y, theta = map(float, tokens[2:5])
                    vertices[vid] = Pose(rot2(theta), np.array([x, y]))
                elif tag == "EDGE_SE2":
                    set_dim(2, lineno)
                    i, j = int(tokens[1]), int(tokens[2])
                    dx, dy, dth = map(float, tokens[3:6])
                    info = _upper_to_symmetric(map(float, tokens[6:12]), 3)
                    _check_information(info, lineno)
                    edges.append(PoseGraphEdge(i, j, Pose(rot2(dth), np.array([dx, dy])), info))
                elif tag == "VERTEX_SE3:QUAT":
                    set_dim(3, lineno)
                    vid = int(tokens[1])
                    x, y, z, qx, qy, qz, qw = map(float, tokens[2:9])
                    vertices[vid] = Pose(quat_to_rotmat(qx, qy, qz, qw), np.array([x, y, z]))
                else:
                    set_dim(3, lineno)
                    i, j = int(tokens[1]), int(tokens[2])
                    vals = list(map(float, tokens[3:10]))
                    info = _upper_to_symmetric(map(float, tokens[10:31]), 6)
                    _check_information(info, lineno)
                    rel = Pose(quat_to_rotmat(*vals[3:7]), np.array(vals[:3]))
                    edges.append(PoseGraphEdge(i, j, rel, info))
            except ValueError as exc:
                if "line" in str(exc):
                    raise
                raise ValueError(f"line {lineno}: malformed {tag} record: {exc}") from exc

    if not vertices:
        return PoseGraph(dim=dim or 2)
    ids = sorted(vertices)
    if ids != list(range(len(ids))):
        raise ValueError("vertex ids are not dense from 0")
    for e in edges:
        if e.i not in vertices or e.j not in vertices:
            raise ValueError(f"edge ({e.i}, {e.j}) references an unknown vertex")
    return PoseGraph(dim=dim, poses=[vertices[i] for i in ids], edges=edges)


def _fmt(v) -> str:
    # repr of the Python float is the shortest exact decimal round-trip
    return repr(float(v))


def save_g2o(graph: PoseGraph, path) -> None:
    """Write a PoseGraph back out in g2o text form (repr-precision floats)."""
    lines = []
    if graph.dim == 2:
        for vid, p in enumerate(graph.poses):
            theta = so_log(p.rotation)[0]
            lines.append(f"VERTEX_SE2 {vid} {_fmt(p.translation[0])} "
                         f"{_fmt(p.translation[1])} {_fmt(theta)}")
        for e in graph.edges:
            t = e.rel_pose.translation
            theta = so_log(e.rel_pose.rotation)[0]
            upper = " ".join(_fmt(v) for v in _symmetric_to_upper(e.information))
            lines.append(f"EDGE_SE2 {e.i} {e.j} {_fmt(t[0])} {_fmt(t[1])} "
                         f"{_fmt(theta)} {upper}")
    else:
        for vid, p in enumerate(graph.poses):
            q = rotmat_to_quat(p.rotation)
            t = p.translation
            fields = " ".join(_fmt(v) for v in (*t, *q))
            lines.append(f"VERTEX_SE3:QUAT {vid} {fields}")
        for e in graph.edges:
            q = rotmat_to_quat(e.rel_pose.rotation)
            t = e.rel_pose.translation
            fields = " ".join(_fmt(v) for v in (*t, *q))
            upper = " ".join(_fmt(v) for v in _symmetric_to_upper(e.information))
            lines.append(f"EDGE_SE3:QUAT {e.i} {e.j} {fields} {upper}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
