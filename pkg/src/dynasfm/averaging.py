"""Global rotation and translation averaging over a view graph.

Rotation averaging solves camera-from-world rotations S_i such that
R_ij S_i ~ S_j for every edge: spanning-tree chaining for the initial
guess, then L1-like IRLS steps in the tangent space. Translation
averaging solves camera centers from the edge baseline directions via the
cross-product linearization, IRLS-weighted, with the scale fixed so the
mean consecutive baseline is one.
"""

from __future__ import annotations

import logging
from collections import deque

import numpy as np

from .errors import DegenerateDirections, GraphDisconnected
from .robust import huber_weights, mad_scale
from .geometry import skew, so3_exp, so3_log
from .viewgraph import ViewGraph

logger = logging.getLogger(__name__)


def spanning_tree_rotations(graph: ViewGraph) -> list[np.ndarray]:
    """Initial camera-from-world rotations by BFS chaining from frame 0."""
    if not graph.is_connected():
        raise GraphDisconnected("rotation averaging needs a connected view graph")
    S = [None] * graph.num_frames
    S[0] = np.eye(3)
    adj = graph.adjacency()
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for e in adj[node]:
            other = e.j if e.i == node else e.i
            if S[other] is not None:
                continue
            if e.i == node:
                S[other] = e.rotation @ S[node]
            else:
                S[other] = e.rotation.T @ S[node]
            queue.append(other)
    return S


def rotation_averaging(graph: ViewGraph, max_iters: int = 100,
                       step_tol: float = 1e-8, weight_floor: float = 1e-3) -> list[np.ndarray]:
    """IRLS rotation averaging; returns camera-from-world rotations, frame 0
    fixed to the identity."""
    S = spanning_tree_rotations(graph)
    n = graph.num_frames
    edges = graph.edges
    if not edges:
        raise GraphDisconnected("no edges")

    for _ in range(max_iters):
        residuals = [so3_log(S[e.j].T @ e.rotation @ S[e.i]) for e in edges]
        weights = np.array([1.0 / max(np.linalg.norm(r), weight_floor) for r in residuals])

        # weighted LS on r_e + d_i - d_j ~ 0, node 0 pinned
        A = np.zeros((3 * len(edges), 3 * (n - 1)))
        b = np.zeros(3 * len(edges))
        for k, (e, r) in enumerate(zip(edges, residuals)):
            sw = np.sqrt(weights[k])
            rows = slice(3 * k, 3 * k + 3)
            if e.i != 0:
                A[rows, 3 * (e.i - 1):3 * e.i] = sw * np.eye(3)
            if e.j != 0:
                A[rows, 3 * (e.j - 1):3 * e.j] = -sw * np.eye(3)
            b[rows] = -sw * r
        delta, *_ = np.linalg.lstsq(A, b, rcond=None)

        step = 0.0
        for i in range(1, n):
            d = delta[3 * (i - 1):3 * i]
            step = max(step, float(np.linalg.norm(d)))
            S[i] = S[i] @ so3_exp(d)
        if step < step_tol:
            break
    return S


def translation_averaging(graph: ViewGraph, rotations: list[np.ndarray],
                          irls_iters: int = 20, min_parallax_px: float = 2.0) -> np.ndarray:
    """Camera centers from edge directions; c_0 = 0, mean consecutive
    baseline normalized to 1.

    Edges whose rotation-compensated flow is below ``min_parallax_px``
    carry almost no direction information (their measured direction is
    noise), so they are dropped as long as the remaining graph stays
    connected.
    """
    if not graph.is_connected():
        raise GraphDisconnected("translation averaging needs a connected view graph")
    n = graph.num_frames
    strong = [e for e in graph.edges if e.parallax_px >= min_parallax_px]

    def usable(edge_list):
        if not edge_list or not ViewGraph(n, edge_list).is_connected():
            return False
        degree = np.zeros(n, dtype=int)
        for e in edge_list:
            degree[e.i] += 1
            degree[e.j] += 1
        # a node held by a single direction has a free scale along it
        return bool(np.all(degree >= 2))

    edges = strong if usable(strong) else graph.edges
    # world-frame unit direction of (c_j - c_i) for every edge
    dirs = []
    for e in edges:
        d = -(rotations[e.j].T @ e.direction)
        dirs.append(d / np.linalg.norm(d))

    def build(weights):
        A = np.zeros((3 * len(edges), 3 * (n - 1)))
        for k, (e, d) in enumerate(zip(edges, dirs)):
            sw = np.sqrt(weights[k])
            D = sw * skew(d)
            rows = slice(3 * k, 3 * k + 3)
            if e.j != 0:
                A[rows, 3 * (e.j - 1):3 * e.j] += D
            if e.i != 0:
                A[rows, 3 * (e.i - 1):3 * e.i] -= D
        return A

    def centers_from(x):
        c = np.zeros((n, 3))
        c[1:] = x.reshape(n - 1, 3)
        return c

    weights = np.ones(len(edges))
    x_prev = None
    for _ in range(irls_iters):
        A = build(weights)
        _, sigma, Vt = np.linalg.svd(A, full_matrices=False)
        if sigma[-2] < 1e-10 * max(sigma[0], 1e-300):
            raise DegenerateDirections("direction constraints leave the centers ambiguous")
        x = Vt[-1]
        if x_prev is not None and float(x @ x_prev) < 0:
            x = -x
        c = centers_from(x)
        res = np.array([np.linalg.norm(np.cross(d, c[e.j] - c[e.i]))
                        for e, d in zip(edges, dirs)])
        weights = huber_weights(res, 1.345 * mad_scale(res))
        x_prev = x

    c = centers_from(x_prev)
    # orient along the measured directions, then fix the scale gauge
    orient = sum(float(np.dot(c[e.j] - c[e.i], d)) * w
                 for e, d, w in zip(edges, dirs, weights))
    if orient < 0:
        c = -c
    baselines = np.linalg.norm(np.diff(c, axis=0), axis=1)
    mean_baseline = float(baselines.mean())
    if mean_baseline < 1e-12:
        raise DegenerateDirections("camera centers collapsed to a point")
    return c / mean_baseline
