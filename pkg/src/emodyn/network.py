"""Temporal emotion networks from fitted cluster parameters.

The observed-variable one-step map for a cluster is C (Id + delta A) C+,
with C+ the Moore-Penrose pseudoinverse; its entries form a signed directed
graph over the seven emotions. Centrality is out-expected influence: the
signed sum of a node's outgoing cross-edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import EMOTIONS, ClusterParameters

_SV_RTOL = 1e-12


def pseudoinverse(matrix: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below 1e-12 times the largest are treated as zero.
    """
    m = np.asarray(matrix, dtype=float)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(m.T.shape)
    inv = np.where(s > _SV_RTOL * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def transition_matrix(params: ClusterParameters, delta: float) -> np.ndarray:
    """Observed-variable one-step map C (Id + delta A) C+ for a fixed gap."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    C = params.C
    step = np.eye(params.latent_dim) + delta * params.A
    return C @ step @ pseudoinverse(C)


@dataclass(frozen=True)
class TemporalNetwork:
    """Signed weighted directed graph over the seven emotion nodes.

    weights[r, c] is the influence of emotion c at the previous step on
    emotion r at the current step; delta is the step length in weeks.
    """

    weights: np.ndarray
    delta: float
    nodes: tuple = EMOTIONS

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def build_network(T: np.ndarray, delta: float) -> TemporalNetwork:
    """Wrap a transition matrix as a network; edge weights stored verbatim."""
    T = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T)):
        raise ValueError("non-finite entries in transition matrix")
    n = len(EMOTIONS)
    if T.shape != (n, n):
        raise ValueError(f"expected {n}x{n} matrix, got {T.shape}")
    return TemporalNetwork(weights=T, delta=float(delta))


def out_expected_influence(net: TemporalNetwork) -> np.ndarray:
    """Signed sum of each node's outgoing cross-edges (self-loops excluded)."""
    W = net.weights
    return W.sum(axis=0) - np.diag(W)


def centrality_ranking(scores_per_cluster: dict) -> dict:
    """Rank emotions per cluster by descending score; report rank deltas.

    Ties break toward the canonical emotion order. Returns
    {"rankings": {cluster: [(emotion, score, rank), ...]},
     "rank_deltas": {emotion: {(c1, c2): rank_c1 - rank_c2}}}.
    """
    if not scores_per_cluster:
        raise ValueError("scores for at least one cluster required")
    rankings = {}
    ranks = {}
    for cluster, scores in scores_per_cluster.items():
        scores = np.asarray(scores, dtype=float)
        order = sorted(range(len(EMOTIONS)), key=lambda i: (-scores[i], i))
        rankings[cluster] = [(EMOTIONS[i], float(scores[i]), pos + 1) for pos, i in enumerate(order)]
        ranks[cluster] = {EMOTIONS[i]: pos + 1 for pos, i in enumerate(order)}

    clusters = sorted(scores_per_cluster)
    rank_deltas = {
        emo: {
            (c1, c2): ranks[c1][emo] - ranks[c2][emo]
            for a, c1 in enumerate(clusters)
            for c2 in clusters[a + 1:]
        }
        for emo in EMOTIONS
    }
    return {"rankings": rankings, "rank_deltas": rank_deltas}


def edge_rows(cluster: int, net: TemporalNetwork, threshold: float = 0.0) -> list:
    """CSV-ready edge list rows (cluster, from, to, weight).

    The threshold only drops edges from this display export; centrality is
    always computed from the full matrix.
    """
    W = net.weights
    rows = []
    for r, to_emotion in enumerate(EMOTIONS):
        for c, from_emotion in enumerate(EMOTIONS):
            w = float(W[r, c])
            if threshold > 0.0 and abs(w) < threshold:
                continue
            rows.append((cluster, from_emotion, to_emotion, w))
    return rows


def centrality_rows(cluster: int, net: TemporalNetwork) -> list:
    """CSV-ready centrality rows (cluster, emotion, out_expected_influence, rank)."""
    scores = out_expected_influence(net)
    ranking = centrality_ranking({cluster: scores})["rankings"][cluster]
    rank_of = {emo: rank for emo, _, rank in ranking}
    return [
        (cluster, emo, float(scores[i]), rank_of[emo])
        for i, emo in enumerate(EMOTIONS)
    ]
