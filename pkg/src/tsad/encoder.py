"""Encoder stack: dynamic kNN graph, EdgeConv, and per-sensor temporal
self-attention, four layers deep.

Each layer flattens its input to the l_w*S point set (time-major point
order), rebuilds the kNN graph from the *current* features, aggregates
edge features by channel-wise max, then attends along the time axis
independently per sensor. All dimension growth happens in the EdgeConv
maps; attention and the feed-forward sublayer preserve width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tsad import autodiff as ad
from tsad.autodiff import ShapeError, Tensor
from tsad.initializers import kaiming_uniform, ones, zeros

try:
    import numba

    numba.config.THREADING_LAYER = "workqueue"
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a normal install
    _HAVE_NUMBA = False

__all__ = [
    "KnnGraph",
    "EncoderLayerParams",
    "knn_graph",
    "edgeconv_forward",
    "attention_block",
    "encode",
    "encode_batch",
]


@dataclass
class KnnGraph:
    """Row i lists the k nearest points to point i (itself included),
    sorted by ascending distance with ties broken by ascending index."""

    neighbor_indices: np.ndarray  # [n, k] int64


def _exact_sq_dist_rows(points: np.ndarray, rows: np.ndarray) -> np.ndarray:
    # Exact (x_i - x_j)^2 sums for the selected rows against all points,
    # chunked to bound temporaries; per-pair arithmetic matches a naive
    # oracle bit for bit.
    n, d = points.shape
    out = np.empty((len(rows), n))
    chunk = max(1, 8_000_000 // max(1, n * d))
    for s in range(0, len(rows), chunk):
        diff = points[rows[s : s + chunk], None, :] - points[None, :, :]
        out[s : s + chunk] = (diff * diff).sum(axis=-1)
    return out


_CANDIDATE_PAD = 8

if _HAVE_NUMBA:

    @numba.njit(parallel=True, cache=True)
    def _knn_select(points, k):  # pragma: no cover - exercised via knn_graph
        n, d = points.shape
        out = np.empty((n, k), dtype=np.int64)
        for i in numba.prange(n):
            best_d = np.full(k, np.inf)
            best_j = np.full(k, -1, dtype=np.int64)
            for j in range(n):
                dist = 0.0
                for c in range(d):
                    diff = points[i, c] - points[j, c]
                    dist += diff * diff
                if dist >= best_d[k - 1]:
                    continue  # on equality the earlier (lower) index stays
                pos = k - 1
                while pos > 0 and best_d[pos - 1] > dist:
                    best_d[pos] = best_d[pos - 1]
                    best_j[pos] = best_j[pos - 1]
                    pos -= 1
                best_d[pos] = dist
                best_j[pos] = j
            out[i] = best_j
        return out


def knn_graph(points: np.ndarray, k: int) -> KnnGraph:
    """Exact k-nearest-neighbour indices under Euclidean distance.

    Self-distance is exactly zero, so each point appears in its own row
    (absent pathological duplicate floods). Recomputed from current
    features at every layer of every forward pass.

    Candidates are preselected with a Gram-matrix distance (fast BLAS
    path) and re-ranked by exact per-pair distances; rows where rounding
    or ties could straddle the candidate boundary fall back to a fully
    exact scan, so results always match a brute-force all-pairs oracle.
    """
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= {n}, got {k}")

    if _HAVE_NUMBA and k <= 64:
        points = np.ascontiguousarray(points)
        return KnnGraph(neighbor_indices=_knn_select(points, k))

    pad = min(n, k + _CANDIDATE_PAD)
    if pad == n:
        d2 = _exact_sq_dist_rows(points, np.arange(n))
        order = np.argsort(d2, axis=1, kind="stable")
        return KnnGraph(neighbor_indices=order[:, :k].astype(np.int64))

    # Gram-form distances are approximate only in rounding; the exact
    # re-rank below plus the tolerance guard restore oracle equality
    approx = points @ points.T
    approx *= -2.0
    sq_norms = (points * points).sum(axis=1)
    approx += sq_norms[:, None]
    approx += sq_norms[None, :]
    cand = np.argpartition(approx, pad - 1, axis=1)[:, :pad]
    cand.sort(axis=1)  # index order first; a stable value sort keeps it on ties

    # exact distances for the candidate set only
    exact = np.empty((n, pad))
    chunk = max(1, 8_000_000 // max(1, pad * d))
    for s in range(0, n, chunk):
        diff = points[s : s + chunk, None, :] - points[cand[s : s + chunk]]
        exact[s : s + chunk] = (diff * diff).sum(axis=-1)
    order = np.argsort(exact, axis=1, kind="stable")
    neighbors = np.take_along_axis(cand, order, axis=1)[:, :k]
    kth = np.take_along_axis(exact, order, axis=1)[:, k - 1]

    # fall back to an exact scan wherever the preselection could have
    # dropped a true neighbour (boundary inside rounding error, or a tie
    # flood larger than the padding); rounding scales with point norms
    tol = 1e-10 * (1.0 + float(sq_norms.max()))
    suspect = np.flatnonzero((approx <= (kth + tol)[:, None]).sum(axis=1) > pad)
    if suspect.size:
        d2 = _exact_sq_dist_rows(points, suspect)
        full_order = np.argsort(d2, axis=1, kind="stable")
        neighbors[suspect] = full_order[:, :k]
    return KnnGraph(neighbor_indices=neighbors.astype(np.int64))


def edgeconv_forward(h: Tensor, graph: KnnGraph, theta: Tensor, phi: Tensor) -> Tensor:
    """EdgeConv aggregation: max_j ReLU(theta (h_j - h_i) + phi h_i).

    `h` is the [n, d_in] point-feature matrix; `theta`/`phi` are bias-free
    d_in -> d_out linear maps. Returns [n, d_out]. The neighbour products
    run as one flat [n*k, d_in] matmul.
    """
    n, d_in = h.shape
    if graph.neighbor_indices.shape[0] != n:
        raise ShapeError(
            f"graph built over {graph.neighbor_indices.shape[0]} points, features have {n}"
        )
    d_out = theta.shape[1]
    # theta commutes with the gather/difference: theta (h_j - h_i) is
    # computed as (theta h)_j - (theta h)_i, one [n, d_in] matmul
    h_theta = ad.matmul(h, theta)
    neighbor_term = ad.sub(ad.take(h_theta, graph.neighbor_indices),
                           ad.reshape(h_theta, (n, 1, d_out)))
    center_term = ad.reshape(ad.matmul(h, phi), (n, 1, d_out))
    return ad.reduce_max(ad.relu(ad.add(neighbor_term, center_term)), axis=1)


@dataclass
class EncoderLayerParams:
    """One EdgeConv + Transformer layer's weights.

    theta/phi grow d_in -> d_out; attention (w_q/w_k/w_v/w_o) and the
    feed-forward pair keep d_out. Two layer-norm parameter sets follow the
    attention and feed-forward residuals.
    """

    theta: Tensor
    phi: Tensor
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    head_count: int

    @classmethod
    def create(cls, d_in: int, d_out: int, head_count: int,
               rng: np.random.Generator, d_ff: int | None = None):
        if d_out % head_count != 0:
            raise ValueError(f"d_out {d_out} not divisible by head_count {head_count}")
        d_ff = d_ff or d_out
        return cls(
            theta=kaiming_uniform(rng, (d_in, d_out), fan_in=d_in),
            phi=kaiming_uniform(rng, (d_in, d_out), fan_in=d_in),
            w_q=kaiming_uniform(rng, (d_out, d_out), fan_in=d_out),
            w_k=kaiming_uniform(rng, (d_out, d_out), fan_in=d_out),
            w_v=kaiming_uniform(rng, (d_out, d_out), fan_in=d_out),
            w_o=kaiming_uniform(rng, (d_out, d_out), fan_in=d_out),
            ffn_w1=kaiming_uniform(rng, (d_out, d_ff), fan_in=d_out),
            ffn_b1=zeros(d_ff),
            ffn_w2=kaiming_uniform(rng, (d_ff, d_out), fan_in=d_ff),
            ffn_b2=zeros(d_out),
            ln1_gamma=ones(d_out),
            ln1_beta=zeros(d_out),
            ln2_gamma=ones(d_out),
            ln2_beta=zeros(d_out),
            head_count=head_count,
        )

    @property
    def d_in(self) -> int:
        return self.theta.shape[0]

    @property
    def d_out(self) -> int:
        return self.theta.shape[1]

    def parameters(self, prefix: str = "") -> dict:
        named = {}
        for name in ("theta", "phi", "w_q", "w_k", "w_v", "w_o",
                     "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
                     "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
            named[f"{prefix}{name}"] = getattr(self, name)
        return named


def attention_block(x: Tensor, params: EncoderLayerParams) -> Tensor:
    """Multi-head scaled dot-product attention over the time axis.

    Input is [S, l_w, h] (any extra leading axes broadcast the same way);
    sensors are processed in parallel by tensor broadcast and never mix.
    Residual + layer norm follow the attention and feed-forward sublayers.
    """
    *lead, l_w, h = x.shape
    if h != params.d_out:
        raise ShapeError(f"attention width {h} != layer width {params.d_out}")
    nh = params.head_count
    if h % nh != 0:
        raise ShapeError(f"width {h} not divisible by head count {nh}")
    dk = h // nh
    rows = int(np.prod(lead)) if lead else 1
    squeezed = len(lead) != 1
    x3 = ad.reshape(x, (rows, l_w, h)) if squeezed else x
    flat = ad.reshape(x3, (rows * l_w, h))  # keeps projections as one dgemm

    def split_heads(t):
        return ad.transpose(ad.reshape(t, (rows, l_w, nh, dk)), (0, 2, 1, 3))

    q = split_heads(ad.matmul(flat, params.w_q))
    k = split_heads(ad.matmul(flat, params.w_k))
    v = split_heads(ad.matmul(flat, params.w_v))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)                       # [rows, nh, l_w, l_w]
    ctx = ad.matmul(attn, v)                                 # [rows, nh, l_w, dk]
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (rows * l_w, h))
    projected = ad.matmul(merged, params.w_o)
    r1 = ad.layer_norm(ad.add(flat, projected), params.ln1_gamma, params.ln1_beta)
    hidden = ad.relu(ad.add(ad.matmul(r1, params.ffn_w1), params.ffn_b1))
    ffn = ad.add(ad.matmul(hidden, params.ffn_w2), params.ffn_b2)
    out = ad.layer_norm(ad.add(r1, ffn), params.ln2_gamma, params.ln2_beta)
    return ad.reshape(out, (*lead, l_w, h))


def encode(embedded: Tensor, layers, k: int, ablation: str = "none") -> list:
    """Run the layer stack; returns every layer's [S, l_w, d_out] output.

    `embedded` is the [l_w, S, d0] embedding. `ablation` may disable the
    EdgeConv half (plain linear projection) or the Transformer half.
    """
    l_w, s, _ = embedded.shape
    n = l_w * s
    outs = []
    x = embedded
    time_major = True  # first input is [l_w, S, d]; later layers are [S, l_w, d]
    for layer in layers:
        flat = ad.reshape(x if time_major else ad.transpose(x, (1, 0, 2)), (n, layer.d_in))
        if ablation == "no_edgeconv":
            h = ad.matmul(flat, layer.phi)
        else:
            graph = knn_graph(flat.data, k)
            h = edgeconv_forward(flat, graph, layer.theta, layer.phi)
        x = ad.transpose(ad.reshape(h, (l_w, s, layer.d_out)), (1, 0, 2))
        if ablation != "no_transformer":
            x = attention_block(x, layer)
        outs.append(x)
        time_major = False
    return outs


def _batched_knn_indices(flat: np.ndarray, batch: int, n: int, k: int) -> np.ndarray:
    """Per-window kNN graphs over a [batch*n, d] stack, offset into it."""
    indices = np.empty((batch * n, k), dtype=np.int64)
    for w in range(batch):
        graph = knn_graph(flat[w * n : (w + 1) * n], k)
        indices[w * n : (w + 1) * n] = graph.neighbor_indices + w * n
    return indices


def encode_batch(embedded: Tensor, layers, k: int, ablation: str = "none") -> list:
    """Batched layer stack: [B, l_w, S, d0] -> four [B, S, l_w, d_out].

    Graphs stay per-window (points of different windows never mix); all
    tensor work runs across the whole batch at once.
    """
    b, l_w, s, _ = embedded.shape
    n = l_w * s
    outs = []
    x = embedded
    time_major = True  # first input [B, l_w, S, d]; later layers [B, S, l_w, d]
    for layer in layers:
        flat = ad.reshape(
            x if time_major else ad.transpose(x, (0, 2, 1, 3)), (b * n, layer.d_in)
        )
        if ablation == "no_edgeconv":
            h = ad.matmul(flat, layer.phi)
        else:
            indices = _batched_knn_indices(flat.data, b, n, k)
            h = edgeconv_forward(flat, KnnGraph(neighbor_indices=indices),
                                 layer.theta, layer.phi)
        x = ad.transpose(ad.reshape(h, (b, l_w, s, layer.d_out)), (0, 2, 1, 3))
        if ablation != "no_transformer":
            x = attention_block(x, layer)
        outs.append(x)
        time_major = False
    return outs
