"""Negative sampling, biaffine pair scoring, loss and decoding."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .encoder import NonFinite, ParamStore

log = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    eta: int = 100
    mu: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.eta < 2:
            raise ValueError("eta must be >= 2")
        if not self.mu > 0:
            raise ValueError("mu must be positive")


@dataclass(frozen=True)
class PairScore:
    subject: int
    object: int
    logit: float
    probability: float


def sample_counts(n_gold: int, eta: int, mu) -> tuple[int, int]:
    """(#pos, #neg) under the ratio cap first, then the total budget.

    Exact rational arithmetic so e.g. 17 / (1/5) floors to 85, not 84.
    """
    mu = Fraction(mu).limit_denominator(10 ** 6)
    target = math.floor(Fraction(eta) * mu / (1 + mu) + Fraction(1, 2))
    n_pos = min(n_gold, target)
    n_neg = min(math.floor(n_pos / mu), eta - n_pos)
    return n_pos, n_neg


def page_rng(seed: int, page_id: str, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(page_id.encode()), epoch])


def sample_pairs(gold, n_nodes: int, cfg: SamplerConfig, rng=None):
    """Sample labelled ordered pairs ``(subject, object, label)``.

    Positives are drawn from ``gold`` without replacement, negatives from
    the ordered non-gold pairs of distinct nodes. A page with no gold pairs
    yields nothing.
    """
    if n_nodes < 2:
        return []
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    gold = sorted({tuple(g) for g in gold})
    n_pos, n_neg = sample_counts(len(gold), cfg.eta, cfg.mu)
    if n_pos == 0:
        log.debug("page without positives contributes no samples")
        return []
    pos_idx = rng.choice(len(gold), size=n_pos, replace=False)
    out = [(gold[i][0], gold[i][1], 1) for i in sorted(pos_idx)]
    # ordered pairs i != j encoded as i * n + j
    flat = np.arange(n_nodes * n_nodes)
    flat = flat[flat // n_nodes != flat % n_nodes]
    if gold:
        g = np.asarray([a * n_nodes + b for a, b in gold])
        flat = flat[~np.isin(flat, g)]
    n_neg = min(n_neg, len(flat))
    if n_neg:
        picked = np.sort(rng.choice(flat, size=n_neg, replace=False))
        out.extend((int(f // n_nodes), int(f % n_nodes), 0) for f in picked)
    return out


def biaffine_score(h_i, h_j, params: ParamStore):
    """u^T M v + W [u; v] + b for single vectors or row-aligned batches."""
    M, W, b = params["biaffine_M"], params["biaffine_W"], params["biaffine_b"]
    d = M.shape[0]
    h_i, h_j = np.asarray(h_i), np.asarray(h_j)
    return ((h_i @ M) * h_j).sum(-1) + h_i @ W[:d] + h_j @ W[d:] + b[0]


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def node_states(hidden, node_spans):
    """Representation of each node: the hidden state of its first token."""
    return hidden[node_spans[:, 0]]


def pair_loss(logits, labels, reduction="mean"):
    """Binary cross-entropy in logit form; returns (loss, dloss/dlogits)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    # -[y ln s(z) + (1-y) ln(1-s(z))] = softplus(z) - y z
    per = np.logaddexp(0.0, z) - y * z
    grad = sigmoid(z) - y
    if reduction == "mean":
        per, grad = per.mean(), grad / len(z)
    elif reduction == "sum":
        per = per.sum()
    if not np.isfinite(per).all():
        raise NonFinite("pair loss")
    return per, grad


def biaffine_backward(dlogits, hs, ho, params: ParamStore):
    """Gradients wrt the biaffine parameters (accumulated) and both inputs."""
    M, W = params["biaffine_M"], params["biaffine_W"]
    d = M.shape[0]
    dl = np.asarray(dlogits, dtype=M.dtype)[:, None]
    g = params.grads
    g["biaffine_M"] += (hs * dl).T @ ho
    g["biaffine_W"][:d] += (hs * dl).sum(0)
    g["biaffine_W"][d:] += (ho * dl).sum(0)
    g["biaffine_b"] += dl.sum()
    dhs = dl * (ho @ M.T + W[:d])
    dho = dl * (hs @ M + W[d:])
    return dhs, dho


def score_all(node_h, params: ParamStore):
    """Logit matrix over all ordered node pairs (diagonal included)."""
    M, W, b = params["biaffine_M"], params["biaffine_W"], params["biaffine_b"]
    d = M.shape[0]
    return (node_h @ M) @ node_h.T + (node_h @ W[:d])[:, None] + (node_h @ W[d:])[None, :] + b[0]


def decode(node_h, params: ParamStore, threshold: float = 0.5) -> list[PairScore]:
    """Score every ordered pair of distinct nodes; keep probability > threshold."""
    logits = score_all(node_h, params).astype(np.float64)
    probs = sigmoid(logits)
    n = len(node_h)
    out = []
    for i in range(n):
        for j in range(n):
            if i != j and probs[i, j] > threshold:
                out.append(PairScore(i, j, float(logits[i, j]), float(probs[i, j])))
    return out
