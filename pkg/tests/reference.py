"""Independent reference implementations used as test oracles.

``vanilla_forward`` is a plain post-LN transformer over the same embedding
sum (no tree-structured attention bias at all). ``token_bias_loops`` builds
both attention biases token pair by token pair, straight from the node
XPaths, without the node-level broadcast used by the encoder.
"""

import math

import numpy as np

from rexpath.dom import DEFAULT_TAG_VOCAB
from rexpath.xpath import fix_halves, prefix_bucket, relative_xpath


def _ln(x, g, b, eps=1e-6):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    return xc * (1.0 / np.sqrt(var + eps)) * g + b


def _gelu(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * (x * x * x))))


def _softmax(z):
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def vanilla_embed(ex, P, cfg):
    T = len(ex.token_ids)
    node_of = np.full(T, -1)
    for i, (a, b) in enumerate(ex.node_spans):
        node_of[a:b + 1] = i
    n = len(ex.node_spans)
    xp = P["tag_emb"][ex.abs_xpath_tag_ids].reshape(n, -1) @ P["xpath_W"] + P["xpath_b"]
    pop = ex.pop_bucket if cfg.popularity else np.zeros_like(ex.pop_bucket)
    h = P["word_emb"][ex.token_ids] + P["pos_emb"][:T]
    for t in range(T):
        if node_of[t] >= 0:
            h[t] = h[t] + xp[node_of[t]]
            h[t] = h[t] + P["pop_emb"][pop[node_of[t]]]
    return h


def vanilla_forward(ex, P, cfg, biases=None):
    """``biases``: optional list with one (H, T, T) array or None per layer."""
    x = vanilla_embed(ex, P, cfg)
    T, H = x.shape[0], cfg.n_heads
    dh = cfg.d_model // H
    for l in range(cfg.n_layers):
        p = f"L{l}."
        q = (x @ P[p + "Wq"] + P[p + "bq"]).reshape(T, H, dh).transpose(1, 0, 2)
        k = (x @ P[p + "Wk"] + P[p + "bk"]).reshape(T, H, dh).transpose(1, 0, 2)
        v = (x @ P[p + "Wv"] + P[p + "bv"]).reshape(T, H, dh).transpose(1, 0, 2)
        s = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh))
        if biases is not None and biases[l] is not None:
            s = s + biases[l]
        ctx = (_softmax(s) @ v).transpose(1, 0, 2).reshape(T, -1)
        a = ctx @ P[p + "Wo"] + P[p + "bo"]
        x = _ln(x + a, P[p + "ln1_g"], P[p + "ln1_b"])
        f = _gelu(x @ P[p + "W1"] + P[p + "b1"]) @ P[p + "W2"] + P[p + "b2"]
        x = _ln(x + f, P[p + "ln2_g"], P[p + "ln2_b"])
    return x


def token_bias_loops(page_nodes, ex, P, cfg, tags=DEFAULT_TAG_VOCAB):
    """(prefix_bias, rel_bias), each (H, T, T), from per-token-pair loops."""
    T = len(ex.token_ids)
    node_of = [-1] * T
    for i, (a, b) in enumerate(ex.node_spans):
        for t in range(a, b + 1):
            node_of[t] = i
    H, s, p = cfg.n_heads, cfg.tag_emb_dim, cfg.rel_half_len
    pre = np.zeros((H, T, T))
    rel = np.zeros((H, T, T))
    for a in range(T):
        for b in range(T):
            i, j = node_of[a], node_of[b]
            if i < 0 or j < 0:
                pre[:, a, b] = P["prefix_bias"][:, 0]
                continue
            r = relative_xpath(page_nodes[i].xpath, page_nodes[j].xpath)
            pre[:, a, b] = P["prefix_bias"][:, prefix_bucket(r.prefix_len, cfg.d_max)]
            up, down = fix_halves(r, p, tags)
            eu = np.concatenate([P["rel_emb_up"][u] for u in up])
            ed = np.concatenate([P["rel_emb_down"][d] for d in down])
            for h in range(H):
                rel[h, a, b] = P["rel_proj_up"][h] @ eu + P["rel_proj_down"][h] @ ed
    return pre, rel
