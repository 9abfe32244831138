"""Compact transformer encoder with tree-structured attention biases.

Numpy forward and hand-written backward. Token embeddings are the sum of
word, position, absolute-XPath and popularity embeddings. The first
``alpha`` layers add a per-head bias looked up by the common-prefix length
of the two tokens' nodes; the next ``beta`` layers add a bias projected from
the two halves of the relative XPath between them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .corpus import EncodedExample
from .dom import DEFAULT_TAG_VOCAB

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


class NonFinite(FloatingPointError):
    def __init__(self, where, layer=None):
        self.layer = layer
        msg = f"non-finite values in {where}"
        if layer is not None:
            msg += f" (layer {layer})"
        super().__init__(msg)


class IdOutOfRange(IndexError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int = 4
    n_tags: int = len(DEFAULT_TAG_VOCAB)
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    alpha: int = 3
    beta: int = 1
    d_ff: int = 512
    tag_emb_dim: int = 16
    xpath_len: int = 20
    rel_half_len: int = 5
    d_max: int = 25
    tau: int = 20
    t_max: int = 128
    dropout: float = 0.1
    # ablation switches
    prefix_bias: bool = True
    rel_bias: bool = True
    popularity: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.alpha + self.beta != self.n_layers:
            raise ValueError(f"alpha + beta must equal n_layers "
                             f"({self.alpha} + {self.beta} != {self.n_layers})")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class ParamStore:
    """Named trainable arrays with matching gradient buffers."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.decay: dict[str, bool] = {}

    def register(self, name, value, decay=False):
        if name in self.values:
            raise KeyError(f"{name} registered twice")
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.decay[name] = decay

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.values.items():
            out.register(k, v.copy(), self.decay[k])
        return out

    def n_params(self) -> int:
        return sum(v.size for v in self.values.values())

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for k, v in self.values.items():
            out.register(k, v.astype(dtype), self.decay[k])
        return out


def _trunc_normal(rng, shape, std, dtype):
    return (np.clip(rng.standard_normal(shape), -2.0, 2.0) * std).astype(dtype)


def init_params(cfg: EncoderConfig, rng=None, std: float = 0.02) -> ParamStore:
    """Truncated-normal init; attention-bias tables and projections start at 0."""
    rng = np.random.default_rng(rng)
    dt = np.dtype(cfg.dtype)
    d, s, H = cfg.d_model, cfg.tag_emb_dim, cfg.n_heads
    ps = ParamStore()
    tn = lambda *shape: _trunc_normal(rng, shape, std, dt)  # noqa: E731
    zeros = lambda *shape: np.zeros(shape, dtype=dt)  # noqa: E731
    ps.register("word_emb", tn(cfg.vocab_size, d))
    ps.register("pos_emb", tn(cfg.t_max, d))
    ps.register("pop_emb", tn(cfg.tau + 1, d))
    ps.register("tag_emb", tn(cfg.n_tags, s))
    ps.register("xpath_W", tn(cfg.xpath_len * s, d), decay=True)
    ps.register("xpath_b", zeros(d))
    for l in range(cfg.n_layers):
        p = f"L{l}."
        for w in ("Wq", "Wk", "Wv", "Wo"):
            ps.register(p + w, tn(d, d), decay=True)
        for b in ("bq", "bk", "bv", "bo"):
            ps.register(p + b, zeros(d))
        ps.register(p + "ln1_g", np.ones(d, dtype=dt))
        ps.register(p + "ln1_b", zeros(d))
        ps.register(p + "W1", tn(d, cfg.d_ff), decay=True)
        ps.register(p + "b1", zeros(cfg.d_ff))
        ps.register(p + "W2", tn(cfg.d_ff, d), decay=True)
        ps.register(p + "b2", zeros(d))
        ps.register(p + "ln2_g", np.ones(d, dtype=dt))
        ps.register(p + "ln2_b", zeros(d))
    ps.register("prefix_bias", zeros(H, cfg.d_max + 1))
    ps.register("rel_emb_up", tn(cfg.n_tags, s))
    ps.register("rel_emb_down", tn(cfg.n_tags, s))
    ps.register("rel_proj_up", zeros(H, cfg.rel_half_len * s))
    ps.register("rel_proj_down", zeros(H, cfg.rel_half_len * s))
    ps.register("biaffine_M", tn(d, d), decay=True)
    ps.register("biaffine_W", tn(2 * d), decay=True)
    ps.register("biaffine_b", zeros(1))
    return ps


# -- small differentiable pieces ----------------------------------------------

def layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    n = xhat.shape[-1]
    dg = (dy * xhat).sum(0)
    db = dy.sum(0)
    dxhat = dy * g
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dg, db


def gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def gelu_backward(dy, x, t):
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


def scatter_rows(target, idx, rows):
    """target[idx[k]] += rows[k], duplicates summed (faster than np.add.at)."""
    idx = np.asarray(idx).ravel()
    if not idx.size:
        return
    uniq, inv = np.unique(idx, return_inverse=True)
    onehot = np.zeros((len(uniq), len(idx)), dtype=rows.dtype)
    onehot[inv.ravel(), np.arange(len(idx))] = 1.0
    target[uniq] += onehot @ rows.reshape(len(idx), -1)


def softmax(z):
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


# -- embeddings and biases ----------------------------------------------------

def abs_xpath_embed(tag_ids, params: ParamStore):
    """Concatenate the tag embeddings of fixed-length paths and project.

    ``tag_ids`` has shape (..., n); returns (..., d_model).
    """
    tag_ids = np.asarray(tag_ids)
    e = params["tag_emb"][tag_ids]
    flat = e.reshape(*tag_ids.shape[:-1], -1)
    return flat @ params["xpath_W"] + params["xpath_b"]


def _check_ids(ex: EncodedExample, cfg: EncoderConfig):
    checks = (("token_ids", ex.token_ids, cfg.vocab_size),
              ("abs_xpath_tag_ids", ex.abs_xpath_tag_ids, cfg.n_tags),
              ("pop_bucket", ex.pop_bucket, cfg.tau + 1),
              ("pair_prefix_bucket", ex.pair_prefix_bucket, cfg.d_max + 1),
              ("pair_up_ids", ex.pair_up_ids, cfg.n_tags),
              ("pair_down_ids", ex.pair_down_ids, cfg.n_tags))
    for name, arr, hi in checks:
        if arr.size and (arr.min() < 0 or arr.max() >= hi):
            raise IdOutOfRange(f"{name} outside [0, {hi}) for {ex.page_id}")
    if ex.n_tokens > cfg.t_max:
        raise IdOutOfRange(f"{ex.n_tokens} tokens > t_max={cfg.t_max}")
    if ex.abs_xpath_tag_ids.shape[1:] != (cfg.xpath_len,):
        raise IdOutOfRange("absolute path length does not match config")
    if ex.pair_up_ids.shape[2:] != (cfg.rel_half_len,):
        raise IdOutOfRange("relative half length does not match config")


class _Layout:
    """Token/node bookkeeping shared by forward and backward."""

    def __init__(self, ex: EncodedExample, dtype):
        self.tok_node = ex.token_node()
        self.mask = self.tok_node >= 0
        self.nidx = np.where(self.mask, self.tok_node, 0)
        n, t = ex.n_nodes, ex.n_tokens
        # S[i, q] = 1 when token q belongs to node i
        self.S = np.zeros((n, t), dtype=dtype)
        self.S[self.tok_node[self.mask], np.nonzero(self.mask)[0]] = 1.0
        pair_mask = self.mask[:, None] & self.mask[None, :]
        if n:
            bucket = ex.pair_prefix_bucket[self.nidx[:, None], self.nidx[None, :]]
        else:
            bucket = np.zeros((t, t), dtype=np.int64)
        # special-token pairs use reserved bucket 0
        self.bucket = np.where(pair_mask, bucket, 0)


def embed(ex: EncodedExample, params: ParamStore, cfg: EncoderConfig, layout=None):
    """H0 = word + position + absolute-XPath + popularity embeddings.

    Special tokens get no XPath or popularity component.
    """
    layout = layout or _Layout(ex, params["word_emb"].dtype)
    m = layout.mask[:, None].astype(params["word_emb"].dtype)
    pop_ids = ex.pop_bucket if cfg.popularity else np.zeros_like(ex.pop_bucket)
    node_xp = abs_xpath_embed(ex.abs_xpath_tag_ids, params)
    node_pop = params["pop_emb"][pop_ids]
    t = ex.n_tokens
    h0 = (params["word_emb"][ex.token_ids] + params["pos_emb"][:t]
          + node_xp[layout.nidx] * m + node_pop[layout.nidx] * m)
    return h0


def prefix_bias(ex: EncodedExample, params: ParamStore, layout=None):
    """Per-head bias looked up by the prefix bucket of each token pair: (H, T, T)."""
    layout = layout or _Layout(ex, params["prefix_bias"].dtype)
    return params["prefix_bias"][:, layout.bucket]


def _rel_node_bias(ex: EncodedExample, params: ParamStore):
    n, p = ex.n_nodes, ex.pair_up_ids.shape[-1] if ex.n_nodes else 0
    eu = params["rel_emb_up"][ex.pair_up_ids].reshape(n, n, -1)
    ed = params["rel_emb_down"][ex.pair_down_ids].reshape(n, n, -1)
    nb = eu @ params["rel_proj_up"].T + ed @ params["rel_proj_down"].T  # (N, N, H)
    return nb, eu, ed


def rel_xpath_bias(ex: EncodedExample, params: ParamStore, layout=None):
    """Per-head directed bias from the two relative-path halves: (H, T, T)."""
    layout = layout or _Layout(ex, params["rel_proj_up"].dtype)
    nb, _, _ = _rel_node_bias(ex, params)
    S = layout.S
    return S.T[None] @ nb.transpose(2, 0, 1) @ S[None]


# -- forward / backward -------------------------------------------------------

def _dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def _check(x, where, layer=None):
    if not np.isfinite(x).all():
        raise NonFinite(where, layer)


def layer_bias_kind(cfg: EncoderConfig, layer: int):
    if layer < cfg.alpha:
        return "prefix" if cfg.prefix_bias else None
    return "rel" if cfg.rel_bias else None


def forward(ex: EncodedExample, params: ParamStore, cfg: EncoderConfig,
            train: bool = False, rng=None, return_attn: bool = False):
    """Hidden states (T, d_model) and the cache needed by :func:`backward`."""
    _check_ids(ex, cfg)
    dt = params["word_emb"].dtype
    layout = _Layout(ex, dt)
    rate = cfg.dropout if train else 0.0
    if not train:
        rng = None
    T, H, dh = ex.n_tokens, cfg.n_heads, cfg.d_head
    scale = 1.0 / math.sqrt(dh)

    x = embed(ex, params, cfg, layout)
    x, drop0 = _dropout(x, rate, rng)
    _check(x, "embeddings")

    pre_b = rel_b = None
    if cfg.prefix_bias and cfg.alpha > 0:
        pre_b = prefix_bias(ex, params, layout)
    rel_parts = None
    if cfg.rel_bias and cfg.beta > 0 and ex.n_nodes:
        nb, eu, ed = _rel_node_bias(ex, params)
        rel_b = layout.S.T[None] @ nb.transpose(2, 0, 1) @ layout.S[None]
        rel_parts = (eu, ed)
    elif cfg.rel_bias and cfg.beta > 0:
        rel_b = np.zeros((H, T, T), dtype=dt)

    caches = []
    attn = []
    for l in range(cfg.n_layers):
        p = f"L{l}."
        xin = x
        q = (x @ params[p + "Wq"] + params[p + "bq"]).reshape(T, H, dh).transpose(1, 0, 2)
        k = (x @ params[p + "Wk"] + params[p + "bk"]).reshape(T, H, dh).transpose(1, 0, 2)
        v = (x @ params[p + "Wv"] + params[p + "bv"]).reshape(T, H, dh).transpose(1, 0, 2)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        kind = layer_bias_kind(cfg, l)
        if kind == "prefix":
            scores = scores + pre_b
        elif kind == "rel":
            scores = scores + rel_b
        P = softmax(scores)
        ctx = (P @ v).transpose(1, 0, 2).reshape(T, -1)
        a = ctx @ params[p + "Wo"] + params[p + "bo"]
        a, drop1 = _dropout(a, rate, rng)
        x1, ln1 = layer_norm(xin + a, params[p + "ln1_g"], params[p + "ln1_b"])
        f_pre = x1 @ params[p + "W1"] + params[p + "b1"]
        f_act, f_t = gelu(f_pre)
        f = f_act @ params[p + "W2"] + params[p + "b2"]
        f, drop2 = _dropout(f, rate, rng)
        x, ln2 = layer_norm(x1 + f, params[p + "ln2_g"], params[p + "ln2_b"])
        _check(x, "activations", l)
        caches.append((xin, q, k, v, P, ctx, drop1, x1, ln1, f_pre, f_act, f_t,
                       drop2, ln2, kind))
        if return_attn:
            attn.append(P)
    cache = {"ex": ex, "cfg": cfg, "layout": layout, "layers": caches, "drop0": drop0,
             "rel_parts": rel_parts}
    if return_attn:
        cache["attn"] = attn
    return x, cache


def backward(dout, cache, params: ParamStore):
    """Accumulate d(loss)/d(param) into ``params.grads`` given d(loss)/d(H)."""
    ex, cfg, layout = cache["ex"], cache["cfg"], cache["layout"]
    g = params.grads
    T, H, dh = ex.n_tokens, cfg.n_heads, cfg.d_head
    scale = 1.0 / math.sqrt(dh)
    dx = dout
    d_pre = None
    d_rel = None
    for l in reversed(range(cfg.n_layers)):
        p = f"L{l}."
        (xin, q, k, v, P, ctx, drop1, x1, ln1, f_pre, f_act, f_t,
         drop2, ln2, kind) = cache["layers"][l]
        dy2, dg, db = layer_norm_backward(dx, ln2)
        g[p + "ln2_g"] += dg
        g[p + "ln2_b"] += db
        df = dy2 if drop2 is None else dy2 * drop2
        g[p + "W2"] += f_act.T @ df
        g[p + "b2"] += df.sum(0)
        dact = df @ params[p + "W2"].T
        dfp = gelu_backward(dact, f_pre, f_t)
        g[p + "W1"] += x1.T @ dfp
        g[p + "b1"] += dfp.sum(0)
        dx1 = dy2 + dfp @ params[p + "W1"].T
        dy1, dg, db = layer_norm_backward(dx1, ln1)
        g[p + "ln1_g"] += dg
        g[p + "ln1_b"] += db
        da = dy1 if drop1 is None else dy1 * drop1
        g[p + "Wo"] += ctx.T @ da
        g[p + "bo"] += da.sum(0)
        dctx = (da @ params[p + "Wo"].T).reshape(T, H, dh).transpose(1, 0, 2)
        dP = dctx @ v.transpose(0, 2, 1)
        dv = P.transpose(0, 2, 1) @ dctx
        ds = P * (dP - (dP * P).sum(-1, keepdims=True))
        if kind == "prefix":
            d_pre = ds if d_pre is None else d_pre + ds
        elif kind == "rel":
            d_rel = ds if d_rel is None else d_rel + ds
        dq = (ds @ k) * scale
        dk = (ds.transpose(0, 2, 1) @ q) * scale
        dq = dq.transpose(1, 0, 2).reshape(T, -1)
        dk = dk.transpose(1, 0, 2).reshape(T, -1)
        dv = dv.transpose(1, 0, 2).reshape(T, -1)
        g[p + "Wq"] += xin.T @ dq
        g[p + "bq"] += dq.sum(0)
        g[p + "Wk"] += xin.T @ dk
        g[p + "bk"] += dk.sum(0)
        g[p + "Wv"] += xin.T @ dv
        g[p + "bv"] += dv.sum(0)
        dx = (dy1 + dq @ params[p + "Wq"].T + dk @ params[p + "Wk"].T
              + dv @ params[p + "Wv"].T)

    if d_pre is not None:
        nb = cfg.d_max + 1
        flat = layout.bucket.ravel()
        for h in range(H):
            g["prefix_bias"][h] += np.bincount(flat, weights=d_pre[h].ravel(),
                                               minlength=nb).astype(g["prefix_bias"].dtype)
    if d_rel is not None and cache["rel_parts"] is not None:
        eu, ed = cache["rel_parts"]
        S = layout.S
        dnb = (S[None] @ d_rel @ S.T[None]).transpose(1, 2, 0)  # (N, N, H)
        n = ex.n_nodes
        g["rel_proj_up"] += dnb.reshape(-1, H).T @ eu.reshape(n * n, -1)
        g["rel_proj_down"] += dnb.reshape(-1, H).T @ ed.reshape(n * n, -1)
        s = cfg.tag_emb_dim
        deu = (dnb @ params["rel_proj_up"]).reshape(-1, s)
        ded = (dnb @ params["rel_proj_down"]).reshape(-1, s)
        scatter_rows(g["rel_emb_up"], ex.pair_up_ids, deu)
        scatter_rows(g["rel_emb_down"], ex.pair_down_ids, ded)

    # embeddings
    if cache["drop0"] is not None:
        dx = dx * cache["drop0"]
    scatter_rows(g["word_emb"], ex.token_ids, dx)
    g["pos_emb"][:T] += dx
    if ex.n_nodes:
        dnode = layout.S @ dx  # sum over each node's tokens
        pop_ids = ex.pop_bucket if cfg.popularity else np.zeros_like(ex.pop_bucket)
        scatter_rows(g["pop_emb"], pop_ids, dnode)
        g["xpath_b"] += dnode.sum(0)
        e = params["tag_emb"][ex.abs_xpath_tag_ids].reshape(ex.n_nodes, -1)
        g["xpath_W"] += e.T @ dnode
        de = (dnode @ params["xpath_W"].T).reshape(-1, cfg.tag_emb_dim)
        scatter_rows(g["tag_emb"], ex.abs_xpath_tag_ids, de)
