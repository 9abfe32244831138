"""Training loop, AdamW, and checkpoint files."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .corpus import (Corpus, EncodedExample, FeatureConfig, Vocab, build_vocab,
                     featurize_corpus)
from .encoder import EncoderConfig, NonFinite, ParamStore, backward, forward, init_params
from .pairs import (SamplerConfig, biaffine_backward, biaffine_score, node_states,
                    page_rng, pair_loss, sample_pairs)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rexpath-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    weight_decay: float = 0.01
    max_steps: int = 2000
    eval_every: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    warmup_steps: int = 0
    # "linear": decay to 0 at max_steps after warmup; "constant": no decay
    schedule: str = "linear"
    val_fraction: float = 0.1
    threshold: float = 0.5
    # stop once validation F1 reaches this value (None: run all steps)
    target_f1: float | None = None

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("invalid training config")
        if self.schedule not in ("linear", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based ``step``."""
        if self.warmup_steps and step < self.warmup_steps:
            return self.lr * step / self.warmup_steps
        if self.schedule == "linear" and self.max_steps > self.warmup_steps:
            left = (self.max_steps - step + 1) / (self.max_steps - self.warmup_steps + 1)
            return self.lr * max(0.0, left)
        return self.lr

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class AdamW:
    """Adam with decoupled weight decay, applied only to arrays flagged for decay."""

    def __init__(self, params: ParamStore, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.lr, self.b1, self.b2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.t = 0

    def step(self, params: ParamStore, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.values.items():
            g = params.grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if params.decay[k] and self.wd:
                upd = upd + self.wd * p
            p -= (lr * upd).astype(p.dtype)


def clip_grads(params: ParamStore, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                             for g in params.grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in params.grads.values():
            g *= scale
    return norm


# -- checkpoints ----------------------------------------------------------------

def _config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    params: ParamStore
    encoder: EncoderConfig
    features: FeatureConfig
    vocab: Vocab
    meta: dict = field(default_factory=dict)

    def save(self, path):
        header = {
            "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "encoder": self.encoder.to_dict(), "features": asdict(self.features),
            "config_hash": _config_hash(self.encoder.to_dict()),
            "vocab": self.vocab.itos, "vocab_hash": self.vocab.hash,
            "decay": self.params.decay, "meta": self.meta,
        }
        arrays = {f"p/{k}": v for k, v in self.params.values.items()}
        with open(path, "wb") as f:
            np.savez(f, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
                     **arrays)

    @classmethod
    def load(cls, path, expect_config: EncoderConfig | None = None,
             expect_vocab_hash: str | None = None) -> "Checkpoint":
        with np.load(path) as z:
            header = json.loads(bytes(z["__header__"]).decode())
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: not a checkpoint")
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version")
            enc = EncoderConfig.from_dict(header["encoder"])
            vocab = Vocab(header["vocab"])
            if _config_hash(enc.to_dict()) != header["config_hash"]:
                raise ValueError(f"{path}: encoder config hash mismatch")
            if vocab.hash != header["vocab_hash"]:
                raise ValueError(f"{path}: vocab hash mismatch")
            if expect_config is not None and expect_config.to_dict() != enc.to_dict():
                raise ValueError(f"{path}: checkpoint built for a different encoder config")
            if expect_vocab_hash is not None and expect_vocab_hash != vocab.hash:
                raise ValueError(f"{path}: checkpoint built for a different vocabulary")
            ps = ParamStore()
            for key in z.files:
                if key.startswith("p/"):
                    name = key[2:]
                    ps.register(name, z[key].copy(), header["decay"].get(name, False))
        return cls(ps, enc, FeatureConfig(**header["features"]), vocab, header["meta"])


# -- per-page computation -------------------------------------------------------

def page_loss_and_grad(ex: EncodedExample, params: ParamStore, cfg: EncoderConfig,
                       samples, scale: float = 1.0, train: bool = True, rng=None):
    """Summed BCE over ``samples``; gradients (times ``scale``) go into params.grads."""
    hidden, cache = forward(ex, params, cfg, train=train, rng=rng)
    hn = node_states(hidden, ex.node_spans)
    s = np.fromiter((x[0] for x in samples), dtype=np.int64, count=len(samples))
    o = np.fromiter((x[1] for x in samples), dtype=np.int64, count=len(samples))
    y = np.fromiter((x[2] for x in samples), dtype=np.float64, count=len(samples))
    logits = biaffine_score(hn[s], hn[o], params)
    loss, dl = pair_loss(logits, y, reduction="sum")
    dhs, dho = biaffine_backward(dl * scale, hn[s], hn[o], params)
    dhn = np.zeros_like(hn)
    np.add.at(dhn, s, dhs)
    np.add.at(dhn, o, dho)
    dh = np.zeros_like(hidden)
    np.add.at(dh, ex.node_spans[:, 0], dhn)
    backward(dh, cache, params)
    return float(loss)


def validation_split(corpus: Corpus, fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Hold out ``fraction`` of the pages of every website (at least one when possible)."""
    rng = np.random.default_rng(seed)
    val_ids = set()
    for site, pages in sorted(corpus.by_website().items()):
        if len(pages) < 2 or fraction <= 0:
            continue
        k = max(1, int(round(fraction * len(pages))))
        for i in rng.choice(len(pages), size=k, replace=False):
            val_ids.add(pages[i].page_id)
    train = corpus.subset(p for p in corpus.pages if p.page_id not in val_ids)
    val = corpus.subset(p for p in corpus.pages if p.page_id in val_ids)
    return train, val


def train(corpus: Corpus, enc_cfg: EncoderConfig, train_cfg: TrainConfig = TrainConfig(),
          sampler_cfg: SamplerConfig = SamplerConfig(),
          feat_cfg: FeatureConfig | None = None, vocab: Vocab | None = None,
          val_corpus: Corpus | None = None, min_freq: int = 2,
          examples: list[EncodedExample] | None = None,
          val_examples: list[EncodedExample] | None = None):
    """Fit encoder + biaffine on ``corpus``; returns ``(checkpoint, history)``.

    The returned parameters are those with the best validation F1 (the final
    ones when there is no validation set).
    """
    from .evaluate import evaluate_examples

    t0 = time.perf_counter()
    if feat_cfg is None:
        feat_cfg = FeatureConfig(t_max=enc_cfg.t_max, xpath_len=enc_cfg.xpath_len,
                                 rel_half_len=enc_cfg.rel_half_len, d_max=enc_cfg.d_max,
                                 tau=enc_cfg.tau)
    if val_corpus is None and examples is None:
        corpus, val_corpus = validation_split(corpus, train_cfg.val_fraction, train_cfg.seed)
    if vocab is None:
        vocab = build_vocab(corpus.pages, min_freq=min_freq)
    if enc_cfg.vocab_size != len(vocab):
        enc_cfg = EncoderConfig.from_dict({**enc_cfg.to_dict(), "vocab_size": len(vocab)})
    if examples is None:
        # popularity is counted over all training-side pages of each website
        full = Corpus(corpus.pages + (val_corpus.pages if val_corpus else []))
        indexes = full.popularity()
        examples = featurize_corpus(corpus, vocab, feat_cfg, indexes)
        if val_corpus is not None and len(val_corpus):
            val_examples = featurize_corpus(val_corpus, vocab, feat_cfg, indexes)
    examples = [ex for ex in examples if ex.n_nodes >= 2]
    if not examples:
        raise ValueError("no trainable pages")

    params = init_params(enc_cfg, train_cfg.seed)
    opt = AdamW(params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps,
                train_cfg.weight_decay)
    order_rng = np.random.default_rng([train_cfg.seed, 1])
    drop_rng = np.random.default_rng([train_cfg.seed, 2])
    sampler_cfg = SamplerConfig(sampler_cfg.eta, sampler_cfg.mu, train_cfg.seed)

    history = {"loss": [], "val_f1": [], "steps": 0}
    best = (-1.0, None, 0)
    queue, epoch = [], -1
    for step in range(1, train_cfg.max_steps + 1):
        batch = []
        while len(batch) < train_cfg.batch_size:
            if not queue:
                epoch += 1
                queue = list(order_rng.permutation(len(examples)))
            ex = examples[queue.pop()]
            samples = sample_pairs(ex.gold_pairs, ex.n_nodes, sampler_cfg,
                                   page_rng(train_cfg.seed, ex.page_id, epoch))
            if samples:
                batch.append((ex, samples))
            elif not any(e.gold_pairs for e in examples):
                raise ValueError("no page has gold pairs")
        n_pairs = sum(len(s) for _, s in batch)
        params.zero_grad()
        loss = 0.0
        for ex, samples in batch:
            loss += page_loss_and_grad(ex, params, enc_cfg, samples, 1.0 / n_pairs,
                                       train=True, rng=drop_rng)
        loss /= n_pairs
        if not np.isfinite(loss):
            raise NonFinite(f"training loss at step {step}")
        clip_grads(params, train_cfg.grad_clip)
        opt.step(params, train_cfg.lr_at(step))
        history["loss"].append(loss)
        history["steps"] = step

        last = step == train_cfg.max_steps
        if val_examples and (step % train_cfg.eval_every == 0 or last):
            rep = evaluate_examples(val_examples, params, enc_cfg, train_cfg.threshold)
            history["val_f1"].append((step, rep.f1))
            log.info("step %d loss %.4f val F1 %.4f", step, loss, rep.f1)
            if rep.f1 > best[0]:
                best = (rep.f1, params.copy(), step)
            if train_cfg.target_f1 is not None and rep.f1 >= train_cfg.target_f1:
                break
        elif step % train_cfg.eval_every == 0:
            log.info("step %d loss %.4f", step, loss)

    final = best[1] if best[1] is not None else params
    meta = {
        "train_websites": sorted({ex.website_id for ex in examples}
                                 | {ex.website_id for ex in (val_examples or [])}),
        "train_verticals": sorted({ex.vertical for ex in examples}),
        "best_step": best[2], "best_val_f1": best[0], "steps": history["steps"],
        "train_config": asdict(train_cfg),
        "sampler": {"eta": sampler_cfg.eta, "mu": sampler_cfg.mu},
        "seconds": time.perf_counter() - t0,
    }
    return Checkpoint(final, enc_cfg, feat_cfg, vocab, meta), history
