"""Pair-level metrics, zero-shot evaluation, the colon baseline and ablations."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from .corpus import Corpus, EncodedExample, PageRecord, featurize_corpus, split_zero_shot
from .encoder import EncoderConfig, ParamStore, forward
from .pairs import decode, node_states

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_relxpath", "no_relxpath_no_pop")


class ZeroShotViolation(ValueError):
    pass


def prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    """Micro precision/recall/F1; an empty prediction set has precision 0."""
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class Counts:
    tp: int = 0
    pred: int = 0
    gold: int = 0
    dropped: int = 0

    def add(self, tp, pred, gold, dropped=0):
        self.tp += tp
        self.pred += pred
        self.gold += gold
        self.dropped += dropped

    def scores(self) -> dict:
        p, r, f = prf(self.tp, self.pred, self.gold)
        return {"precision": p, "recall": r, "f1": f, **asdict(self)}


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    n_pred: int
    n_gold: int
    dropped_pairs: int
    per_vertical: dict = field(default_factory=dict)
    per_website: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        return (f"P={self.precision:.4f} R={self.recall:.4f} F1={self.f1:.4f} "
                f"(tp={self.tp} pred={self.n_pred} gold={self.n_gold} "
                f"dropped={self.dropped_pairs})")


def score_predictions(pages, predictions: dict, gold: dict, dropped: dict | None = None
                      ) -> EvalReport:
    """Compare predicted ``{page_id: {(s, o)}}`` with gold ``{page_id: {(s, o)}}``.

    ``pages`` supplies vertical/website for the breakdowns; gold must hold
    every annotated pair, including those lost to truncation.
    """
    total = Counts()
    by_v, by_w = defaultdict(Counts), defaultdict(Counts)
    dropped = dropped or {}
    for page in pages:
        pid = page.page_id if hasattr(page, "page_id") else page[0]
        vert = page.vertical if hasattr(page, "vertical") else page[1]
        site = page.website_id if hasattr(page, "website_id") else page[2]
        pred = set(predictions.get(pid, ()))
        g = set(gold.get(pid, ()))
        args = (len(pred & g), len(pred), len(g), dropped.get(pid, 0))
        total.add(*args)
        by_v[vert].add(*args)
        by_w[site].add(*args)
    p, r, f = prf(total.tp, total.pred, total.gold)
    return EvalReport(p, r, f, total.tp, total.pred, total.gold, total.dropped,
                      {k: v.scores() for k, v in sorted(by_v.items())},
                      {k: v.scores() for k, v in sorted(by_w.items())})


def predict_example(ex: EncodedExample, params: ParamStore, cfg: EncoderConfig,
                    threshold: float = 0.5):
    if ex.n_nodes < 2:
        return []
    hidden, _ = forward(ex, params, cfg, train=False)
    return decode(node_states(hidden, ex.node_spans), params, threshold)


def evaluate_examples(examples, params: ParamStore, cfg: EncoderConfig,
                      threshold: float = 0.5, gold: dict | None = None) -> EvalReport:
    """Decode featurized pages; recall counts pairs dropped by truncation as misses.

    ``gold`` (full gold sets per page) is needed for exact matching of
    dropped pairs; without it they are counted only in the denominator.
    """
    preds, gold_sets, dropped = {}, {}, {}
    for ex in examples:
        preds[ex.page_id] = {(ps.subject, ps.object)
                             for ps in predict_example(ex, params, cfg, threshold)}
        g = set(gold[ex.page_id]) if gold is not None else set(ex.gold_pairs)
        # placeholders for dropped pairs keep them in the recall denominator
        missing = ex.n_gold_total - len(g)
        g |= {(-1 - k, -1) for k in range(max(0, missing))}
        gold_sets[ex.page_id] = g
        dropped[ex.page_id] = ex.n_dropped_pairs
    pages = [(ex.page_id, ex.vertical, ex.website_id) for ex in examples]
    return score_predictions(pages, preds, gold_sets, dropped)


def check_zero_shot(train_websites, test: Corpus):
    overlap = set(train_websites) & set(test.websites())
    if overlap:
        raise ZeroShotViolation(f"test websites seen in training: {sorted(overlap)}")


def evaluate(checkpoint, test: Corpus, threshold: float = 0.5) -> EvalReport:
    """Decode every test page with a checkpoint; popularity comes from the
    test websites' own pages."""
    check_zero_shot(checkpoint.meta.get("train_websites", ()), test)
    examples = featurize_corpus(test, checkpoint.vocab, checkpoint.features)
    gold = {p.page_id: {(g.subject, g.object) for g in test.gold(p.page_id)}
            for p in test.pages}
    return evaluate_examples(examples, checkpoint.params, checkpoint.encoder, threshold, gold)


def colon_baseline(page: PageRecord) -> list[tuple[int, int]]:
    """Every node ending in ':' is a key; its value is the next node in document order."""
    nodes = page.nodes
    return [(n.node_id, nodes[i + 1].node_id) for i, n in enumerate(nodes[:-1])
            if n.text.endswith(":")]


def evaluate_baseline(corpus: Corpus) -> EvalReport:
    preds = {p.page_id: set(colon_baseline(p)) for p in corpus.pages}
    gold = {p.page_id: {(g.subject, g.object) for g in corpus.gold(p.page_id)}
            for p in corpus.pages}
    return score_predictions(corpus.pages, preds, gold)


def variant_config(cfg: EncoderConfig, variant: str) -> EncoderConfig:
    """Encoder config for an ablation variant.

    ``no_relxpath`` removes both tree-structured attention biases; with
    ``no_relxpath_no_pop`` every node also gets the same popularity row,
    leaving the plain absolute-XPath model.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    d = cfg.to_dict()
    if variant in ("no_relxpath", "no_relxpath_no_pop"):
        d.update(prefix_bias=False, rel_bias=False)
    if variant == "no_relxpath_no_pop":
        d.update(popularity=False)
    return EncoderConfig.from_dict(d)


def ablation_run(corpus: Corpus, variant: str, test_vertical: str, enc_cfg: EncoderConfig,
                 train_cfg=None, sampler_cfg=None, threshold: float = 0.5):
    """Train one variant on the non-test verticals, evaluate on the test one."""
    from .pairs import SamplerConfig
    from .train import TrainConfig, train

    train_c, test_c = split_zero_shot(corpus, test_vertical)
    ckpt, _ = train(train_c, variant_config(enc_cfg, variant), train_cfg or TrainConfig(),
                    sampler_cfg or SamplerConfig())
    ckpt.meta["variant"] = variant
    ckpt.meta["test_vertical"] = test_vertical
    return evaluate(ckpt, test_c, threshold), ckpt
