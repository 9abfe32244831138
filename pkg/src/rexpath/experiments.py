"""Desk-scale experiments shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field, replace

from .config import RunConfig, load_run_config, load_synth_config
from .corpus import FeatureConfig, build_vocab, featurize_corpus, split_zero_shot
from .evaluate import ablation_run, evaluate_baseline, evaluate_examples
from .synth import SynthConfig, VerticalSpec, generate_synthetic
from .train import train

log = logging.getLogger(__name__)


@dataclass
class ZeroShotResult:
    f1: dict[str, list[float]] = field(default_factory=dict)
    reports: dict[str, list[dict]] = field(default_factory=dict)
    baseline: list[dict] = field(default_factory=list)

    def mean(self, variant: str) -> float:
        return statistics.fmean(self.f1[variant])


def zero_shot_study(config_path, seeds=(0, 1, 2), variants=("full", "no_relxpath"),
                    test_vertical: str | None = None, max_steps: int | None = None):
    """Train each variant per seed on all verticals but one; score the held-out one.

    The synthetic corpus is regenerated from each seed.
    """
    run = load_run_config(config_path)
    synth = load_synth_config(config_path)
    out = ZeroShotResult({v: [] for v in variants}, {v: [] for v in variants})
    for seed in seeds:
        corpus = generate_synthetic(synth, seed)
        test = test_vertical or synth.verticals[-1].name
        base = evaluate_baseline(split_zero_shot(corpus, test)[1])
        out.baseline.append(base.to_dict())
        log.info("seed %d colon baseline %s", seed, base.line())
        tc = replace(run.train, seed=seed, max_steps=max_steps or run.train.max_steps)
        for v in variants:
            t0 = time.perf_counter()
            rep, ckpt = ablation_run(corpus, v, test, run.encoder, tc, run.sampler,
                                     run.threshold)
            out.f1[v].append(rep.f1)
            out.reports[v].append({**rep.to_dict(), "best_step": ckpt.meta["best_step"],
                                   "seconds": time.perf_counter() - t0})
            log.info("seed %d %-20s %s best_step %d %.0fs", seed, v, rep.line(),
                     ckpt.meta["best_step"], time.perf_counter() - t0)
    return out


def overfit_study(run: RunConfig, verticals=("film", "sport"), n_websites=2,
                  pages_per_website=50, seed=0, target_f1=0.95):
    """Fit a synthetic training corpus and track F1 on that same corpus.

    Returns ``(best_train_f1, steps_run, seconds)``; training stops as soon
    as the training-set F1 reaches ``target_f1``.
    """
    cfg = SynthConfig(verticals=[VerticalSpec(v, n_websites, pages_per_website)
                                 for v in verticals])
    corpus = generate_synthetic(cfg, seed)
    vocab = build_vocab(corpus.pages, run.min_freq)
    enc = run.encoder
    feat = FeatureConfig(t_max=enc.t_max, xpath_len=enc.xpath_len,
                         rel_half_len=enc.rel_half_len, d_max=enc.d_max, tau=enc.tau)
    examples = featurize_corpus(corpus, vocab, feat)
    tc = replace(run.train, seed=seed, target_f1=target_f1)
    t0 = time.perf_counter()
    ckpt, hist = train(corpus, enc, tc, run.sampler, feat, vocab=vocab, examples=examples,
                       val_examples=examples)
    seconds = time.perf_counter() - t0
    final = evaluate_examples(examples, ckpt.params, ckpt.encoder, run.threshold)
    return final.f1, hist["steps"], seconds
