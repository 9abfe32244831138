"""Command line entry point: ``rexpath <command> ...``.

Exit codes: 0 success, 1 runtime error, 2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import corpus as corpus_mod
from .config import load_run_config, load_synth_config
from .corpus import (AnnotationMismatch, Corpus, UnknownVertical, Vocab, build_vocab,
                     featurize_corpus, featurize_page, save_encoded, split_zero_shot)
from .dom import parse_page
from .encoder import forward
from .evaluate import (VARIANTS, ZeroShotViolation, ablation_run, evaluate,
                       evaluate_baseline, variant_config)
from .pairs import decode, node_states
from .popularity import PopularityIndex, build_index
from .synth import InvalidTemplate, generate_synthetic, write_synthetic_tree
from .train import Checkpoint, train
from .xpath import relative_xpath

log = logging.getLogger("rexpath")


class ValidationFailure(Exception):
    pass


VALIDATION_ERRORS = (ValidationFailure, UnknownVertical, AnnotationMismatch,
                     ZeroShotViolation, InvalidTemplate)


def _popularity_dir(data) -> Path:
    return Path(data) / "popularity"


def _safe_name(website: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in website)


def save_corpus(corpus: Corpus, out):
    corpus.save(out)
    for site, idx in corpus.popularity().items():
        idx.save(_popularity_dir(out) / f"{_safe_name(site)}.tsv")


def load_indexes(data, corpus: Corpus) -> dict[str, PopularityIndex]:
    """Sidecar popularity files when present, rebuilt from pages otherwise."""
    out = {}
    groups = corpus.by_website()
    for site, pages in groups.items():
        f = _popularity_dir(data) / f"{_safe_name(site)}.tsv"
        out[site] = PopularityIndex.load(f) if f.exists() else build_index(pages)
    return out


def _load_corpus(data) -> Corpus:
    d = Path(data)
    if not (d / "pages.jsonl").exists():
        raise ValidationFailure(f"{d} holds no corpus (pages.jsonl missing)")
    return Corpus.load(d)


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


# -- commands -------------------------------------------------------------------

def cmd_ingest(args):
    c = corpus_mod.ingest_swde(args.pages_dir, args.annotations, args.max_mismatch)
    save_corpus(c, args.out)
    _print({"stats": c.stats(), "meta": c.meta})


def cmd_synth(args):
    cfg = load_synth_config(args.config)
    c = generate_synthetic(cfg, args.seed)
    save_corpus(c, args.out)
    if args.html:
        write_synthetic_tree(cfg, args.seed, args.html)
    _print(c.stats())


def cmd_featurize(args):
    c = _load_corpus(args.data)
    run = load_run_config(args.config)
    if args.vertical not in c.verticals:
        raise UnknownVertical(args.vertical)
    part = c.subset(p for p in c.pages if p.vertical == args.vertical)
    if args.vocab and Path(args.vocab).exists():
        vocab = Vocab.load(args.vocab)
    else:
        vocab = build_vocab(part.pages, run.min_freq)
    enc = run.encoder
    fc = corpus_mod.FeatureConfig(t_max=enc.t_max, xpath_len=enc.xpath_len,
                                  rel_half_len=enc.rel_half_len, d_max=enc.d_max, tau=enc.tau)
    examples = featurize_corpus(part, vocab, fc, load_indexes(args.data, part))
    out = Path(args.out or Path(args.data) / "encoded" / f"{args.vertical}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_encoded(examples, out, vertical=args.vertical, vocab_hash=vocab.hash)
    vocab.save(args.vocab or out.with_suffix(".vocab.json"))
    dropped = sum(e.n_dropped_pairs for e in examples)
    _print({"examples": len(examples), "dropped_pairs": dropped, "out": str(out)})


def cmd_train(args):
    c = _load_corpus(args.data)
    run = load_run_config(args.config)
    train_c, test_c = split_zero_shot(c, args.test_vertical)
    enc = variant_config(run.encoder, args.variant)
    ckpt, hist = train(train_c, enc, run.train, run.sampler, min_freq=run.min_freq)
    ckpt.meta.update(test_vertical=args.test_vertical, variant=args.variant)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(args.out)
    _print({"checkpoint": args.out, "best_val_f1": ckpt.meta["best_val_f1"],
            "best_step": ckpt.meta["best_step"], "steps": hist["steps"]})


def cmd_evaluate(args):
    ckpt = Checkpoint.load(args.checkpoint)
    c = _load_corpus(args.data)
    vertical = args.test_vertical or ckpt.meta.get("test_vertical")
    if vertical is None:
        raise ValidationFailure("no test vertical given or stored in the checkpoint")
    _, test_c = split_zero_shot(c, vertical)
    rep = evaluate(ckpt, test_c, args.threshold)
    out = rep.to_dict()
    if args.baseline:
        out["colon_baseline"] = evaluate_baseline(test_c).to_dict()
    if args.report:
        Path(args.report).write_text(json.dumps(out, indent=2))
    print(rep.line())
    if args.verbose:
        _print(out)


def cmd_extract(args):
    ckpt = Checkpoint.load(args.checkpoint)
    page = parse_page(Path(args.page).read_bytes(), Path(args.page).stem,
                      website_id="site", vertical="")
    if args.site_dir:
        pages = [page] + [parse_page(f.read_bytes(), f.stem, "site", "")
                          for f in sorted(Path(args.site_dir).glob("*.htm*"))
                          if f.resolve() != Path(args.page).resolve()]
        index = build_index(pages)
    else:
        index = build_index([page])
    ex = featurize_page(page, ckpt.vocab, index, ckpt.features)
    hidden, _ = forward(ex, ckpt.params, ckpt.encoder)
    preds = decode(node_states(hidden, ex.node_spans), ckpt.params, args.threshold)
    lines = []
    for ps in sorted(preds, key=lambda p: -p.probability):
        s, o = page.nodes[ps.subject], page.nodes[ps.object]
        lines.append(json.dumps({
            "page_id": page.page_id,
            "subject": {"node_id": s.node_id, "text": s.text, "xpath": s.xpath.render()},
            "object": {"node_id": o.node_id, "text": o.text, "xpath": o.xpath.render()},
            "probability": ps.probability}, ensure_ascii=False))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_ablate(args):
    c = _load_corpus(args.data)
    run = load_run_config(args.config)
    variants = VARIANTS if args.variant == "all" else (args.variant,)
    out = {}
    for v in variants:
        rep, _ = ablation_run(c, v, args.test_vertical, run.encoder, run.train, run.sampler,
                              run.threshold)
        out[v] = {"precision": rep.precision, "recall": rep.recall, "f1": rep.f1}
        print(f"{v:>20}: {rep.line()}")
    if args.report:
        Path(args.report).write_text(json.dumps(out, indent=2))


def cmd_baseline(args):
    c = _load_corpus(args.data)
    if args.vertical:
        c = c.subset(p for p in c.pages if p.vertical == args.vertical)
    print(evaluate_baseline(c).line())


def cmd_inspect_xpath(args):
    c = _load_corpus(args.data)
    page = next((p for p in c.pages if p.page_id == args.page), None)
    if page is None:
        raise ValidationFailure(f"no page {args.page!r}")
    n = len(page.nodes)
    if not (0 <= args.i < n and 0 <= args.j < n):
        raise ValidationFailure(f"node ids must be in [0, {n})")
    a, b = page.nodes[args.i], page.nodes[args.j]
    ij, ji = relative_xpath(a.xpath, b.xpath), relative_xpath(b.xpath, a.xpath)
    print(f"node {args.i}: {a.text!r}  {a.xpath}")
    print(f"node {args.j}: {b.text!r}  {b.xpath}")
    print(f"prefix: {'/'.join(str(s) for s in a.xpath.steps[:ij.prefix_len])}")
    print(f"d: {ij.prefix_len}")
    print(f"rel {args.i}=>{args.j}: [{', '.join(ij.full)}]")
    print(f"rel {args.j}=>{args.i}: [{', '.join(ji.full)}]")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rexpath", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an SWDE-style page tree and annotations")
    p.add_argument("--pages-dir", required=True)
    p.add_argument("--annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--max-mismatch", type=float, default=0.2)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic template corpus")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--html", help="also write raw pages and pairs.jsonl here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="encode the pages of one vertical")
    p.add_argument("--data", required=True)
    p.add_argument("--vertical", required=True)
    p.add_argument("--vocab")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train on all verticals but the test one")
    p.add_argument("--data", required=True)
    p.add_argument("--test-vertical", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on its unseen vertical")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-vertical")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--baseline", action="store_true", help="include the colon baseline")
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("extract", help="predict related pairs on one HTML page")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--page", required=True)
    p.add_argument("--site-dir", help="sibling pages used for popularity counts")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("ablate", help="train and evaluate ablation variants")
    p.add_argument("--data", required=True)
    p.add_argument("--test-vertical", required=True)
    p.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    p.add_argument("--config")
    p.add_argument("--report")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("baseline", help="colon baseline scores")
    p.add_argument("--data", required=True)
    p.add_argument("--vertical")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("inspect-xpath", help="show prefix and relative paths of two nodes")
    p.add_argument("--data", required=True)
    p.add_argument("--page", required=True)
    p.add_argument("--i", type=int, required=True)
    p.add_argument("--j", type=int, required=True)
    p.set_defaults(func=cmd_inspect_xpath)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = corpus_mod.worker_count()
    try:
        with threadpool_limits(limits=threads):
            args.func(args)
    except VALIDATION_ERRORS as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as e:
        # config and checkpoint mismatches surface as ValueError
        print(f"validation failure: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
