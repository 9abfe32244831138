"""Corpus container, SWDE-style ingestion, zero-shot splits and featurization."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dom import (DEFAULT_TAG_VOCAB, EmptyPage, MalformedMarkup, PageRecord,
                  TagVocab, XPath, normalize_text, parse_page)
from .popularity import TAU, PopularityIndex, build_index
from .xpath import (D_MAX, REL_HALF_LEN, DisjointRoots, fix_halves, prefix_bucket,
                    relative_xpath)

log = logging.getLogger(__name__)

ENCODED_MAGIC = "REXPATH-ENCODED"
ENCODED_VERSION = 1


class UnknownVertical(KeyError):
    pass


class AnnotationMismatch(ValueError):
    pass


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("REXPATH_THREADS", "1")))
    except ValueError:
        return 1


# -- labels and vocabulary ----------------------------------------------------

@dataclass(frozen=True)
class PairLabel:
    page_id: str
    subject: int
    object: int
    positive: bool = True

    def __post_init__(self):
        if self.subject == self.object:
            raise ValueError(f"self pair on node {self.subject} of {self.page_id}")


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercased words and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    PAD, UNK, CLS, SEP = 0, 1, 2, 3
    SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")

    def __init__(self, tokens=()):
        self.itos = list(self.SPECIALS)
        for t in tokens:
            if t not in self.SPECIALS:
                self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, self.UNK)

    def encode(self, text: str) -> list[int]:
        return [self[t] for t in tokenize(text)]

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode()).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text(json.dumps(self.itos, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos


def build_vocab(pages, min_freq: int = 2) -> Vocab:
    freq = Counter()
    for p in pages:
        for n in p.nodes:
            freq.update(tokenize(n.text))
    kept = sorted((t for t, c in freq.items() if c >= min_freq),
                  key=lambda t: (-freq[t], t))
    return Vocab(kept)


# -- corpus -------------------------------------------------------------------

@dataclass
class Corpus:
    pages: list[PageRecord]
    pairs: dict[str, list[PairLabel]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for p in self.pages:
            key = (p.vertical, p.website_id, p.page_id)
            if key in seen:
                raise ValueError(f"duplicate page {key}")
            seen.add(key)

    def __len__(self):
        return len(self.pages)

    @property
    def verticals(self) -> list[str]:
        return sorted({p.vertical for p in self.pages})

    def websites(self, vertical=None) -> list[str]:
        return sorted({p.website_id for p in self.pages
                       if vertical is None or p.vertical == vertical})

    def by_website(self) -> dict[str, list[PageRecord]]:
        groups = defaultdict(list)
        for p in self.pages:
            groups[p.website_id].append(p)
        return dict(groups)

    def gold(self, page_id: str) -> list[PairLabel]:
        return self.pairs.get(page_id, [])

    def subset(self, pages) -> "Corpus":
        pages = list(pages)
        ids = {p.page_id for p in pages}
        return Corpus(pages, {k: v for k, v in self.pairs.items() if k in ids},
                      dict(self.meta))

    def popularity(self) -> dict[str, PopularityIndex]:
        return {w: build_index(ps) for w, ps in self.by_website().items()}

    def stats(self) -> dict:
        out = {}
        for v in self.verticals:
            pages = [p for p in self.pages if p.vertical == v]
            n_pairs = sum(len(self.gold(p.page_id)) for p in pages)
            out[v] = {"websites": len(self.websites(v)), "pages": len(pages),
                      "pairs_per_page": n_pairs / max(1, len(pages))}
        return out

    # on-disk layout: pages.jsonl, pairs.jsonl, meta.json
    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "pages.jsonl", "w", encoding="utf-8") as f:
            for p in self.pages:
                f.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")
        nodes = {p.page_id: p.nodes for p in self.pages}
        with open(out / "pairs.jsonl", "w", encoding="utf-8") as f:
            for p in self.pages:
                for lab in self.gold(p.page_id):
                    s, o = nodes[p.page_id][lab.subject], nodes[p.page_id][lab.object]
                    rec = {"page_id": p.page_id,
                           "subject": {"xpath": s.xpath.render(), "text": s.text,
                                       "node_id": s.node_id},
                           "object": {"xpath": o.xpath.render(), "text": o.text,
                                      "node_id": o.node_id}}
                    f.write(json.dumps(rec, ensure_ascii=False) + "\n")
        (out / "meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, in_dir) -> "Corpus":
        d = Path(in_dir)
        with open(d / "pages.jsonl", encoding="utf-8") as f:
            pages = [PageRecord.from_json(json.loads(line)) for line in f if line.strip()]
        meta = {}
        if (d / "meta.json").exists():
            meta = json.loads((d / "meta.json").read_text())
        corpus = cls(pages, {}, meta)
        if (d / "pairs.jsonl").exists():
            pairs, _ = match_annotations(pages, _read_jsonl(d / "pairs.jsonl"))
            corpus.pairs = pairs
        return corpus


def _read_jsonl(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# -- annotation matching and SWDE ingestion -----------------------------------

def _match_node(page: PageRecord, ref: dict, by_xpath: dict, by_text_tag: dict):
    if "xpath" in ref:
        try:
            key = XPath.parse(ref["xpath"]).render()
        except ValueError:
            key = None
        node = by_xpath.get(key)
        if node is not None:
            return node.node_id
        if "text" in ref:
            leaf = key.rsplit("/", 1)[-1].split("[")[0] if key else None
            cands = by_text_tag.get((normalize_text(ref["text"]), leaf))
            if cands:
                return cands[0]
    elif "node_id" in ref and 0 <= ref["node_id"] < len(page.nodes):
        return ref["node_id"]
    return None


def match_annotations(pages, records, max_mismatch: float | None = None):
    """Attach pair records to parsed nodes.

    Nodes are found by exact XPath, then by (normalized text, leaf tag).
    Returns ``(pairs, report)``; raises :class:`AnnotationMismatch` when the
    unmatched fraction exceeds ``max_mismatch``.
    """
    by_page = {p.page_id: p for p in pages}
    index = {}
    pairs = defaultdict(list)
    unmatched = Counter()
    total = Counter()
    for rec in records:
        pid = rec["page_id"]
        page = by_page.get(pid)
        total[pid] += 1
        if page is None:
            unmatched[pid] += 1
            continue
        if pid not in index:
            bx = {n.xpath.render(): n for n in page.nodes}
            bt = defaultdict(list)
            for n in page.nodes:
                bt[(n.text, n.xpath.leaf_tag)].append(n.node_id)
            index[pid] = (bx, bt)
        bx, bt = index[pid]
        s = _match_node(page, rec["subject"], bx, bt)
        o = _match_node(page, rec["object"], bx, bt)
        if s is None or o is None or s == o:
            unmatched[pid] += 1
            continue
        lab = PairLabel(pid, s, o)
        if lab not in pairs[pid]:
            pairs[pid].append(lab)
    n_total = sum(total.values())
    n_bad = sum(unmatched.values())
    report = {"records": n_total, "unmatched": n_bad,
              "mismatch_rate": n_bad / n_total if n_total else 0.0}
    if max_mismatch is not None and n_total and report["mismatch_rate"] > max_mismatch:
        worst = sorted(unmatched.items(), key=lambda kv: -kv[1])[:10]
        raise AnnotationMismatch(
            f"{n_bad}/{n_total} annotations unmatched "
            f"({report['mismatch_rate']:.1%}); worst pages: {worst}")
    return dict(pairs), report


def _parse_one(args):
    path, page_id, website, vertical = args
    try:
        return parse_page(Path(path).read_bytes(), page_id, website, vertical)
    except (MalformedMarkup, EmptyPage) as e:
        return e


def ingest_swde(pages_dir, annotations_path=None, max_mismatch: float = 0.2) -> Corpus:
    """Read ``<vertical>/<website>/<page>.htm[l]`` and attach gold pairs.

    Page ids are ``vertical/website/stem``.
    """
    root = Path(pages_dir)
    jobs = []
    for vdir in sorted(p for p in root.iterdir() if p.is_dir()):
        for wdir in sorted(p for p in vdir.iterdir() if p.is_dir()):
            for f in sorted(wdir.iterdir()):
                if f.suffix.lower() in (".htm", ".html"):
                    jobs.append((str(f), f"{vdir.name}/{wdir.name}/{f.stem}",
                                 wdir.name, vdir.name))
    workers = worker_count()
    if workers > 1 and len(jobs) > 64:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_parse_one, jobs, chunksize=32))
    else:
        results = [_parse_one(j) for j in jobs]
    pages, skipped = [], 0
    for job, r in zip(jobs, results):
        if isinstance(r, Exception):
            log.warning("skipping %s: %s: %s", job[1], type(r).__name__, r)
            skipped += 1
        else:
            pages.append(r)
    corpus = Corpus(pages, {}, {"source": str(root), "skipped_pages": skipped})
    if annotations_path is not None:
        pairs, report = match_annotations(pages, _read_jsonl(annotations_path),
                                          max_mismatch=max_mismatch)
        corpus.pairs = pairs
        corpus.meta["annotation_report"] = report
        log.info("annotations: %s", report)
    return corpus


def split_zero_shot(corpus: Corpus, test_vertical: str) -> tuple[Corpus, Corpus]:
    if test_vertical not in corpus.verticals:
        raise UnknownVertical(test_vertical)
    if len(corpus.verticals) < 2:
        raise ValueError("zero-shot split needs at least two verticals")
    train = corpus.subset(p for p in corpus.pages if p.vertical != test_vertical)
    test = corpus.subset(p for p in corpus.pages if p.vertical == test_vertical)
    return train, test


# -- featurization ------------------------------------------------------------

@dataclass
class FeatureConfig:
    t_max: int = 128
    xpath_len: int = 20
    rel_half_len: int = REL_HALF_LEN
    d_max: int = D_MAX
    tau: int = TAU
    max_nodes: int = 300


@dataclass
class EncodedExample:
    page_id: str
    website_id: str
    vertical: str
    token_ids: np.ndarray          # (T,)
    node_spans: np.ndarray         # (N, 2) inclusive token range per node
    abs_xpath_tag_ids: np.ndarray  # (N, xpath_len)
    pop_bucket: np.ndarray         # (N,)
    pair_prefix_bucket: np.ndarray  # (N, N)
    pair_up_ids: np.ndarray        # (N, N, p)
    pair_down_ids: np.ndarray      # (N, N, p)
    gold_pairs: list[tuple[int, int]]
    n_gold_total: int = 0
    n_dropped_pairs: int = 0
    n_nodes_total: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.node_spans)

    @property
    def n_tokens(self) -> int:
        return len(self.token_ids)

    def token_node(self) -> np.ndarray:
        """Node index per token, -1 for CLS/SEP."""
        out = np.full(self.n_tokens, -1, dtype=np.int64)
        for i, (a, b) in enumerate(self.node_spans):
            out[a:b + 1] = i
        return out

    _ARRAYS = ("token_ids", "node_spans", "abs_xpath_tag_ids", "pop_bucket",
               "pair_prefix_bucket", "pair_up_ids", "pair_down_ids")

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in ("page_id", "website_id", "vertical",
                                           "n_gold_total", "n_dropped_pairs",
                                           "n_nodes_total")}
        for k in self._ARRAYS:
            arr = getattr(self, k)
            d[k] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        d["gold_pairs"] = [list(p) for p in self.gold_pairs]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EncodedExample":
        kw = {k: d[k] for k in ("page_id", "website_id", "vertical", "n_gold_total",
                                "n_dropped_pairs", "n_nodes_total")}
        for k in cls._ARRAYS:
            kw[k] = np.asarray(d[k]["data"], dtype=np.int64).reshape(d[k]["shape"])
        kw["gold_pairs"] = [tuple(p) for p in d["gold_pairs"]]
        return cls(**kw)


def save_encoded(examples, path, **header):
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"magic": ENCODED_MAGIC, "version": ENCODED_VERSION,
                            **header}) + "\n")
        for ex in examples:
            f.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")


def load_encoded(path) -> tuple[dict, list[EncodedExample]]:
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("magic") != ENCODED_MAGIC:
            raise ValueError(f"{path}: not an encoded-example file")
        if header.get("version") != ENCODED_VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        return header, [EncodedExample.from_json(json.loads(line)) for line in f
                        if line.strip()]


def _fixed_abs_path(tag_ids: list[int], n: int, pad: int) -> list[int]:
    if len(tag_ids) > n:
        return tag_ids[-n:]
    return tag_ids + [pad] * (n - len(tag_ids))


def pair_features(xpaths: list[XPath], cfg: FeatureConfig,
                  tags: TagVocab = DEFAULT_TAG_VOCAB):
    """Prefix buckets and fixed-length relative-path halves for all ordered pairs."""
    n, p = len(xpaths), cfg.rel_half_len
    prefix = np.zeros((n, n), dtype=np.int64)
    up = np.zeros((n, n, p), dtype=np.int64)
    down = np.zeros((n, n, p), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            if j < i:
                # the reverse pair shares d and swaps/reverses the halves
                prefix[i, j] = prefix[j, i]
                continue
            try:
                r = relative_xpath(xpaths[i], xpaths[j])
            except DisjointRoots:
                # only possible after depth-cap truncation of very deep nodes
                r = relative_xpath(XPath.of("html", *xpaths[i].steps),
                                   XPath.of("html", *xpaths[j].steps))
            prefix[i, j] = prefix_bucket(r.prefix_len, cfg.d_max)
            up[i, j], down[i, j] = fix_halves(r, p, tags)
            if i != j:
                rr = type(r)(r.prefix_len, tuple(reversed(r.down_tags)),
                             tuple(reversed(r.up_tags)))
                up[j, i], down[j, i] = fix_halves(rr, p, tags)
    return prefix, up, down


def featurize_page(page: PageRecord, vocab: Vocab, index: PopularityIndex | None,
                   cfg: FeatureConfig = FeatureConfig(), gold=(),
                   tags: TagVocab = DEFAULT_TAG_VOCAB) -> EncodedExample:
    """Encode one page: CLS, then each node's tokens followed by SEP."""
    if index is not None and index.website_id and page.website_id \
            and index.website_id != page.website_id:
        raise ValueError(f"index for {index.website_id} used on {page.website_id}")
    tokens = [Vocab.CLS]
    spans = []
    for node in page.nodes[:cfg.max_nodes]:
        ids = vocab.encode(node.text) or [Vocab.UNK]
        start = len(tokens)
        if start >= cfg.t_max:
            break
        ids = ids[:cfg.t_max - start]
        tokens.extend(ids)
        spans.append((start, start + len(ids) - 1))
        if len(tokens) < cfg.t_max:
            tokens.append(Vocab.SEP)
    kept = len(spans)
    nodes = page.nodes[:kept]
    abs_ids = [_fixed_abs_path([tags[t] for t in n.xpath.tags], cfg.xpath_len, tags.PAD)
               for n in nodes]
    if index is None:
        pops = [0] * kept
    else:
        pops = [index.bucket(n.text, cfg.tau) for n in nodes]
    prefix, up, down = pair_features([n.xpath for n in nodes], cfg, tags)
    gold = [(g.subject, g.object) if isinstance(g, PairLabel) else tuple(g) for g in gold]
    kept_gold = [g for g in gold if g[0] < kept and g[1] < kept]
    return EncodedExample(
        page_id=page.page_id, website_id=page.website_id, vertical=page.vertical,
        token_ids=np.asarray(tokens, dtype=np.int64),
        node_spans=np.asarray(spans, dtype=np.int64).reshape(-1, 2),
        abs_xpath_tag_ids=np.asarray(abs_ids, dtype=np.int64).reshape(kept, cfg.xpath_len),
        pop_bucket=np.asarray(pops, dtype=np.int64),
        pair_prefix_bucket=prefix, pair_up_ids=up, pair_down_ids=down,
        gold_pairs=kept_gold, n_gold_total=len(gold),
        n_dropped_pairs=len(gold) - len(kept_gold), n_nodes_total=len(page.nodes),
    )


def featurize_corpus(corpus: Corpus, vocab: Vocab, cfg: FeatureConfig = FeatureConfig(),
                     indexes: dict[str, PopularityIndex] | None = None) -> list[EncodedExample]:
    if indexes is None:
        indexes = corpus.popularity()
    return [featurize_page(p, vocab, indexes.get(p.website_id), cfg, corpus.gold(p.page_id))
            for p in corpus.pages]
