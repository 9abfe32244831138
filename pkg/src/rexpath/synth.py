"""Synthetic template corpora with known key-value pairs.

Every website renders its pages from one fixed layout: a navigation bar,
a share box, a heading, one or two sections of key/value rows, and some
filler prose. Whether two nodes are related is a function of the tag path
between them alone, which :func:`check_relatedness` verifies.
"""

from __future__ import annotations

import html as html_lib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, PairLabel
from .dom import parse_page
from .xpath import relative_xpath


class InvalidTemplate(ValueError):
    pass


# row templates: container tag, row markup and note markup. {k} key, {v} value,
# {n} note. Notes look like values (unique phrases) but never relate to
# anything; the note path from the key is always one step longer than, or
# branches away from, the value path.
ROW_TEMPLATES = {
    "table_th": ("table", "<tr><th>{k}</th><td>{v}</td>{note}</tr>",
                 "<td><span>{n}</span></td>"),
    "table_b": ("table", "<tr><td><b>{k}</b></td><td>{v}</td>{note}</tr>",
                "<td><a>{n}</a></td>"),
    "li_span": ("ul", "<li><b>{k}</b><span>{v}</span>{note}</li>", "<em>{n}</em>"),
    "div_a": ("div", "<div><span>{k}</span><div><a>{v}</a></div>{note}</div>",
              "<p>{n}</p>"),
    "p_em": ("div", "<p><strong>{k}</strong><em>{v}</em>{note}</p>", "<span>{n}</span>"),
    "dl_div": ("dl", "<div><dt>{k}</dt><dd>{v}</dd>{note}</div>",
               "<dd><span>{n}</span></dd>"),
}

WRAPPER_TAGS = ("div", "section", "main", "article")
NAV_WORDS = ("Home", "Browse", "Search", "Contact", "About", "Help", "News",
             "Login", "Top Rated", "Latest")
SHARE_WORDS = ("Mail", "Print", "Feed", "Link")


@dataclass
class VerticalSpec:
    name: str
    n_websites: int = 4
    pages_per_website: int = 20
    templates: list[str] = field(default_factory=lambda: list(ROW_TEMPLATES))


@dataclass
class SynthConfig:
    verticals: list[VerticalSpec] = field(default_factory=lambda: [
        VerticalSpec("film"), VerticalSpec("sport"), VerticalSpec("campus")])
    rows_per_page: int = 6
    key_pool_size: int = 24
    sections_per_website: tuple[int, int] = (1, 2)
    wrapper_depth: tuple[int, int] = (1, 4)
    note_prob: float = 0.4
    # rows whose value is missing; such a row always carries a note, which
    # then directly follows the key in document order
    orphan_prob: float = 0.0
    nav_items: int = 4
    share_box: bool = True
    paragraphs: tuple[int, int] = (1, 2)
    lexicon_size: int = 400

    def __post_init__(self):
        self.verticals = [v if isinstance(v, VerticalSpec) else VerticalSpec(**v)
                          for v in self.verticals]
        self.sections_per_website = tuple(self.sections_per_website)
        self.wrapper_depth = tuple(self.wrapper_depth)
        self.paragraphs = tuple(self.paragraphs)
        names = [v.name for v in self.verticals]
        if len(set(names)) != len(names):
            raise InvalidTemplate(f"duplicate vertical names {names}")
        for v in self.verticals:
            bad = [t for t in v.templates if t not in ROW_TEMPLATES]
            if bad or not v.templates:
                raise InvalidTemplate(f"vertical {v.name}: unknown templates {bad}")
            if v.n_websites < 1 or v.pages_per_website < 1:
                raise InvalidTemplate(f"vertical {v.name}: needs websites and pages")
        if self.rows_per_page < 1 or self.rows_per_page > self.key_pool_size:
            raise InvalidTemplate("rows_per_page must be in [1, key_pool_size]")
        lo, hi = self.sections_per_website
        if not 1 <= lo <= hi or hi > self.rows_per_page:
            raise InvalidTemplate("bad sections_per_website")
        if self.lexicon_size < 20:
            raise InvalidTemplate("lexicon_size must be at least 20")
        if not (0.0 <= self.note_prob <= 1.0 and 0.0 <= self.orphan_prob < 1.0):
            raise InvalidTemplate("note_prob must be in [0, 1], orphan_prob in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gl", "kr", "pl", "st", "th", "tr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou", "ei")


def _syllables(rng, lo=2, hi=3):
    n = int(rng.integers(lo, hi + 1))
    return "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                   for _ in range(n))


def _lexicon(rng, size):
    words = set()
    while len(words) < size:
        words.add(_syllables(rng))
    return sorted(words)


def _word(w):
    return w.lexicon[w.rng.integers(len(w.lexicon))]


def _phrase(w, lo, hi):
    return " ".join(_word(w) for _ in range(int(w.rng.integers(lo, hi + 1))))


def _value_text(w):
    if w.rng.random() < 0.6:
        return _phrase(w, 1, 2)
    return f"{_word(w)} {int(w.rng.integers(10, 100000))}"


class _Unique:
    """Draws phrases never produced before (across the whole corpus).

    All text is built from one corpus-wide lexicon, so keys, values and
    filler share their words and a key is recognisable only by its form
    and position, never by a vocabulary of its own.
    """

    def __init__(self, rng, lexicon, reserved=()):
        self.rng = rng
        self.lexicon = lexicon
        self.used = set(w.lower() for w in reserved)

    def draw(self, make):
        for _ in range(1000):
            s = make(self)
            key = s.lower()
            if key not in self.used:
                self.used.add(key)
                return s
        raise RuntimeError("phrase space exhausted")


@dataclass
class SyntheticPage:
    vertical: str
    website: str
    page_id: str
    html: str
    pairs: list[tuple[str, str]]  # (key text, value text)


def _assign_templates(rng, cfg: SynthConfig, vspec: VerticalSpec) -> list[list[str]]:
    """Section templates per website, cycling through a shuffled template list.

    A site gets extra sections (up to the configured maximum) when that is
    needed for every template to appear somewhere in the vertical.
    """
    lo, hi = cfg.sections_per_website
    order = [vspec.templates[i] for i in rng.permutation(len(vspec.templates))]
    out, used = [], 0
    for s in range(vspec.n_websites):
        uncovered = max(0, len(order) - used)
        need = uncovered - hi * (vspec.n_websites - s - 1)
        n_sec = int(rng.integers(min(max(lo, need), hi), hi + 1))
        out.append([order[(used + k) % len(order)] for k in range(n_sec)])
        used += n_sec
    return out


def _site_layout(rng, cfg: SynthConfig, temps: list[str], keys, uniq):
    n_sec = len(temps)
    site_keys = [keys[i] for i in rng.choice(len(keys), cfg.rows_per_page, replace=False)]
    cuts = np.array_split(np.arange(cfg.rows_per_page), n_sec)
    dlo, dhi = cfg.wrapper_depth
    wrappers = [WRAPPER_TAGS[rng.integers(len(WRAPPER_TAGS))]
                for _ in range(int(rng.integers(dlo, dhi + 1)))]
    nav = [NAV_WORDS[i] for i in rng.choice(len(NAV_WORDS), cfg.nav_items, replace=False)]
    return {
        "title": uniq.draw(lambda r: _phrase(r, 1, 2).title()),
        "wrappers": wrappers,
        "sections": [(t, [site_keys[i] for i in cut]) for t, cut in zip(temps, cuts)],
        "nav": nav,
        "share": [SHARE_WORDS[i] for i in rng.choice(len(SHARE_WORDS), 2, replace=False)],
        "section_titles": [uniq.draw(lambda r: _phrase(r, 1, 2).title()) for _ in temps],
    }


def _render_page(rng, cfg: SynthConfig, layout, uniq):
    e = html_lib.escape
    pairs = []
    parts = [f"<html><head><title>{e(layout['title'])}</title></head><body>"]
    for w in layout["wrappers"]:
        parts.append(f"<{w}>")
    parts.append("<ul>" + "".join(f"<li><a>{e(x)}</a></li>" for x in layout["nav"]) + "</ul>")
    if cfg.share_box:
        parts.append("<div><span>Share:</span><ul>"
                     + "".join(f"<li><a>{e(x)}</a></li>" for x in layout["share"])
                     + "</ul></div>")
    parts.append(f"<h1>{e(uniq.draw(lambda r: _phrase(r, 2, 2).title()))}</h1>")
    for (tmpl, keys), stitle in zip(layout["sections"], layout["section_titles"]):
        container, row, note = ROW_TEMPLATES[tmpl]
        parts.append(f"<section><h2>{e(stitle)}</h2><{container}>")
        for k in keys:
            orphan = rng.random() < cfg.orphan_prob
            v = "" if orphan else uniq.draw(_value_text)
            n = ""
            if orphan or rng.random() < cfg.note_prob:
                n = note.format(n=e(uniq.draw(_value_text)))
            parts.append(row.format(k=e(k), v=e(v), note=n))
            if not orphan:
                pairs.append((k, v))
        parts.append(f"</{container}></section>")
    plo, phi = cfg.paragraphs
    for _ in range(int(rng.integers(plo, phi + 1))):
        parts.append(f"<p>{e(uniq.draw(lambda r: _phrase(r, 4, 7).capitalize() + '.'))}</p>")
    for w in reversed(layout["wrappers"]):
        parts.append(f"</{w}>")
    parts.append(f"<div><span>{e(layout['title'])}</span><span>Terms</span></div>")
    parts.append("</body></html>")
    return "".join(parts), pairs


def generate_pages(cfg: SynthConfig, seed: int) -> list[SyntheticPage]:
    root = np.random.default_rng(seed)
    reserved = set(NAV_WORDS) | set(SHARE_WORDS) | {"Share:", "Terms"}
    lex = _lexicon(np.random.default_rng(root.integers(2 ** 63)), cfg.lexicon_size)
    uniq = _Unique(np.random.default_rng(root.integers(2 ** 63)), lex, reserved)
    out = []
    for vspec in cfg.verticals:
        vrng = np.random.default_rng(root.integers(2 ** 63))
        # key pools are disjoint across verticals through the shared registry
        keys = [uniq.draw(lambda r: _phrase(r, 1, 2).title() + ":")
                for _ in range(cfg.key_pool_size)]
        assigned = _assign_templates(vrng, cfg, vspec)
        for s in range(vspec.n_websites):
            site = f"{vspec.name}-site{s}"
            layout = _site_layout(vrng, cfg, assigned[s], keys, uniq)
            for i in range(vspec.pages_per_website):
                page_html, pairs = _render_page(vrng, cfg, layout, uniq)
                out.append(SyntheticPage(vspec.name, site, f"{vspec.name}/{site}/{i:04d}",
                                         page_html, pairs))
    return out


def _labels_for(page, pairs):
    by_text = {}
    for n in page.nodes:
        by_text.setdefault(n.text, []).append(n.node_id)
    labels = []
    for k, v in pairs:
        ks, vs = by_text.get(k, []), by_text.get(v, [])
        if len(ks) != 1 or len(vs) != 1:
            raise InvalidTemplate(f"{page.page_id}: cannot locate pair {k!r} -> {v!r}")
        labels.append(PairLabel(page.page_id, ks[0], vs[0]))
    return labels


def generate_synthetic(cfg: SynthConfig, seed: int) -> Corpus:
    pages, pairs = [], {}
    for sp in generate_pages(cfg, seed):
        rec = parse_page(sp.html.encode(), sp.page_id, sp.website, sp.vertical)
        pages.append(rec)
        pairs[rec.page_id] = _labels_for(rec, sp.pairs)
    meta = {"generator": "synthetic", "seed": seed, "config": cfg.to_dict()}
    corpus = Corpus(pages, pairs, meta)
    check_relatedness(corpus)
    return corpus


def write_synthetic_tree(cfg: SynthConfig, seed: int, out_dir) -> Path:
    """Write raw pages as ``<vertical>/<website>/<page>.html`` plus ``pairs.jsonl``.

    The annotation file references nodes by text and XPath, the way an
    external labelled corpus would.
    """
    out = Path(out_dir)
    corpus = generate_synthetic(cfg, seed)
    html_by_id = {sp.page_id: sp.html for sp in generate_pages(cfg, seed)}
    for p in corpus.pages:
        f = out / p.vertical / p.website_id / (p.page_id.rsplit("/", 1)[1] + ".html")
        f.parent.mkdir(parents=True, exist_ok=True)
        f.write_text(html_by_id[p.page_id], encoding="utf-8")
    with open(out / "pairs.jsonl", "w", encoding="utf-8") as fh:
        for p in corpus.pages:
            for lab in corpus.gold(p.page_id):
                s, o = p.nodes[lab.subject], p.nodes[lab.object]
                fh.write(json.dumps({
                    "page_id": p.page_id,
                    "subject": {"xpath": s.xpath.render(), "text": s.text},
                    "object": {"xpath": o.xpath.render(), "text": o.text}},
                    ensure_ascii=False) + "\n")
    return out


def check_relatedness(corpus: Corpus) -> dict:
    """Verify relatedness is a function of the tag-only relative path.

    Returns the set of related patterns; raises if any pattern labels both a
    gold pair and a non-gold pair anywhere in the corpus.
    """
    related, unrelated = set(), set()
    for page in corpus.pages:
        gold = {(g.subject, g.object) for g in corpus.gold(page.page_id)}
        for i, a in enumerate(page.nodes):
            for j, b in enumerate(page.nodes):
                if i == j:
                    continue
                pat = relative_xpath(a.xpath, b.xpath).full
                (related if (i, j) in gold else unrelated).add(pat)
    clash = related & unrelated
    if clash:
        raise InvalidTemplate(f"patterns both related and unrelated: {sorted(clash)[:5]}")
    return {"related": related, "n_unrelated": len(unrelated)}
