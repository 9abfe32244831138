"""Parse HTML into a DOM tree and pull out the text nodes of a page.

A page becomes an ordered list of :class:`TextNode`, each carrying its
normalized text and the absolute XPath of the element that holds it.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass
from html.parser import HTMLParser

log = logging.getLogger(__name__)

D_CAP = 50

PAD_TAG = "<pad>"
UNK_TAG = "<unk>"

# Standard HTML element names. PAD is id 0 and UNK id 1; everything else
# follows in this order, so ids are stable across runs.
HTML_TAGS = (
    "a", "abbr", "acronym", "address", "applet", "area", "article", "aside",
    "audio", "b", "base", "basefont", "bdi", "bdo", "big", "blockquote",
    "body", "br", "button", "canvas", "caption", "center", "cite", "code",
    "col", "colgroup", "data", "datalist", "dd", "del", "details", "dfn",
    "dialog", "dir", "div", "dl", "dt", "em", "embed", "fieldset",
    "figcaption", "figure", "font", "footer", "form", "frame", "frameset",
    "h1", "h2", "h3", "h4", "h5", "h6", "head", "header", "hgroup", "hr",
    "html", "i", "iframe", "img", "input", "ins", "kbd", "label", "legend",
    "li", "link", "main", "map", "mark", "menu", "meta", "meter", "nav",
    "nobr", "noframes", "noscript", "object", "ol", "optgroup", "option",
    "output", "p", "param", "picture", "pre", "progress", "q", "rp", "rt",
    "ruby", "s", "samp", "script", "search", "section", "select", "small",
    "source", "span", "strike", "strong", "style", "sub", "summary", "sup",
    "svg", "table", "tbody", "td", "template", "textarea", "tfoot", "th",
    "thead", "time", "title", "tr", "track", "tt", "u", "ul", "var", "video",
    "wbr",
)


class TagVocab:
    """Closed tag vocabulary with reserved PAD (0) and UNK (1) slots."""

    PAD = 0
    UNK = 1

    def __init__(self, tags=HTML_TAGS):
        self.tags = [PAD_TAG, UNK_TAG, *tags]
        self._ids = {t: i for i, t in enumerate(self.tags)}

    def __len__(self):
        return len(self.tags)

    def __getitem__(self, tag: str) -> int:
        return self._ids.get(tag, self.UNK)

    def __contains__(self, tag: str) -> bool:
        return tag in self._ids


DEFAULT_TAG_VOCAB = TagVocab()


def tag_id(tag: str, vocab: TagVocab = DEFAULT_TAG_VOCAB) -> int:
    """Vocabulary id of ``tag``; unknown tags map to UNK."""
    return vocab[tag]


class MalformedMarkup(ValueError):
    pass


class EmptyPage(ValueError):
    pass


@dataclass(frozen=True, order=True)
class XPathStep:
    tag: str
    index: int = 1

    def __post_init__(self):
        if not self.tag:
            raise ValueError("empty tag in XPath step")
        if self.index < 1:
            raise ValueError(f"sibling index must be >= 1, got {self.index}")

    def __str__(self):
        return f"{self.tag}[{self.index}]"


_STEP_RE = re.compile(r"^([^\[\]/]+?)(?:\[(\d+)\])?$")


@dataclass(frozen=True)
class XPath:
    steps: tuple[XPathStep, ...]

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i):
        return self.steps[i]

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(s.tag for s in self.steps)

    @property
    def leaf_tag(self) -> str:
        return self.steps[-1].tag

    def render(self) -> str:
        return "/".join(str(s) for s in self.steps)

    __str__ = render

    @classmethod
    def parse(cls, text: str) -> "XPath":
        """Parse ``tag[i]/tag[i]/...``. A leading ``/`` and missing indices
        (read as 1) are tolerated so foreign annotation files load too."""
        steps = []
        for part in text.strip().strip("/").split("/"):
            m = _STEP_RE.match(part.strip())
            if m is None:
                raise ValueError(f"bad xpath step {part!r} in {text!r}")
            steps.append(XPathStep(m.group(1).lower(), int(m.group(2) or 1)))
        return cls(tuple(steps))

    @classmethod
    def of(cls, *pairs) -> "XPath":
        """Shorthand: ``XPath.of(("html", 1), ("body", 1))`` or bare tags."""
        steps = []
        for p in pairs:
            if isinstance(p, XPathStep):
                steps.append(p)
            else:
                steps.append(XPathStep(p) if isinstance(p, str) else XPathStep(*p))
        return cls(tuple(steps))


@dataclass(frozen=True)
class TextNode:
    node_id: int
    text: str
    xpath: XPath


@dataclass
class PageRecord:
    page_id: str
    website_id: str
    vertical: str
    nodes: list[TextNode]

    def to_json(self) -> dict:
        return {
            "page_id": self.page_id,
            "website_id": self.website_id,
            "vertical": self.vertical,
            "nodes": [
                {"node_id": n.node_id, "text": n.text, "xpath": n.xpath.render()}
                for n in self.nodes
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "PageRecord":
        nodes = [TextNode(n["node_id"], n["text"], XPath.parse(n["xpath"]))
                 for n in d["nodes"]]
        return cls(d["page_id"], d["website_id"], d["vertical"], nodes)


_WS_RE = re.compile(r"\s+")


def normalize_text(raw: str) -> str:
    """NFC-normalize, collapse whitespace runs (NBSP included), strip."""
    text = unicodedata.normalize("NFC", raw)
    # \s in str patterns already covers U+00A0 and the other Unicode spaces
    return _WS_RE.sub(" ", text).strip()


VOID_TAGS = frozenset({
    "area", "base", "basefont", "br", "col", "command", "embed", "frame",
    "hr", "img", "input", "keygen", "link", "meta", "param", "source",
    "track", "wbr",
})
SKIP_TEXT_TAGS = frozenset({"script", "style", "noscript", "template"})

# An opening tag on the left implicitly closes an open element from the set
# on the right, provided no element from the stop set lies in between.
_IMPLIED_CLOSE = {
    "p": ({"p"}, {"div", "td", "th", "li", "body", "table", "section"}),
    "li": ({"li"}, {"ul", "ol", "menu"}),
    "dt": ({"dt", "dd"}, {"dl"}),
    "dd": ({"dt", "dd"}, {"dl"}),
    "tr": ({"tr", "td", "th"}, {"table", "thead", "tbody", "tfoot"}),
    "td": ({"td", "th"}, {"tr", "table"}),
    "th": ({"td", "th"}, {"tr", "table"}),
    "option": ({"option"}, {"select", "datalist", "optgroup"}),
    "thead": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "tbody": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "tfoot": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
}


class _Element:
    __slots__ = ("tag", "index", "parent", "children", "texts", "first_pos",
                 "_tag_counts")

    def __init__(self, tag, parent):
        self.tag = tag
        self.parent = parent
        self.children = []
        self.texts = []
        self.first_pos = None
        self._tag_counts = {}
        if parent is None:
            self.index = 1
        else:
            parent._tag_counts[tag] = parent._tag_counts.get(tag, 0) + 1
            self.index = parent._tag_counts[tag]
            parent.children.append(self)

    def path(self) -> list[XPathStep]:
        steps = []
        el = self
        while el is not None:
            steps.append(XPathStep(el.tag, el.index))
            el = el.parent
        steps.reverse()
        return steps


class _TreeBuilder(HTMLParser):
    """Lenient tree builder on top of the stdlib tokenizer.

    Handles void elements, the common implied end tags, and stray end tags;
    everything ends up under a single ``html`` root.
    """

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = _Element("html", None)
        self.stack = [self.root]
        self.seen_html = False
        self.pos = 0
        self.skip_depth = 0

    def _close_implied(self, tag):
        rule = _IMPLIED_CLOSE.get(tag)
        if rule is None:
            return
        closes, stops = rule
        for k in range(len(self.stack) - 1, 0, -1):
            t = self.stack[k].tag
            if t in closes:
                self._pop_to(k)
                return
            if t in stops:
                return

    def _pop_to(self, k):
        while len(self.stack) > k:
            el = self.stack.pop()
            if el.tag in SKIP_TEXT_TAGS:
                self.skip_depth -= 1

    def handle_starttag(self, tag, attrs):
        tag = tag.lower()
        if tag == "html":
            # the synthetic root stands in for the first <html>
            if not self.seen_html and len(self.stack) == 1 and not self.root.children:
                self.seen_html = True
                return
        self._close_implied(tag)
        el = _Element(tag, self.stack[-1])
        if tag not in VOID_TAGS:
            self.stack.append(el)
            if tag in SKIP_TEXT_TAGS:
                self.skip_depth += 1

    def handle_startendtag(self, tag, attrs):
        tag = tag.lower()
        self._close_implied(tag)
        _Element(tag, self.stack[-1])

    def handle_endtag(self, tag):
        tag = tag.lower()
        for k in range(len(self.stack) - 1, 0, -1):
            if self.stack[k].tag == tag:
                self._pop_to(k)
                return
        # unmatched end tag: ignored

    def handle_data(self, data):
        if self.skip_depth > 0:
            return
        el = self.stack[-1]
        if el.first_pos is None:
            el.first_pos = self.pos
        el.texts.append(data)
        self.pos += 1


def build_tree(html: str):
    builder = _TreeBuilder()
    try:
        builder.feed(html)
        builder.close()
    except Exception as e:  # html.parser raises only on pathological input
        raise MalformedMarkup(str(e)) from e
    return builder.root


def extract_text_nodes(root, d_cap: int = D_CAP) -> list[TextNode]:
    """Text nodes in document order.

    All direct text runs of one element are joined into a single node placed
    at the position of its first run; this keeps XPaths unique per page.
    """
    found = []
    todo = [root]
    while todo:
        el = todo.pop()
        if el.texts:
            text = normalize_text(" ".join(el.texts))
            if text:
                found.append((el.first_pos, text, el))
        todo.extend(reversed(el.children))
    found.sort(key=lambda t: t[0])
    nodes = []
    for i, (_, text, el) in enumerate(found):
        steps = el.path()
        if len(steps) > d_cap:
            steps = steps[-d_cap:]
        nodes.append(TextNode(i, text, XPath(tuple(steps))))
    return nodes


def parse_page(html_bytes: bytes, page_id: str, website_id: str = "",
               vertical: str = "", d_cap: int = D_CAP) -> PageRecord:
    if isinstance(html_bytes, bytes):
        html = html_bytes.decode("utf-8", errors="replace")
    else:
        html = html_bytes
    root = build_tree(html)
    nodes = extract_text_nodes(root, d_cap=d_cap)
    if not nodes:
        raise EmptyPage(page_id)
    return PageRecord(page_id, website_id, vertical, nodes)
