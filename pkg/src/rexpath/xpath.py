"""Common prefixes, lowest common ancestors and relative XPaths."""

from __future__ import annotations

from dataclasses import dataclass

from .dom import DEFAULT_TAG_VOCAB, TagVocab, XPath

D_MAX = 25
REL_HALF_LEN = 5


class DisjointRoots(ValueError):
    """Two paths share no leading step, so they cannot be from one page."""


@dataclass(frozen=True)
class RelativeXPath:
    prefix_len: int
    up_tags: tuple[str, ...]
    down_tags: tuple[str, ...]

    @property
    def lca_tag(self) -> str:
        return self.up_tags[-1]

    @property
    def full(self) -> tuple[str, ...]:
        return self.up_tags + self.down_tags[1:]


def common_prefix(a: XPath, b: XPath) -> tuple[XPath, int]:
    """Longest run of equal leading (tag, index) steps and its length."""
    d = 0
    for sa, sb in zip(a.steps, b.steps):
        if sa != sb:
            break
        d += 1
    if d == 0:
        raise DisjointRoots(f"{a} vs {b}")
    return XPath(a.steps[:d]), d


def relative_xpath(a: XPath, b: XPath) -> RelativeXPath:
    """Directed tag path from ``a`` up to the LCA and down to ``b``."""
    _, d = common_prefix(a, b)
    lca = a.steps[d - 1].tag
    up = tuple(s.tag for s in reversed(a.steps[d:])) + (lca,)
    down = (lca,) + tuple(s.tag for s in b.steps[d:])
    return RelativeXPath(d, up, down)


def prefix_bucket(d: int, d_max: int = D_MAX) -> int:
    return min(d, d_max)


def fix_halves(r: RelativeXPath, p: int = REL_HALF_LEN,
               vocab: TagVocab = DEFAULT_TAG_VOCAB) -> tuple[list[int], list[int]]:
    """Pad/truncate both halves to ``p`` tag ids.

    Truncation keeps the steps nearest the text nodes; the LCA tag stays the
    last up id and the first down id.
    """
    up, down = r.up_tags, r.down_tags
    if len(up) > p:
        up = up[:p - 1] + up[-1:] if p > 1 else up[-1:]
    if len(down) > p:
        down = down[:1] + down[len(down) - (p - 1):] if p > 1 else down[:1]
    up_ids = [vocab[t] for t in up] + [vocab.PAD] * (p - len(up))
    down_ids = [vocab[t] for t in down] + [vocab.PAD] * (p - len(down))
    return up_ids, down_ids
