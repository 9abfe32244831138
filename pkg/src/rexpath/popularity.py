"""Per-website text popularity: how many pages contain a given string."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

TAU = 20


class MixedWebsites(ValueError):
    pass


@dataclass
class PopularityIndex:
    website_id: str
    n_pages: int
    counts: dict[str, int] = field(default_factory=dict)

    def pop(self, text: str) -> int:
        # a text absent from the index still occurs on the page being asked about
        return self.counts.get(text, 1)

    def bucket(self, text: str, tau: int = TAU) -> int:
        return pop_bucket(min(self.pop(text), self.n_pages), self.n_pages, tau)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"#website={self.website_id}\n#N={self.n_pages}\n")
            for text, c in sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0])):
                f.write(f"{c}\t{text}\n")

    @classmethod
    def load(cls, path) -> "PopularityIndex":
        website, n, counts = "", 0, {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if line.startswith("#website="):
                    website = line[len("#website="):]
                elif line.startswith("#N="):
                    n = int(line[3:])
                elif line:
                    c, text = line.split("\t", 1)
                    counts[text] = int(c)
        return cls(website, n, counts)


def build_index(pages) -> PopularityIndex:
    """Count, for every text string, the pages of one website containing it."""
    pages = list(pages)
    if not pages:
        raise ValueError("cannot index an empty website")
    sites = {p.website_id for p in pages}
    if len(sites) > 1:
        raise MixedWebsites(sorted(sites))
    counts = Counter()
    for p in pages:
        counts.update({n.text for n in p.nodes})
    return PopularityIndex(pages[0].website_id, len(pages), dict(counts))


def pop_bucket(pop: int, n: int, tau: int = TAU) -> int:
    """floor(tau * ln(pop) / ln(n)), clamped to [0, tau]; 0 when n == 1.

    The float estimate is corrected with exact integer arithmetic:
    b <= tau*ln(pop)/ln(n)  iff  n**b <= pop**tau.
    """
    if n <= 1 or pop <= 1:
        return 0
    pop = min(pop, n)
    b = math.floor(tau * math.log(pop) / math.log(n))
    b = max(0, min(tau, b))
    target = pop ** tau
    while b < tau and n ** (b + 1) <= target:
        b += 1
    while b > 0 and n ** b > target:
        b -= 1
    return b
