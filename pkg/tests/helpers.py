"""Small random pages, encoded examples and model configs for the model tests."""

import numpy as np

from rexpath.corpus import FeatureConfig, build_vocab, featurize_page
from rexpath.dom import parse_page
from rexpath.encoder import EncoderConfig, init_params
from rexpath.popularity import build_index

TAGS = ("div", "span", "ul", "li", "p", "b", "td", "a")
WORDS = ("height", "age", "born", "x", "y", "z", "film", ":")


def random_html(rng, n_nodes=6, max_depth=4):
    parts = ["<html><body>"]
    for _ in range(n_nodes):
        depth = int(rng.integers(1, max_depth + 1))
        tags = [TAGS[rng.integers(len(TAGS))] for _ in range(depth)]
        words = " ".join(WORDS[rng.integers(len(WORDS))] for _ in range(rng.integers(1, 4)))
        parts.append("".join(f"<{t}>" for t in tags) + words
                     + "".join(f"</{t}>" for t in reversed(tags)))
    parts.append("</body></html>")
    return "".join(parts).encode()


def small_feature_config(t_max=48):
    return FeatureConfig(t_max=t_max, xpath_len=8, rel_half_len=3, d_max=6, tau=4)


def small_encoder_config(vocab_size, **kw):
    fc = small_feature_config(kw.pop("t_max", 48))
    base = dict(vocab_size=vocab_size, d_model=8, n_heads=2, n_layers=3, alpha=2, beta=1,
                d_ff=12, tag_emb_dim=3, xpath_len=fc.xpath_len,
                rel_half_len=fc.rel_half_len, d_max=fc.d_max, tau=fc.tau, t_max=fc.t_max,
                dropout=0.0, dtype="float64")
    base.update(kw)
    return EncoderConfig(**base)


def random_example(seed, n_nodes=6, t_max=48):
    """(page, example, vocab) with two pages' worth of popularity counts."""
    rng = np.random.default_rng(seed)
    page = parse_page(random_html(rng, n_nodes), f"v/w/{seed}", "w", "v")
    other = parse_page(random_html(rng, n_nodes), f"v/w/{seed}b", "w", "v")
    vocab = build_vocab([page, other], min_freq=1)
    n = len(page.nodes)
    gold = [(i, i + 1) for i in range(0, n - 1, 2)]
    ex = featurize_page(page, vocab, build_index([page, other]), small_feature_config(t_max),
                        gold)
    return page, ex, vocab


def randomized_params(cfg, seed, scale=0.5):
    """Parameters with every array (bias tables included) filled randomly."""
    ps = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1000)
    for k in ps:
        ps.values[k][...] = rng.standard_normal(ps[k].shape) * scale
    return ps


def model_loss_and_grads(ex, ps, cfg, samples):
    """Summed pair loss of encoder + biaffine; fills ``ps.grads``."""
    from rexpath.train import page_loss_and_grad
    ps.zero_grad()
    return page_loss_and_grad(ex, ps, cfg, samples, 1.0)


def gradient_check(ex, ps, cfg, samples, step=1e-5, per_group=None, seed=0, floor=1e-5):
    """Worst relative error per parameter group, central differences.

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    ``per_group`` limits how many entries of each array are probed.
    """
    from rexpath.encoder import forward
    from rexpath.pairs import biaffine_score, node_states, pair_loss
    model_loss_and_grads(ex, ps, cfg, samples)
    grads = {k: g.copy() for k, g in ps.grads.items()}
    rng = np.random.default_rng(seed)
    s, o, y = (np.array([x[k] for x in samples]) for k in range(3))

    def loss():
        hn = node_states(forward(ex, ps, cfg)[0], ex.node_spans)
        return pair_loss(biaffine_score(hn[s], hn[o], ps), y, "sum")[0]

    worst = {}
    for name in ps:
        arr = ps.values[name]
        idx = list(np.ndindex(arr.shape))
        if per_group is not None and len(idx) > per_group:
            idx = [idx[i] for i in rng.choice(len(idx), per_group, replace=False)]
        err = 0.0
        for i in idx:
            old = arr[i]
            arr[i] = old + step
            up = loss()
            arr[i] = old - step
            dn = loss()
            arr[i] = old
            num = (up - dn) / (2 * step)
            a = grads[name][i]
            err = max(err, abs(a - num) / max(abs(a), abs(num), floor))
        worst[name] = err
    return worst
