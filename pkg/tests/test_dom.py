import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rexpath.dom import (D_CAP, DEFAULT_TAG_VOCAB, EmptyPage, PageRecord, TagVocab, XPath,
                         XPathStep, normalize_text, parse_page, tag_id)


def paths(page):
    return [n.xpath.render() for n in page.nodes]


def test_two_divs():
    page = parse_page(b"<html><body><div>Height:</div><div>6 ft</div></body></html>",
                      "p0", "w", "v")
    assert [n.text for n in page.nodes] == ["Height:", "6 ft"]
    assert [n.node_id for n in page.nodes] == [0, 1]
    assert page.nodes[0].xpath == XPath.of(("html", 1), ("body", 1), ("div", 1))
    assert page.nodes[1].xpath == XPath.of(("html", 1), ("body", 1), ("div", 2))


def test_script_excluded():
    page = parse_page(b"<html><body><script>var x=1;</script><p>A</p></body></html>", "p")
    assert [n.text for n in page.nodes] == ["A"]


@pytest.mark.parametrize("tag", ["style", "noscript", "template"])
def test_other_hidden_regions_excluded(tag):
    html = f"<html><body><{tag}>hidden</{tag}><span>shown</span></body></html>"
    assert [n.text for n in parse_page(html.encode(), "p").nodes] == ["shown"]


def test_comments_excluded():
    page = parse_page(b"<html><body><!-- note --><b>x</b></body></html>", "p")
    assert [n.text for n in page.nodes] == ["x"]


def test_sibling_index_counts_per_tag():
    page = parse_page(b"<html><body><div>a</div><p>b</p><div>c</div></body></html>", "p")
    assert paths(page) == ["html[1]/body[1]/div[1]", "html[1]/body[1]/p[1]",
                           "html[1]/body[1]/div[2]"]


def test_implied_end_tags():
    page = parse_page(b"<html><body><ul><li>a<li>b</ul><p>x<p>y</body></html>", "p")
    assert paths(page) == ["html[1]/body[1]/ul[1]/li[1]", "html[1]/body[1]/ul[1]/li[2]",
                           "html[1]/body[1]/p[1]", "html[1]/body[1]/p[2]"]


def test_missing_html_root_and_void_tags():
    page = parse_page(b"<body>a<br>b<img src=x><span>c</span></body>", "p")
    assert [n.text for n in page.nodes] == ["a b", "c"]
    assert paths(page) == ["html[1]/body[1]", "html[1]/body[1]/span[1]"]


def test_mixed_content_keeps_document_order():
    page = parse_page(b"<html><body><li><b>Age:</b> 30</li></body></html>", "p")
    assert [n.text for n in page.nodes] == ["Age:", "30"]


def test_tags_lowercased_attributes_ignored():
    page = parse_page(b'<HTML><BODY><DIV class="x" id=y>t</DIV></BODY></HTML>', "p")
    assert paths(page) == ["html[1]/body[1]/div[1]"]


def test_empty_page():
    with pytest.raises(EmptyPage):
        parse_page(b"<html><body><script>x</script>  </body></html>", "p")


def test_lossy_utf8():
    page = parse_page(b"<p>caf\xe9 \xc3\xa9</p>", "p")
    assert page.nodes[0].text == "caf� é"


def test_depth_cap_keeps_leaf_side():
    html = "<html><body>" + "<div>" * 70 + "<span>deep</span>" + "</div>" * 70 + "</body></html>"
    page = parse_page(html.encode(), "p")
    xp = page.nodes[0].xpath
    assert len(xp) == D_CAP
    assert xp.leaf_tag == "span"
    assert xp.steps[0] == XPathStep("div", 1)


@pytest.mark.parametrize("raw, expected", [
    ("  Height: \n", "Height:"),
    ("6\u00a0ft", "6 ft"),
    ("", ""),
    ("a \t\n b", "a b"),
    ("é", "é"),
])
def test_normalize_text(raw, expected):
    assert normalize_text(raw) == expected


def test_tag_vocab():
    v = DEFAULT_TAG_VOCAB
    assert tag_id("<pad>") == TagVocab.PAD == 0
    assert tag_id("blink") == TagVocab.UNK
    assert tag_id("div") == v.tags.index("div")
    assert tag_id("div") not in (TagVocab.PAD, TagVocab.UNK)
    assert len(v) > 100


def test_xpath_render_parse_roundtrip():
    xp = XPath.of(("html", 1), ("body", 1), ("div", 3))
    assert XPath.parse(xp.render()) == xp
    assert XPath.parse("/html/body/div[3]") == xp


def test_page_record_json_roundtrip():
    page = parse_page(b"<html><body><div>Height:</div><div>6 ft</div></body></html>",
                      "p0", "w", "v")
    assert PageRecord.from_json(page.to_json()) == page


# random nested markup for the structural invariants
_tags = st.sampled_from(["div", "span", "ul", "li", "p", "b", "table", "tr", "td", "a"])
_words = st.text(alphabet="abcxyz :", min_size=1, max_size=6)


@st.composite
def markup(draw, depth=0):
    parts = []
    for _ in range(draw(st.integers(1, 3))):
        if depth < 4 and draw(st.booleans()):
            tag = draw(_tags)
            parts.append(f"<{tag}>{draw(markup(depth + 1))}</{tag}>")
        else:
            parts.append(draw(_words))
    return "".join(parts)


@settings(max_examples=150, deadline=None)
@given(markup())
def test_parse_invariants(body):
    html = f"<html><body>{body}</body></html>".encode()
    try:
        a = parse_page(html, "p")
    except EmptyPage:
        return
    b = parse_page(html, "p")
    assert a == b
    xps = [n.xpath for n in a.nodes]
    assert len(set(xps)) == len(xps)
    assert [n.node_id for n in a.nodes] == list(range(len(a.nodes)))
    assert all(n.text and n.text == normalize_text(n.text) for n in a.nodes)
    assert all(1 <= len(x) <= D_CAP for x in xps)
