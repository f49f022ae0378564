"""Filter parsing and classification, checked against the frozen
reference cases and a full-scan differential."""

import json
import random

import pytest

from mvpcrawl.abp import (
    FilterRule,
    InvalidUrl,
    Party,
    SkipReason,
    Skipped,
    build_filterset,
    classify,
    classify_scan,
    parse_rule,
)
from mvpcrawl.model import ResourceType

from .conftest import fixture_path


def test_parse_domain_anchor_rule():
    rule = parse_rule("||ads.example.com^")
    assert isinstance(rule, FilterRule)
    assert not rule.is_exception
    assert rule.anchor_domain and not rule.anchor_start and not rule.anchor_end
    assert rule.pattern == "ads.example.com^"
    assert rule.type_mask == frozenset()
    assert rule.party is Party.ANY


def test_parse_comment_and_metadata():
    assert parse_rule("! comment").reason is SkipReason.COMMENT
    assert parse_rule("[Adblock Plus 2.0]").reason is SkipReason.COMMENT
    assert parse_rule("").reason is SkipReason.COMMENT


def test_parse_cosmetic():
    assert parse_rule("example.com##.ad").reason is SkipReason.COSMETIC
    assert parse_rule("example.com#@#.ok").reason is SkipReason.COSMETIC
    assert parse_rule("example.com#?#.x").reason is SkipReason.COSMETIC


def test_parse_exception_with_options():
    rule = parse_rule("@@||example.com/allow$script,domain=news.com")
    assert isinstance(rule, FilterRule)
    assert rule.is_exception
    assert rule.type_mask == frozenset({ResourceType.SCRIPT})
    assert rule.domains_include == frozenset({"news.com"})
    assert rule.domains_exclude == frozenset()


def test_parse_domain_negation_and_party():
    rule = parse_rule("/p/x$third-party,domain=a.com|~b.com,image")
    assert rule.party is Party.THIRD_ONLY
    assert rule.domains_include == frozenset({"a.com"})
    assert rule.domains_exclude == frozenset({"b.com"})
    assert rule.type_mask == frozenset({ResourceType.IMAGE})


def test_parse_unsupported_option_skips():
    assert parse_rule("||x.com^$popup").reason is SkipReason.UNSUPPORTED_OPTION
    assert parse_rule("||x.com^$csp=script-src").reason is SkipReason.UNSUPPORTED_OPTION
    assert parse_rule("||x.com^$redirect=noop").reason is SkipReason.UNSUPPORTED_OPTION


def test_parse_regex_rule_skips():
    assert parse_rule("/banner[0-9]+/").reason is SkipReason.UNSUPPORTED_REGEX


def test_build_filterset_partition_and_summary():
    fs = build_filterset([
        "||a.com^",
        "shortp",
        "@@||a.com/ok",
        "! note",
        "x.com##.ad",
        "||y.com^$ping",
    ])
    summary = fs.parse_summary()
    assert summary["block-rules"] == 2
    assert summary["exception-rules"] == 1
    assert summary["skipped"]["comment"] == 1
    assert summary["skipped"]["cosmetic"] == 1
    assert summary["skipped"]["unsupported-option"] == 1
    indexed = sum(len(v) for v in fs._block_index.values())
    assert indexed + len(fs._block_fallback) == len(fs.block_rules)


def test_classify_spec_examples():
    fs = build_filterset(["||tracker.net^"])
    result = classify(fs, "http://tracker.net/p.gif", "http://a.com/", ResourceType.IMAGE, True)
    assert result.decision == "matched"

    fs = build_filterset(["/banner/*$image"])
    result = classify(fs, "http://a.com/banner/x.js", "http://a.com/", ResourceType.SCRIPT, False)
    assert result.decision == "none"

    fs = build_filterset([])
    assert classify(fs, "http://any.com/x", "http://a.com/", ResourceType.OTHER, True).decision == "none"


def test_classify_requires_absolute_urls():
    fs = build_filterset(["||a.com^"])
    with pytest.raises(InvalidUrl):
        classify(fs, "/relative/path", "http://a.com/", ResourceType.IMAGE, False)
    with pytest.raises(InvalidUrl):
        classify(fs, "http://a.com/x", "not-a-url", ResourceType.IMAGE, False)


def test_duplicate_rules_do_not_change_decision():
    one = build_filterset(["||dup.com^"])
    two = build_filterset(["||dup.com^", "||dup.com^"])
    for url in ("http://dup.com/a", "http://other.com/b"):
        assert (
            classify(one, url, "http://d.com/", ResourceType.IMAGE, True).decision
            == classify(two, url, "http://d.com/", ResourceType.IMAGE, True).decision
        )


def load_reference_cases():
    with open(fixture_path("abp_reference_cases.json"), encoding="utf-8") as fh:
        return json.load(fh)["cases"]


@pytest.mark.parametrize("case", load_reference_cases(), ids=lambda c: c["name"])
def test_reference_oracle_cases(case):
    fs = build_filterset(case["rules"])
    for fn in (classify, classify_scan):
        result = fn(fs, case["url"], case["doc"], ResourceType(case["rtype"]), case["third_party"])
        assert result.decision == case["expect"], f"{case['name']} via {fn.__name__}"


def test_reference_case_count():
    assert len(load_reference_cases()) >= 30


# -- randomized differential ---------------------------------------------------

_HOSTS = ["ads.alpha.com", "cdn.beta.net", "tracker.gamma.org", "static.delta.com",
          "alpha.com", "beta.net", "pix.epsilon.io"]
_PATH_BITS = ["banner", "img", "track", "pixel", "api", "x", "very-long-segment", "p%20q"]
_DOCS = ["http://alpha.com/", "http://news.com/page", "http://shop.com/item", "http://beta.net/"]
_TYPES = list(ResourceType)


def random_rule(rng: random.Random) -> str:
    parts = []
    if rng.random() < 0.25:
        parts.append("@@")
    anchor = rng.choice(["", "|", "||"])
    parts.append(anchor)
    if anchor == "||":
        parts.append(rng.choice(_HOSTS))
    else:
        if anchor == "|":
            parts.append("http://" + rng.choice(_HOSTS))
        else:
            parts.append(rng.choice(_PATH_BITS))
    body = []
    for _ in range(rng.randrange(3)):
        body.append(rng.choice(["/", "^", "*", rng.choice(_PATH_BITS)]))
    parts.extend(body)
    if rng.random() < 0.15:
        parts.append("|")
    opts = []
    if rng.random() < 0.4:
        opts.extend(rng.sample(["image", "script", "xhr", "stylesheet", "subdocument"],
                               rng.randrange(1, 3)))
    if rng.random() < 0.25:
        opts.append(rng.choice(["third-party", "~third-party"]))
    if rng.random() < 0.25:
        doms = rng.sample(["alpha.com", "news.com", "shop.com", "beta.net"], rng.randrange(1, 3))
        opts.append("domain=" + "|".join(("~" if rng.random() < 0.4 else "") + d for d in doms))
    line = "".join(parts)
    if opts:
        line += "$" + ",".join(opts)
    return line


def random_url(rng: random.Random) -> str:
    host = rng.choice(_HOSTS)
    path = "/".join(rng.choice(_PATH_BITS) for _ in range(rng.randrange(1, 4)))
    url = f"http://{host}/{path}"
    if rng.random() < 0.3:
        url += f"?id={rng.randrange(100)}"
    if rng.random() < 0.1:
        url = url.upper().replace("HTTP", "http", 1)
    return url


def run_differential(trials: int, seed: int) -> int:
    rng = random.Random(seed)
    done = 0
    while done < trials:
        fs = build_filterset(random_rule(rng) for _ in range(rng.randrange(1, 25)))
        for _ in range(50):
            url = random_url(rng)
            doc = rng.choice(_DOCS)
            rtype = rng.choice(_TYPES)
            third = rng.random() < 0.5
            fast = classify(fs, url, doc, rtype, third)
            slow = classify_scan(fs, url, doc, rtype, third)
            assert fast.decision == slow.decision, (
                f"index/scan divergence: url={url!r} doc={doc!r} rtype={rtype} third={third} "
                f"fast={fast.decision} slow={slow.decision} rules={[r.raw for r in fs.block_rules]}"
            )
            if fast.rule is not None or slow.rule is not None:
                assert fast.rule.raw == slow.rule.raw
            done += 1
    return done


def test_index_equals_scan_differential():
    assert run_differential(2000, seed=7) >= 2000


def test_exception_dominance():
    rng = random.Random(11)
    for _ in range(200):
        blocks = [random_rule(rng).removeprefix("@@") for _ in range(rng.randrange(1, 8))]
        fs_before = build_filterset(blocks)
        extra_exception = "@@" + random_rule(rng).removeprefix("@@")
        fs_after = build_filterset(blocks + [extra_exception])
        url, doc = random_url(rng), rng.choice(_DOCS)
        rtype, third = rng.choice(_TYPES), rng.random() < 0.5
        before = classify(fs_before, url, doc, rtype, third).decision
        after = classify(fs_after, url, doc, rtype, third).decision
        if before == "none":
            assert after == "none"


def test_block_monotonicity_without_exceptions():
    rng = random.Random(13)
    for _ in range(200):
        blocks = [random_rule(rng).removeprefix("@@") for _ in range(rng.randrange(1, 8))]
        fs_before = build_filterset(blocks)
        fs_after = build_filterset(blocks + [random_rule(rng).removeprefix("@@")])
        url, doc = random_url(rng), rng.choice(_DOCS)
        rtype, third = rng.choice(_TYPES), rng.random() < 0.5
        if classify(fs_before, url, doc, rtype, third).decision == "matched":
            assert classify(fs_after, url, doc, rtype, third).decision == "matched"
