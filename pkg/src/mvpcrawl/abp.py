"""AdBlockPlus-format filter parsing and request classification.

Supports the URL-matching subset of the ABP grammar used for request
post-processing: block and ``@@`` exception rules, ``||`` / ``|``
anchors, ``*`` wildcards, ``^`` separators, resource-type options,
``third-party`` / ``~third-party``, and ``domain=`` constraints.
Cosmetic rules and unsupported options skip the rule rather than error.

Matching is case-insensitive over the full URL. ``domain=`` entries are
registrable domains and are evaluated against the document host by
dot-boundary suffix comparison, which coincides with an eTLD+1
comparison for such entries without needing a suffix table here.
"""

from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from .model import ResourceType

TOKEN_LEN = 8

# A separator matches any character outside [a-zA-Z0-9_.%-], or the URL end.
_SEPARATOR = r"(?:[^a-z0-9_.%\-]|$)"
_DOMAIN_ANCHOR = r"^[a-z][a-z0-9+.\-]*://(?:[^/?#]*\.)?"

_TYPE_OPTIONS = {
    "script": ResourceType.SCRIPT,
    "image": ResourceType.IMAGE,
    "stylesheet": ResourceType.STYLESHEET,
    "xhr": ResourceType.XHR,
    "subdocument": ResourceType.SUBDOCUMENT,
    "document": ResourceType.DOCUMENT,
    "font": ResourceType.FONT,
    "media": ResourceType.MEDIA,
    "websocket": ResourceType.WEBSOCKET,
    "other": ResourceType.OTHER,
}


class SkipReason(str, enum.Enum):
    COMMENT = "comment"
    COSMETIC = "cosmetic"
    UNSUPPORTED_OPTION = "unsupported-option"
    UNSUPPORTED_REGEX = "unsupported-regex"


@dataclass(frozen=True)
class Skipped:
    reason: SkipReason
    line: str


class Party(str, enum.Enum):
    ANY = "any"
    THIRD_ONLY = "third-only"
    FIRST_ONLY = "first-only"


class InvalidUrl(ValueError):
    pass


@dataclass(frozen=True)
class FilterRule:
    """One parsed URL rule plus its compiled matcher."""

    raw: str
    is_exception: bool
    pattern: str
    anchor_domain: bool
    anchor_start: bool
    anchor_end: bool
    type_mask: frozenset[ResourceType]
    party: Party
    domains_include: frozenset[str]
    domains_exclude: frozenset[str]
    regex: re.Pattern = field(compare=False, repr=False)

    def matches(self, url: str, doc_host: str, rtype: ResourceType, third_party: bool) -> bool:
        """URL, type, party, and domain constraints together; ``url`` and
        ``doc_host`` must already be lowercased."""
        if self.type_mask and rtype not in self.type_mask:
            return False
        if self.party is Party.THIRD_ONLY and not third_party:
            return False
        if self.party is Party.FIRST_ONLY and third_party:
            return False
        if self.domains_exclude and _host_in(doc_host, self.domains_exclude):
            return False
        if self.domains_include and not _host_in(doc_host, self.domains_include):
            return False
        return self.regex.search(url) is not None

    def index_token(self) -> str | None:
        """First TOKEN_LEN chars of the longest literal run, if long enough.

        Any URL the rule matches must contain that run verbatim, so the
        token can key a candidate index without changing decisions.
        """
        runs = [r for r in re.split(r"[*^]", self.pattern) if r]
        if not runs:
            return None
        longest = max(runs, key=len)
        if len(longest) < TOKEN_LEN:
            return None
        return longest[:TOKEN_LEN]


def _host_in(host: str, domains: frozenset[str]) -> bool:
    for dom in domains:
        if host == dom or host.endswith("." + dom):
            return True
    return False


def _compile(pattern: str, anchor_domain: bool, anchor_start: bool, anchor_end: bool) -> re.Pattern:
    out = []
    if anchor_domain:
        out.append(_DOMAIN_ANCHOR)
    elif anchor_start:
        out.append("^")
    for ch in pattern:
        if ch == "*":
            out.append(".*")
        elif ch == "^":
            out.append(_SEPARATOR)
        else:
            out.append(re.escape(ch))
    if anchor_end:
        out.append("$")
    return re.compile("".join(out))


def parse_rule(line: str) -> FilterRule | Skipped:
    """Parse a single filter-list line; never raises."""
    text = line.strip()
    if not text or text.startswith("!") or text.startswith("[Adblock"):
        return Skipped(SkipReason.COMMENT, line)
    if "##" in text or "#@#" in text or "#?#" in text:
        return Skipped(SkipReason.COSMETIC, line)

    is_exception = text.startswith("@@")
    if is_exception:
        text = text[2:]

    type_mask: set[ResourceType] = set()
    party = Party.ANY
    include: set[str] = set()
    exclude: set[str] = set()
    if "$" in text:
        text, opts = text.rsplit("$", 1)
        for opt in opts.split(","):
            opt = opt.strip().lower()
            if not opt:
                continue
            if opt in _TYPE_OPTIONS:
                type_mask.add(_TYPE_OPTIONS[opt])
            elif opt == "third-party":
                party = Party.THIRD_ONLY
            elif opt == "~third-party":
                party = Party.FIRST_ONLY
            elif opt.startswith("domain="):
                for entry in opt[len("domain="):].split("|"):
                    entry = entry.strip()
                    if not entry:
                        continue
                    if entry.startswith("~"):
                        exclude.add(entry[1:])
                    else:
                        include.add(entry)
            else:
                return Skipped(SkipReason.UNSUPPORTED_OPTION, line)

    if len(text) > 1 and text.startswith("/") and text.endswith("/"):
        return Skipped(SkipReason.UNSUPPORTED_REGEX, line)

    anchor_end = text.endswith("|")
    if anchor_end:
        text = text[:-1]
    anchor_domain = text.startswith("||")
    anchor_start = False
    if anchor_domain:
        text = text[2:]
    elif text.startswith("|"):
        anchor_start = True
        text = text[1:]

    pattern = text.lower()
    return FilterRule(
        raw=line.strip(),
        is_exception=is_exception,
        pattern=pattern,
        anchor_domain=anchor_domain,
        anchor_start=anchor_start,
        anchor_end=anchor_end,
        type_mask=frozenset(type_mask),
        party=party,
        domains_include=frozenset(include),
        domains_exclude=frozenset(exclude),
        regex=_compile(pattern, anchor_domain, anchor_start, anchor_end),
    )


@dataclass
class FilterSet:
    """Parsed rules plus a token index over the block/exception lists.

    The index maps TOKEN_LEN-character URL substrings to candidate rule
    positions; rules without an indexable literal run live in fallback
    scan lists. Decisions are identical to a full linear scan.
    """

    block_rules: list[FilterRule] = field(default_factory=list)
    exception_rules: list[FilterRule] = field(default_factory=list)
    skipped: Counter = field(default_factory=Counter)
    _block_index: dict[str, list[int]] = field(default_factory=dict)
    _block_fallback: list[int] = field(default_factory=list)
    _exc_index: dict[str, list[int]] = field(default_factory=dict)
    _exc_fallback: list[int] = field(default_factory=list)

    def _add(self, rule: FilterRule) -> None:
        if rule.is_exception:
            rules, index, fallback = self.exception_rules, self._exc_index, self._exc_fallback
        else:
            rules, index, fallback = self.block_rules, self._block_index, self._block_fallback
        pos = len(rules)
        rules.append(rule)
        token = rule.index_token()
        if token is None:
            fallback.append(pos)
        else:
            index.setdefault(token, []).append(pos)

    def parse_summary(self) -> dict:
        return {
            "block-rules": len(self.block_rules),
            "exception-rules": len(self.exception_rules),
            "skipped": {reason.value: self.skipped[reason] for reason in SkipReason},
        }


def build_filterset(lines) -> FilterSet:
    fs = FilterSet()
    for line in lines:
        parsed = parse_rule(line)
        if isinstance(parsed, Skipped):
            fs.skipped[parsed.reason] += 1
        else:
            fs._add(parsed)
    return fs


def load_filterset(path: str) -> FilterSet:
    with open(path, encoding="utf-8") as fh:
        return build_filterset(fh)


@dataclass(frozen=True)
class MatchResult:
    decision: str  # "matched" | "excepted" | "none"
    rule: FilterRule | None = None
    exception: FilterRule | None = None

    @property
    def matched(self) -> bool:
        return self.decision == "matched"


def _url_tokens(url: str):
    seen = set()
    for i in range(len(url) - TOKEN_LEN + 1):
        tok = url[i:i + TOKEN_LEN]
        if tok not in seen:
            seen.add(tok)
            yield tok


def _candidates(url: str, index: dict[str, list[int]], fallback: list[int]) -> list[int]:
    cands = list(fallback)
    for tok in _url_tokens(url):
        hit = index.get(tok)
        if hit:
            cands.extend(hit)
    cands.sort()
    return cands


def _require_absolute(url: str) -> str:
    parts = urlsplit(url)
    if not parts.scheme or not parts.netloc:
        raise InvalidUrl(f"URL must be absolute with a host: {url!r}")
    return (parts.hostname or "").lower()


def _first_match(rules: list[FilterRule], positions, url, doc_host, rtype, third_party):
    for pos in positions:
        rule = rules[pos]
        if rule.matches(url, doc_host, rtype, third_party):
            return rule
    return None


def classify(
    fs: FilterSet,
    request_url: str,
    document_url: str,
    rtype: ResourceType,
    third_party: bool,
) -> MatchResult:
    """Indexed classification: matched iff some block rule matches and no
    exception rule does."""
    _require_absolute(request_url)
    doc_host = _require_absolute(document_url)
    url = request_url.lower()
    block = _first_match(
        fs.block_rules, _candidates(url, fs._block_index, fs._block_fallback),
        url, doc_host, rtype, third_party,
    )
    if block is None:
        return MatchResult("none")
    exc = _first_match(
        fs.exception_rules, _candidates(url, fs._exc_index, fs._exc_fallback),
        url, doc_host, rtype, third_party,
    )
    if exc is not None:
        return MatchResult("excepted", rule=block, exception=exc)
    return MatchResult("matched", rule=block)


def classify_scan(
    fs: FilterSet,
    request_url: str,
    document_url: str,
    rtype: ResourceType,
    third_party: bool,
) -> MatchResult:
    """Exhaustive linear scan over every rule; the index-free reference
    the indexed path must agree with."""
    _require_absolute(request_url)
    doc_host = _require_absolute(document_url)
    url = request_url.lower()
    block = _first_match(
        fs.block_rules, range(len(fs.block_rules)), url, doc_host, rtype, third_party
    )
    if block is None:
        return MatchResult("none")
    exc = _first_match(
        fs.exception_rules, range(len(fs.exception_rules)), url, doc_host, rtype, third_party
    )
    if exc is not None:
        return MatchResult("excepted", rule=block, exception=exc)
    return MatchResult("matched", rule=block)
