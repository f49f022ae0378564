"""Public-suffix based eTLD+1 lookup and third-party labeling.

Implements the standard public-suffix algorithm: longest matching rule
wins, ``*.`` wildcards match exactly one label, ``!`` exception rules
override wildcards. Inputs are assumed pre-normalized lowercase ASCII
(punycode for IDNs); IP literals are passed through unchanged.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field


class SuffixError(ValueError):
    pass


class InvalidHostname(SuffixError):
    pass


class NoRegistrableDomain(SuffixError):
    """The host itself is a public suffix; no eTLD+1 exists."""


class SuffixParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


_LABEL_RE = re.compile(r"^[a-z0-9_](?:[a-z0-9_-]*[a-z0-9_])?$")


@dataclass
class SuffixTable:
    """Parsed suffix rules, indexed by rightmost label for fast lookup."""

    rules: list[tuple[str, ...]] = field(default_factory=list)
    exceptions: list[tuple[str, ...]] = field(default_factory=list)
    _by_last: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)
    _exc_by_last: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)

    @property
    def rule_count(self) -> int:
        return len(self.rules) + len(self.exceptions)

    def add(self, rule: str) -> None:
        if rule.startswith("!"):
            labels = tuple(rule[1:].split("."))
            self.exceptions.append(labels)
            self._exc_by_last.setdefault(labels[-1], []).append(labels)
        else:
            labels = tuple(rule.split("."))
            self.rules.append(labels)
            self._by_last.setdefault(labels[-1], []).append(labels)

    def suffix_length(self, labels: tuple[str, ...]) -> int:
        """Number of labels in the host's public suffix.

        Falls back to the implicit ``*`` rule (last label) when nothing
        matches.
        """
        last = labels[-1]
        for exc in self._exc_by_last.get(last, ()):
            if _rule_matches(exc, labels):
                # An exception rule's suffix is the rule minus its first label.
                return len(exc) - 1
        best = 1
        for rule in self._by_last.get(last, ()):
            if len(rule) > best and _rule_matches(rule, labels):
                best = len(rule)
        return best


def _rule_matches(rule: tuple[str, ...], labels: tuple[str, ...]) -> bool:
    if len(rule) > len(labels):
        return False
    return all(r == "*" or r == h for r, h in zip(reversed(rule), reversed(labels)))


def parse_suffixes(lines, source: str = "<memory>") -> SuffixTable:
    table = SuffixTable()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("//"):
            continue
        if any(c.isspace() for c in line):
            raise SuffixParseError(lineno, f"embedded whitespace in rule {line!r} ({source})")
        table.add(line.lower())
    return table


def load_suffixes(path: str) -> SuffixTable:
    with open(path, encoding="utf-8") as fh:
        return parse_suffixes(fh, source=path)


def _is_ip_literal(host: str) -> bool:
    candidate = host[1:-1] if host.startswith("[") and host.endswith("]") else host
    try:
        ipaddress.ip_address(candidate)
        return True
    except ValueError:
        return False


def _host_labels(host: str) -> tuple[str, ...]:
    if not host or host != host.strip():
        raise InvalidHostname(f"bad hostname: {host!r}")
    labels = tuple(host.split("."))
    if any(not lab for lab in labels):
        raise InvalidHostname(f"empty label in hostname: {host!r}")
    for lab in labels:
        if not _LABEL_RE.match(lab) and not lab.startswith("xn--") and not _is_unicode_label(lab):
            raise InvalidHostname(f"bad label {lab!r} in hostname: {host!r}")
    return labels


def _is_unicode_label(label: str) -> bool:
    return any(ord(c) > 127 for c in label)


def etld1(host: str, table: SuffixTable) -> str:
    """Registrable domain (public suffix plus one label) of ``host``.

    IP literals come back unchanged. Raises :class:`NoRegistrableDomain`
    when the host is itself a public suffix.
    """
    if _is_ip_literal(host):
        return host
    host = host.lower().rstrip(".")
    labels = _host_labels(host)
    n = table.suffix_length(labels)
    if len(labels) <= n:
        raise NoRegistrableDomain(f"{host!r} is a public suffix")
    return ".".join(labels[-(n + 1):])


def site_key(host: str, table: SuffixTable) -> str:
    """eTLD+1 when one exists, otherwise the host itself.

    Classification helpers use this so rare degenerate hosts (a bare
    public suffix as document URL) still partition consistently.
    """
    try:
        return etld1(host, table)
    except NoRegistrableDomain:
        return host.lower().rstrip(".")


def is_third_party(request_host: str, document_host: str, table: SuffixTable) -> bool:
    """True when the two hosts live under different registrable domains."""
    return site_key(request_host, table) != site_key(document_host, table)
