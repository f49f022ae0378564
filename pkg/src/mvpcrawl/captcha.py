"""CAPTCHA presence detection over captured DOM and request metadata.

Rules are a minimal three-field schema (html / url / script pattern
lists per provider) of the kind extractable from technology-fingerprint
databases. Detection is a pure function of the evidence given to it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .model import RequestRecord, ResourceType


class BadPattern(ValueError):
    def __init__(self, provider: str, pattern: str, error: Exception):
        super().__init__(f"provider {provider!r}: bad pattern {pattern!r}: {error}")
        self.provider = provider


@dataclass(frozen=True)
class DetectionRule:
    provider: str
    html_patterns: tuple[re.Pattern, ...]
    url_patterns: tuple[re.Pattern, ...]
    script_src_patterns: tuple[re.Pattern, ...]


def _compile_all(provider: str, patterns) -> tuple[re.Pattern, ...]:
    out = []
    for pat in patterns or ():
        try:
            out.append(re.compile(pat, re.IGNORECASE))
        except re.error as exc:
            raise BadPattern(provider, pat, exc) from None
    return tuple(out)


def parse_detection_rules(data: list[dict]) -> list[DetectionRule]:
    rules = []
    for obj in data:
        provider = obj["provider"]
        rule = DetectionRule(
            provider=provider,
            html_patterns=_compile_all(provider, obj.get("html")),
            url_patterns=_compile_all(provider, obj.get("url")),
            script_src_patterns=_compile_all(provider, obj.get("script")),
        )
        if not (rule.html_patterns or rule.url_patterns or rule.script_src_patterns):
            raise ValueError(f"provider {provider!r} has no patterns")
        rules.append(rule)
    return rules


def load_detection_rules(path: str) -> list[DetectionRule]:
    with open(path, encoding="utf-8") as fh:
        return parse_detection_rules(json.load(fh))


def detect(dom_html: str, requests: list[RequestRecord], rules: list[DetectionRule]) -> set[str]:
    """Providers whose patterns match the DOM or an applicable request URL."""
    found: set[str] = set()
    for rule in rules:
        if dom_html and any(p.search(dom_html) for p in rule.html_patterns):
            found.add(rule.provider)
            continue
        for req in requests:
            if any(p.search(req.request_url) for p in rule.url_patterns):
                found.add(rule.provider)
                break
            if req.resource_type is ResourceType.SCRIPT and any(
                p.search(req.request_url) for p in rule.script_src_patterns
            ):
                found.add(rule.provider)
                break
    return found
