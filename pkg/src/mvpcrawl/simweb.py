"""Deterministic simulated multi-VP web behind the FetchDriver contract.

The world is generated once from (scenario, seed) and then read-only.
Site behavior is class-based so aggregate rates are realistic while
per-domain outcomes stay strongly correlated, the way the live web
behaves: most sites work every time, a flaky minority carries almost
all failures, some sites have no same-site links to harvest, some serve
empty shells, and some put whole vantage points behind CAPTCHA walls.

Policy knobs (per-visit failure probabilities, CAPTCHA page rate) are
aggregate targets; :func:`calibrate` solves for the per-class draw
probabilities and wall fractions that realize them under the standard
3x2 crawl geometry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .detrand import DetRand, derive_substream
from .model import (
    AbortCause,
    BrowserProfile,
    ResourceType,
    VantagePoint,
    connectivity_cause,
)
from .worker import DriverFrame, DriverRequest, NavFailure, NavSuccess, Snapshot


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")


SITE_CLASSES = ("solid", "linkless", "flaky", "dead-end")

# Order is the wire order of cause draws; proportions follow the policy.
_CAUSE_FIELDS = (
    ("p_nav_timeout", "nav-timeout"),
    ("p_dns_fail", "connectivity"),
    ("p_teardown_timeout", "teardown"),
    ("p_other", "other"),
)


@dataclass(frozen=True)
class VPPolicy:
    nav_latency_base: int
    nav_latency_jitter: int
    p_nav_timeout: float
    p_dns_fail: float
    p_teardown_timeout: float
    p_other: float
    p_captcha: float
    cloak_block: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        for name in ("p_nav_timeout", "p_dns_fail", "p_teardown_timeout", "p_other", "p_captcha"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {value}")

    @property
    def p_abort_total(self) -> float:
        return self.p_nav_timeout + self.p_dns_fail + self.p_teardown_timeout + self.p_other

    def to_json(self) -> dict:
        return {
            "nav-latency-base": self.nav_latency_base,
            "nav-latency-jitter": self.nav_latency_jitter,
            "p-nav-timeout": self.p_nav_timeout,
            "p-dns-fail": self.p_dns_fail,
            "p-teardown-timeout": self.p_teardown_timeout,
            "p-other": self.p_other,
            "p-captcha": self.p_captcha,
            "cloak-block": sorted(self.cloak_block),
        }

    @classmethod
    def from_json(cls, obj: dict, path: str) -> "VPPolicy":
        try:
            return cls(
                nav_latency_base=int(obj["nav-latency-base"]),
                nav_latency_jitter=int(obj["nav-latency-jitter"]),
                p_nav_timeout=float(obj["p-nav-timeout"]),
                p_dns_fail=float(obj["p-dns-fail"]),
                p_teardown_timeout=float(obj["p-teardown-timeout"]),
                p_other=float(obj["p-other"]),
                p_captcha=float(obj["p-captcha"]),
                cloak_block=frozenset(obj.get("cloak-block", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(path, f"bad policy: {exc}") from None


@dataclass(frozen=True)
class Scenario:
    site_count: int
    pages_per_site: int
    site_classes: dict[str, float]
    sub_min: int
    sub_max: int
    origin_pools: dict[str, int]
    cloud_cloaked_origins: tuple[str, ...]
    captcha_providers: tuple[str, ...]
    policies: dict[VantagePoint, VPPolicy]

    def to_json(self) -> dict:
        return {
            "site-count": self.site_count,
            "pages-per-site": self.pages_per_site,
            "site-classes": dict(self.site_classes),
            "subresources-per-page": {"min": self.sub_min, "max": self.sub_max},
            "origin-pools": dict(self.origin_pools),
            "cloud-cloaked-origins": list(self.cloud_cloaked_origins),
            "captcha-providers": list(self.captcha_providers),
            "policies": {vp.value: pol.to_json() for vp, pol in self.policies.items()},
        }

    @classmethod
    def from_json(cls, obj: dict, path: str = "<scenario>") -> "Scenario":
        try:
            classes = {k: float(v) for k, v in obj["site-classes"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(path, f"site-classes: {exc}") from None
        unknown = set(classes) - set(SITE_CLASSES)
        if unknown:
            raise ScenarioError(path, f"unknown site classes: {sorted(unknown)}")
        total = sum(classes.get(c, 0.0) for c in SITE_CLASSES)
        if abs(total - 1.0) > 1e-9:
            raise ScenarioError(path, f"site-class fractions must sum to 1, got {total}")
        policies = {}
        for vp in VantagePoint:
            raw = obj.get("policies", {}).get(vp.value)
            if raw is None:
                raise ScenarioError(path, f"missing policy for vantage point {vp.value!r}")
            policies[vp] = VPPolicy.from_json(raw, path)
        sub = obj.get("subresources-per-page", {})
        try:
            return cls(
                site_count=int(obj["site-count"]),
                pages_per_site=int(obj["pages-per-site"]),
                site_classes={c: classes.get(c, 0.0) for c in SITE_CLASSES},
                sub_min=int(sub.get("min", 6)),
                sub_max=int(sub.get("max", 10)),
                origin_pools={k: int(v) for k, v in obj.get("origin-pools", {}).items()},
                cloud_cloaked_origins=tuple(obj.get("cloud-cloaked-origins", ())),
                captcha_providers=tuple(obj.get("captcha-providers", ())) or ("reCAPTCHA",),
                policies=policies,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(path, str(exc)) from None


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ScenarioError(path, f"cannot read: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(path, f"invalid JSON: {exc}") from None
    return Scenario.from_json(obj, path)


# -- generated content --------------------------------------------------------

@dataclass(frozen=True)
class SubResource:
    url: str
    origin: str  # eTLD+1
    rtype: ResourceType
    body_size: int
    body_hash: str


@dataclass(frozen=True)
class SimPage:
    url: str
    html: str
    event_links: tuple[str, ...]
    anchor_links: tuple[str, ...]
    subresources: tuple[SubResource, ...]


@dataclass(frozen=True)
class SimSite:
    domain: str
    rank: int
    klass: str
    wall_score: float  # uniform per site; walled on a VP iff below its wall fraction
    provider: str
    pages: dict[str, SimPage]


@dataclass(frozen=True)
class Calibration:
    q_flaky: float
    q_other: float
    wall_fraction: float
    cause_cut: tuple[float, ...]  # cumulative cause proportions over (nav, dns, teardown, other)


@dataclass
class SimWorld:
    seed: int
    scenario: Scenario
    sites: dict[str, SimSite]
    domains: list[tuple[int, str]]
    calibration: dict[VantagePoint, Calibration]

    def policy(self, vp: VantagePoint) -> VPPolicy:
        return self.scenario.policies[vp]


_PROVIDER_MARKUP = {
    "reCAPTCHA": ('<div class="g-recaptcha" data-sitekey="sim-key"></div>',
                  "http://www.google.com/recaptcha/api.js"),
    "hCaptcha": ('<div class="h-captcha" data-sitekey="sim-key"></div>',
                 "http://js.hcaptcha.com/1/api.js"),
    "FunCaptcha": ('<div id="funcaptcha-widget" data-pkey="sim"></div>',
                   "http://client-api.arkoselabs.com/v2/api.js"),
    "GeeTest": ("<script>initGeetest({gt:'sim'})</script>",
                "http://static.geetest.com/static/tools/gt.js"),
}

_TLDS = ("com", "net", "org")

_GENERIC_TYPES = (
    (ResourceType.IMAGE, 0.52, "img", "png"),
    (ResourceType.SCRIPT, 0.20, "js", "js"),
    (ResourceType.STYLESHEET, 0.09, "css", "css"),
    (ResourceType.XHR, 0.06, "api", "json"),
    (ResourceType.FETCH, 0.05, "data", "json"),
    (ResourceType.FONT, 0.04, "font", "woff2"),
    (ResourceType.MEDIA, 0.02, "media", "mp4"),
    (ResourceType.WEBSOCKET, 0.01, "ws", "sock"),
    (ResourceType.OTHER, 0.01, "misc", "bin"),
)

_CATEGORY_WEIGHTS = (
    ("first-party", 0.34),
    ("cdn", 0.20),
    ("ad", 0.16),
    ("tracker", 0.16),
    ("frame", 0.14),
)


def _pick_weighted(rng: DetRand, table) -> object:
    u = rng.next_unit()
    acc = 0.0
    for entry in table:
        acc += entry[1]
        if u < acc:
            return entry
    return table[-1]


def _body(url: str, size: int) -> str:
    return hashlib.sha256(f"{url}|{size}".encode()).hexdigest()


def _make_subresource(rng: DetRand, domain: str, pools: dict[str, list[str]], j: int) -> SubResource:
    category = _pick_weighted(rng, _CATEGORY_WEIGHTS)[0]
    if category == "frame":
        origin = pools["frame"][rng.next_below(len(pools["frame"]))]
        url = f"http://{origin}/widget/{j}.html"
        rtype = ResourceType.SUBDOCUMENT
        size = 800 + rng.next_below(4200)
    elif category == "ad":
        origin = pools["ad"][rng.next_below(len(pools["ad"]))]
        if rng.next_unit() < 0.75:
            url, rtype = f"http://{origin}/banner/{j}.gif", ResourceType.IMAGE
        else:
            url, rtype = f"http://{origin}/adscript/{j}.js", ResourceType.SCRIPT
        size = 300 + rng.next_below(9700)
    elif category == "tracker":
        origin = pools["tracker"][rng.next_below(len(pools["tracker"]))]
        if rng.next_unit() < 0.6:
            url, rtype = f"http://{origin}/track/pixel-{j}.gif", ResourceType.IMAGE
        else:
            url, rtype = f"http://{origin}/collect?id={j}", ResourceType.XHR
        size = 35 + rng.next_below(400)
    else:
        origin = domain if category == "first-party" else pools["cdn"][rng.next_below(len(pools["cdn"]))]
        rtype, _w, stem, ext = _pick_weighted(rng, _GENERIC_TYPES)
        url = f"http://{origin}/assets/{stem}-{j}.{ext}"
        size = 500 + rng.next_below(59500)
    return SubResource(url=url, origin=origin, rtype=rtype, body_size=size, body_hash=_body(url, size))


def _page_html(domain: str, path: str, rng: DetRand, anchor_links: tuple[str, ...]) -> str:
    filler = "content " * (40 + rng.next_below(360))
    anchors = "".join(f'<a href="{u}">link</a>' for u in anchor_links)
    return (
        f"<html><head><title>{domain}{path}</title></head>"
        f"<body><main>{filler}</main><nav>{anchors}</nav></body></html>"
    )


def _class_sequence(fractions: dict[str, float], n: int) -> list[str]:
    """Greedy largest-deficit class assignment.

    Every rank prefix of the site list carries the configured class mix
    to within one site, so experiments over any top-k subset of the
    world see the intended fractions rather than sampling noise.
    """
    assigned = {name: 0 for name in SITE_CLASSES}
    out: list[str] = []
    for i in range(1, n + 1):
        name = max(SITE_CLASSES, key=lambda c: fractions.get(c, 0.0) * i - assigned[c])
        assigned[name] += 1
        out.append(name)
    return out


_GOLDEN = 0.6180339887498949


def _weyl(index: int) -> float:
    """Golden-ratio Weyl point: frac(k*phi), a low-discrepancy sequence
    whose every prefix is uniform to within one point below any
    threshold (three-distance theorem)."""
    return (index * _GOLDEN) % 1.0


def build_world(scenario: Scenario, seed: int) -> SimWorld:
    """Generate the whole site graph deterministically from (scenario, seed)."""
    pools = {
        "cdn": [f"static-cdn-{j}.com" for j in range(scenario.origin_pools.get("cdn", 8))],
        "ad": [f"ad-delivery-{j}.com" for j in range(scenario.origin_pools.get("ad", 10))],
        "tracker": [f"pixel-metrics-{j}.net" for j in range(scenario.origin_pools.get("tracker", 10))],
        "frame": [f"widget-hub-{j}.net" for j in range(scenario.origin_pools.get("frame", 16))],
    }
    # Cloaked origins are regular frame origins; cloaking is purely a
    # per-VP serving decision.
    pools["frame"] = pools["frame"] + list(scenario.cloud_cloaked_origins)

    n = scenario.site_count
    # Stratified assignment: every rank prefix sees the configured class
    # mix, and wall scores follow a per-class low-discrepancy sequence so
    # any top-k subset realizes each VP's wall fraction almost exactly
    # within every class (walls and classes must stay independent or the
    # calibration targets drift). The shared per-site score nests CAPTCHA
    # walls across VPs (a site walled for one VP is walled for every VP
    # with a higher wall fraction).
    class_of = _class_sequence(scenario.site_classes, n)
    class_counter = {name: 0 for name in SITE_CLASSES}
    wall_scores = []
    for name in class_of:
        class_counter[name] += 1
        wall_scores.append(_weyl(class_counter[name]))

    sites: dict[str, SimSite] = {}
    domains: list[tuple[int, str]] = []
    solid_sites: list[str] = []
    for i in range(n):
        domain = f"site-{i:05d}.{_TLDS[i % len(_TLDS)]}"
        rng = derive_substream(seed, f"site:{domain}")
        klass = class_of[i]
        wall_score = wall_scores[i]
        provider = scenario.captcha_providers[rng.next_below(len(scenario.captcha_providers))]

        landing = f"http://{domain}/"
        children = tuple(f"http://{domain}/p{k}" for k in range(1, scenario.pages_per_site + 1))
        offsite = tuple(
            f"http://site-{rng.next_below(scenario.site_count):05d}.{_TLDS[rng.next_below(3)]}/"
            for _ in range(2)
        )
        pages: dict[str, SimPage] = {}
        if klass == "dead-end":
            pages[landing] = SimPage(landing, "", (), (), ())
            for child in children:
                pages[child] = SimPage(child, "", (), (), ())
        else:
            linkful = klass in ("solid", "flaky")
            event_links = children[: min(4, len(children))] if linkful else ()
            anchors = (children + offsite) if linkful else offsite
            subs = tuple(
                _make_subresource(rng, domain, pools, j)
                for j in range(scenario.sub_min + rng.next_below(scenario.sub_max - scenario.sub_min + 1))
            )
            pages[landing] = SimPage(
                landing, _page_html(domain, "/", rng, anchors), event_links, anchors, subs
            )
            for k, child in enumerate(children, start=1):
                child_subs = tuple(
                    _make_subresource(rng, domain, pools, 100 * k + j)
                    for j in range(scenario.sub_min + rng.next_below(scenario.sub_max - scenario.sub_min + 1))
                )
                child_anchors = (landing,) + tuple(c for c in children if c != child)[:2]
                pages[child] = SimPage(
                    child, _page_html(domain, f"/p{k}", rng, child_anchors), (), child_anchors, child_subs
                )
        sites[domain] = SimSite(domain, i + 1, klass, wall_score, provider, pages)
        domains.append((i + 1, domain))
        if klass == "solid":
            solid_sites.append(domain)

    _embed_cloaked(sites, solid_sites, scenario)
    calibration = {vp: calibrate(scenario, vp) for vp in VantagePoint}
    return SimWorld(seed=seed, scenario=scenario, sites=sites, domains=domains, calibration=calibration)


def _embed_cloaked(sites: dict[str, SimSite], solid_sites: list[str], scenario: Scenario) -> None:
    """Guarantee every cloud-cloaked origin is framed by several solid sites.

    Pool draws alone might under-sample an origin; the acceptance story
    needs each cloaked origin loaded well past the reporting threshold
    on the non-cloud vantage points.
    """
    if not scenario.cloud_cloaked_origins or not solid_sites:
        return
    per_origin = 6
    for j, origin in enumerate(scenario.cloud_cloaked_origins):
        for k in range(per_origin):
            domain = solid_sites[(j * per_origin + k) % len(solid_sites)]
            site = sites[domain]
            landing = f"http://{domain}/"
            page = site.pages[landing]
            url = f"http://{origin}/widget/embed-{j}.html"
            extra = SubResource(
                url=url,
                origin=origin,
                rtype=ResourceType.SUBDOCUMENT,
                body_size=1200 + 37 * j,
                body_hash=_body(url, 1200 + 37 * j),
            )
            if extra not in page.subresources:
                site.pages[landing] = SimPage(
                    page.url, page.html, page.event_links, page.anchor_links,
                    page.subresources + (extra,),
                )


# -- calibration --------------------------------------------------------------

def _crawl_expectations(classes: dict[str, float], q_flaky: float, q_other: float,
                        wall: bool, width: int = 3) -> tuple[float, float, float]:
    """(visits, aborts, completed pages) expected per crawl, for one wall state.

    Child visits happen only when the landing visit completes and the
    page has same-site links to harvest (not walled, solid or flaky
    class); each child aborts independently with the same probability.
    """
    visits = aborts = pages = 0.0
    for klass, frac in classes.items():
        if frac == 0.0:
            continue
        q = q_flaky if klass == "flaky" else q_other
        links = (not wall) and klass in ("solid", "flaky")
        child_visits = width * (1.0 - q) if links else 0.0
        visits += frac * (1.0 + child_visits)
        aborts += frac * q * (1.0 + child_visits)
        pages += frac * ((1.0 - q) + child_visits * (1.0 - q))
    return visits, aborts, pages


def _abort_rate(classes, q_flaky, q_other, wall_fraction, width=3) -> float:
    v1, a1, _ = _crawl_expectations(classes, q_flaky, q_other, wall=True, width=width)
    v0, a0, _ = _crawl_expectations(classes, q_flaky, q_other, wall=False, width=width)
    visits = wall_fraction * v1 + (1 - wall_fraction) * v0
    aborts = wall_fraction * a1 + (1 - wall_fraction) * a0
    return aborts / visits if visits else 0.0


def _solve_wall(classes, q_flaky, q_other, p_captcha, width=3) -> float:
    if p_captcha >= 1.0:
        return 1.0
    if p_captcha <= 0.0:
        return 0.0
    _, _, pages_walled = _crawl_expectations(classes, q_flaky, q_other, wall=True, width=width)
    _, _, pages_open = _crawl_expectations(classes, q_flaky, q_other, wall=False, width=width)
    if pages_walled <= 0.0:
        return p_captcha
    x = p_captcha * pages_open / ((1.0 - p_captcha) * pages_walled)
    return x / (1.0 + x)


def calibrate(scenario: Scenario, vp: VantagePoint, width: int = 3) -> Calibration:
    """Per-class draw probabilities realizing the policy's aggregate rates.

    The abort-rate curve in q rises to an interior peak (heavy aborts
    also shrink the visit denominator), so the solver bisects on the
    rising branch; when the flaky class alone cannot carry the target
    the remainder spills over to the other classes.
    """
    policy = scenario.policies[vp]
    classes = scenario.site_classes
    target = policy.p_abort_total
    total = max(target, 1e-12)
    cum = 0.0
    cuts = []
    for field_name, _label in _CAUSE_FIELDS:
        cum += getattr(policy, field_name) / total
        cuts.append(min(cum, 1.0))

    wall = min(max(policy.p_captcha, 0.0), 1.0)
    q_flaky = q_other = 0.0
    for _ in range(12):
        q_flaky, q_other = _solve_abort(classes, wall, target, width)
        wall = _solve_wall(classes, q_flaky, q_other, policy.p_captcha, width)
    return Calibration(q_flaky=q_flaky, q_other=q_other, wall_fraction=wall, cause_cut=tuple(cuts))


def _solve_abort(classes, wall_fraction, target, width) -> tuple[float, float]:
    if target <= 0.0:
        return 0.0, 0.0
    if target >= 1.0:
        return 1.0, 1.0

    def rate_flaky(q):
        return _abort_rate(classes, q, 0.0, wall_fraction, width)

    # Locate the rising branch of the rate curve.
    grid = [i / 256 for i in range(257)]
    peak_q = max(grid, key=rate_flaky)
    if rate_flaky(peak_q) >= target and classes.get("flaky", 0.0) > 0.0:
        lo, hi = 0.0, peak_q
        for _ in range(60):
            mid = (lo + hi) / 2
            if rate_flaky(mid) < target:
                lo = mid
            else:
                hi = mid
        return hi, 0.0

    # Flaky sites alone cannot reach the target: saturate them and
    # spread the remainder over every other class.
    def rate_spill(qs):
        return _abort_rate(classes, 1.0, qs, wall_fraction, width)

    lo, hi = 0.0, 1.0
    if rate_spill(1.0) < target:
        return 1.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        if rate_spill(mid) < target:
            lo = mid
        else:
            hi = mid
    return 1.0, hi


# -- serving ------------------------------------------------------------------

@dataclass(frozen=True)
class ServedPage:
    html: str
    anchor_links: tuple[str, ...]
    event_links: tuple[str, ...]
    subresources: tuple[SubResource, ...]
    frame_specs: tuple[tuple[int, str, str], ...]  # (frame index, origin, frame url)
    captcha: bool
    teardown_latency_ms: int
    document_size: int


@dataclass(frozen=True)
class SimResponse:
    latency_ms: int
    failure: tuple[AbortCause, str | None] | None = None
    page: ServedPage | None = None


# Latency bands for failing outcomes (ms).
_NAV_EXCEED_MS = 40_000
_CONNECT_FAIL_BASE, _CONNECT_FAIL_SPREAD = 400, 2_200
_OTHER_FAIL_BASE, _OTHER_FAIL_SPREAD = 300, 2_700
_TEARDOWN_OVER_BASE, _TEARDOWN_OVER_SPREAD = 5_200, 2_000
_TEARDOWN_OK_BASE, _TEARDOWN_OK_SPREAD = 150, 650


def serve(
    world: SimWorld,
    url: str,
    vp: VantagePoint,
    profile: BrowserProfile | None,
    rng: DetRand,
) -> SimResponse:
    """Resolve one navigation. All randomness comes from ``rng``.

    The caller owns the substream, so a given (vp, url, stream) triple
    always produces the same outcome regardless of concurrency.
    """
    policy = world.policy(vp)
    cal = world.calibration[vp]
    host = url.split("/", 3)[2].lower() if "://" in url else ""
    site = world.sites.get(host)

    u_fail = rng.next_unit()
    u_latency = rng.next_unit()
    u_teardown = rng.next_unit()

    if site is None:
        latency = _CONNECT_FAIL_BASE + int(u_latency * _CONNECT_FAIL_SPREAD)
        return SimResponse(latency, failure=(connectivity_cause(vp), None))

    q = cal.q_flaky if site.klass == "flaky" else cal.q_other
    if u_fail < q:
        frac = u_fail / q
        idx = next(i for i, cut in enumerate(cal.cause_cut) if frac < cut or i == len(cal.cause_cut) - 1)
        label = _CAUSE_FIELDS[idx][1]
        if label == "nav-timeout":
            latency = _NAV_EXCEED_MS + int(u_latency * 20_000)
            return SimResponse(latency, failure=(AbortCause.NAVIGATION_TIMEOUT, None))
        if label == "connectivity":
            latency = _CONNECT_FAIL_BASE + int(u_latency * _CONNECT_FAIL_SPREAD)
            return SimResponse(latency, failure=(connectivity_cause(vp), None))
        if label == "other":
            latency = _OTHER_FAIL_BASE + int(u_latency * _OTHER_FAIL_SPREAD)
            return SimResponse(latency, failure=(AbortCause.OTHER, "connection-reset"))
        teardown_latency = _TEARDOWN_OVER_BASE + int(u_teardown * _TEARDOWN_OVER_SPREAD)
    else:
        teardown_latency = _TEARDOWN_OK_BASE + int(u_teardown * _TEARDOWN_OK_SPREAD)

    latency = policy.nav_latency_base + int(u_latency * policy.nav_latency_jitter)
    walled = site.wall_score < cal.wall_fraction

    if walled:
        markup, script_url = _PROVIDER_MARKUP.get(
            site.provider, _PROVIDER_MARKUP["reCAPTCHA"]
        )
        html = (
            f"<html><head><title>verify</title></head>"
            f"<body>{markup}<script src=\"{script_url}\"></script></body></html>"
        )
        script_origin = script_url.split("/", 3)[2]
        sub = SubResource(
            url=script_url,
            origin=script_origin,
            rtype=ResourceType.SCRIPT,
            body_size=4096,
            body_hash=_body(script_url, 4096),
        )
        page = ServedPage(
            html=html,
            anchor_links=(),
            event_links=(),
            subresources=(sub,),
            frame_specs=(),
            captcha=True,
            teardown_latency_ms=teardown_latency,
            document_size=len(html.encode("utf-8")),
        )
        return SimResponse(latency, page=page)

    sim_page = site.pages.get(url)
    if sim_page is None:
        latency = _CONNECT_FAIL_BASE + int(u_latency * _CONNECT_FAIL_SPREAD)
        return SimResponse(latency, failure=(connectivity_cause(vp), None))

    visible = tuple(s for s in sim_page.subresources if s.origin not in policy.cloak_block)
    frame_specs = []
    frame_index = 1
    for sub in visible:
        if sub.rtype is ResourceType.SUBDOCUMENT:
            frame_specs.append((frame_index, sub.origin, sub.url))
            frame_index += 1
    page = ServedPage(
        html=sim_page.html,
        anchor_links=sim_page.anchor_links,
        event_links=sim_page.event_links,
        subresources=visible,
        frame_specs=tuple(frame_specs),
        captcha=False,
        teardown_latency_ms=teardown_latency,
        document_size=len(sim_page.html.encode("utf-8")),
    )
    return SimResponse(latency, page=page)


# -- driver -------------------------------------------------------------------

@dataclass
class SimSession:
    vp: VantagePoint
    profile: BrowserProfile
    bc: str
    rep: str
    page: ServedPage | None = None
    page_url: str = ""


class SimDriver:
    """FetchDriver over a SimWorld; honors every deadline it is given."""

    def __init__(self, world: SimWorld, clock) -> None:
        self.world = world
        self.clock = clock

    def open_session(self, profile: BrowserProfile, tunnel_config: str) -> SimSession:
        fields = dict(
            part.split("=", 1) for part in tunnel_config.split(";") if "=" in part
        )
        vp = VantagePoint(fields.get("vp", "university"))
        return SimSession(vp=vp, profile=profile, bc=fields.get("bc", profile.code),
                          rep=fields.get("rep", "1"))

    def navigate(self, session: SimSession, url: str, deadline_ms: int) -> NavSuccess | NavFailure:
        clock = self.clock
        now = clock.now_ms()
        stream = derive_substream(
            self.world.seed, f"serve:{session.vp.value}:{session.bc}:{session.rep}:{url}"
        )
        resp = serve(self.world, url, session.vp, session.profile, stream)
        if now + resp.latency_ms > deadline_ms:
            clock.sleep(deadline_ms - now)
            return NavFailure(AbortCause.NAVIGATION_TIMEOUT)
        clock.sleep(resp.latency_ms)
        if resp.failure is not None:
            cause, code = resp.failure
            return NavFailure(cause, code)

        page = resp.page
        session.page = page
        session.page_url = url
        now = clock.now_ms()
        doc_host = url.split("/", 3)[2]
        requests = [
            DriverRequest(
                url=url,
                resource_type=ResourceType.DOCUMENT,
                frame_index=0,
                document_url=url,
                ok=True,
                status=200,
                headers=(("content-type", "text/html"),),
                body_hash=_body(url, page.document_size),
                body_size=page.document_size,
            )
        ]
        frame_of = {spec[2]: spec[0] for spec in page.frame_specs}
        for sub in page.subresources:
            requests.append(
                DriverRequest(
                    url=sub.url,
                    resource_type=sub.rtype,
                    frame_index=frame_of.get(sub.url, 0),
                    document_url=url,
                    ok=True,
                    status=200,
                    headers=(),
                    body_hash=sub.body_hash,
                    body_size=sub.body_size,
                )
            )
        frames = [
            DriverFrame(frame_index=0, parent_index=None, origin=doc_host,
                        navigation_events=((now, url),))
        ]
        for index, origin, frame_url in page.frame_specs:
            frames.append(
                DriverFrame(frame_index=index, parent_index=0, origin=origin,
                            navigation_events=((now, frame_url),))
            )
        return NavSuccess(landed_url=url, requests=tuple(requests), frames=tuple(frames))

    def interact(self, session: SimSession, rng: DetRand, end_time_ms: int) -> list[str]:
        links = list(session.page.event_links) if session.page else []
        rng.shuffle(links)
        remaining = end_time_ms - self.clock.now_ms()
        if remaining > 0:
            self.clock.sleep(remaining)
        return links

    def snapshot(self, session: SimSession, deadline_ms: int) -> Snapshot | None:
        page = session.page
        now = self.clock.now_ms()
        if page is None:
            return Snapshot("", ())
        if now + page.teardown_latency_ms > deadline_ms:
            self.clock.sleep(deadline_ms - now)
            return None
        self.clock.sleep(page.teardown_latency_ms)
        return Snapshot(page.html, page.anchor_links)

    def close(self, session: SimSession) -> None:
        session.page = None


# -- bundled scenario ---------------------------------------------------------

def paper_scenario(site_count: int = 500) -> Scenario:
    """The bundled evaluation scenario.

    Policy values encode the target aggregate rates: navigation-timeout
    shares ordered tor > residential > university > cloud, residential
    tear-down overruns strictly highest, CAPTCHA page rates of 12% on
    tor and 8% elsewhere, and a set of third-party frame origins that
    cloud visitors never receive.
    """
    cloaked = (
        "geo-ads-1.net",
        "geo-ads-2.net",
        "geo-audience-1.com",
        "geo-audience-2.com",
        "regional-widgets-1.net",
        "regional-widgets-2.net",
    )
    policies = {
        VantagePoint.UNIVERSITY: VPPolicy(
            nav_latency_base=900, nav_latency_jitter=600,
            p_nav_timeout=0.107, p_dns_fail=0.033, p_teardown_timeout=0.034,
            p_other=0.040, p_captcha=0.08,
        ),
        VantagePoint.RESIDENTIAL: VPPolicy(
            nav_latency_base=2200, nav_latency_jitter=1600,
            p_nav_timeout=0.134, p_dns_fail=0.043, p_teardown_timeout=0.074,
            p_other=0.037, p_captcha=0.08,
        ),
        VantagePoint.CLOUD: VPPolicy(
            nav_latency_base=700, nav_latency_jitter=500,
            p_nav_timeout=0.093, p_dns_fail=0.038, p_teardown_timeout=0.035,
            p_other=0.032, p_captcha=0.08, cloak_block=frozenset(cloaked),
        ),
        VantagePoint.TOR: VPPolicy(
            nav_latency_base=4200, nav_latency_jitter=2800,
            p_nav_timeout=0.199, p_dns_fail=0.041, p_teardown_timeout=0.030,
            p_other=0.031, p_captcha=0.12,
        ),
    }
    return Scenario(
        site_count=site_count,
        pages_per_site=6,
        site_classes={"solid": 0.30, "linkless": 0.10, "flaky": 0.55, "dead-end": 0.05},
        sub_min=6,
        sub_max=10,
        origin_pools={"cdn": 8, "ad": 10, "tracker": 10, "frame": 16},
        cloud_cloaked_origins=cloaked,
        captcha_providers=("reCAPTCHA", "hCaptcha", "FunCaptcha", "GeeTest"),
        policies=policies,
    )
