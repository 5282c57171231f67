"""Shared builders for synthetic traces and independent oracles."""

import random
from collections import defaultdict

from crowdsurf.trace import HttpRequestRecord, extract_query_params, is_third_party

TRACKING_KEYS = {
    "news1.example": [
        ("pix04.revsci.net", "id"),
        ("su.addthis.com", "puid"),
        ("track.adform.net", "icid"),
    ],
    "youtube.com": [
        ("bh.ams.contextweb.com", "vgd"),
        ("eu-jet-01.sociomantic.com", "fpc"),
        ("ib.adnxs.com", "uuid"),
        ("uip.semasio.net", "sExtCookieId"),
        ("www.wajam.com", "install_timestamp"),
    ],
    "facebook.com": [
        ("adadvisor.net", "bk_uuid"),
        ("data.bncnt.com", "uid"),
        ("go.flx1.com", "anuid"),
        ("go.flx1.com", "euid"),
        ("ira.spysomeone.com", "s"),
        ("tags.bluekai.com", "google_gid"),
        ("ww1.collserve.com", "bk_uuid"),
        ("www.skyscanner.com", "ksh_id"),
    ],
}

PAGE = {"news1.example": "http://www.news1.example/", "youtube.com": "http://www.youtube.com/watch?v=x", "facebook.com": "https://www.facebook.com/home"}


def tracking_trace(n_users=40, visits=3, seed=0):
    """Per-user identifiers on every tracked pair, plus decoys that must not be flagged.

    Decoys: a constant key, a per-visit nonce (many values per user), a key
    shared by user pairs, an identifier seen by too few users, first-party
    identifiers, and identifiers on requests without referer evidence.
    """
    rng = random.Random(seed)
    out = []
    t = 1_000.0
    for target, pairs in TRACKING_KEYS.items():
        page = PAGE[target]
        for u in range(n_users):
            user = f"10.0.{u // 256}.{u % 256}"
            for visit in range(visits):
                t += 1
                by_host = defaultdict(list)
                for host, key in pairs:
                    by_host[host].append(f"{key}={target[:2]}{u:04d}{key}")
                for host, params in by_host.items():
                    params += ["lang=en", f"cb={rng.getrandbits(48):012x}", f"grp={u // 2}"]
                    out.append(HttpRequestRecord(t, user, "GET", host, "/px?" + "&".join(params), page))
                first_host = "www." + target
                out.append(HttpRequestRecord(t, user, "GET", first_host, f"/api?session={u}", page))
                out.append(HttpRequestRecord(t, user, "GET", "cdn.decoy.example", f"/x?vid={u}", ""))
                if u < 10:
                    out.append(HttpRequestRecord(t, user, "GET", "rare.decoy.example", f"/x?rid={u}", page))
    rng.shuffle(out)
    return out


def expected_tracking_pairs(target):
    return sorted(set(TRACKING_KEYS[target]))


def oracle_strict(records, target, min_support):
    """Bijectivity check straight from (user, value) tuples, no shared indexes."""
    rel = defaultdict(set)
    for r in records:
        if is_third_party(r, target):
            for k, v in extract_query_params(r.path):
                rel[(r.hostname, k)].add((r.user, v))
    found = set()
    for hk, pairs in rel.items():
        users = {u for u, _ in pairs}
        values = {v for _, v in pairs}
        if len(users) >= min_support and len(pairs) == len(users) == len(values):
            found.add(hk)
    return found


def random_instance(rng, target="site.example"):
    n_users = rng.randint(1, 50)
    n_pairs = rng.randint(1, 20)
    hks = [(f"t{rng.randint(0, 5)}.example", f"k{j}") for j in range(n_pairs)]
    records = []
    for hk in hks:
        style = rng.choice(["bijective", "random", "almost"])
        users = rng.sample(range(50), rng.randint(1, n_users))
        for u in users:
            if style == "bijective":
                vals = [f"v{u}"]
            elif style == "almost":
                vals = [f"v{u}"] if rng.random() > 0.05 else [f"v{u}", "dup"]
            else:
                vals = [f"v{rng.randint(0, 4)}" for _ in range(rng.randint(1, 2))]
            for v in vals:
                records.append(HttpRequestRecord(1.0, f"u{u}", "GET", hk[0], f"/?{hk[1]}={v}", f"http://www.{target}/"))
    rng.shuffle(records)
    return records


def _r(host, path="/", referer=""):
    return HttpRequestRecord(1.0, "u1", "GET", host, path, referer)


# (record, disposition, reported, hostname after evaluation)
PROFILE_FIXTURES = {
    "corporate": [
        (_r("www.google.com", "/search?q=news"), "Redirected", False, "www.bing.com"),
        (_r("google.co.uk", "/search?q=tea"), "Redirected", False, "www.bing.com"),
        (_r("www.google.com", "/maps"), "Allowed", False, "www.google.com"),
        (_r("www.facebook.com"), "Blocked", False, "www.facebook.com"),
        (_r("static.xx.fbcdn.net", "/rsrc.php"), "Blocked", False, "static.xx.fbcdn.net"),
        (_r("www.youtube.com", "/watch?v=1"), "Blocked", False, "www.youtube.com"),
        (_r("i.ytimg.com", "/vi/1.jpg"), "Blocked", False, "i.ytimg.com"),
        (_r("www.ebay.com"), "Blocked", False, "www.ebay.com"),
        (_r("www.ebay.co.uk"), "Blocked", False, "www.ebay.co.uk"),
        (_r("www.amazon.com", "/dp/1"), "Blocked", False, "www.amazon.com"),
        (_r("www.amazon.de"), "Blocked", False, "www.amazon.de"),
        (_r("www.pornhub.com"), "Blocked", False, "www.pornhub.com"),
        (_r("xvideos.com"), "Blocked", False, "xvideos.com"),
        (_r("www.dropbox.com", "/home"), "Allowed", True, "www.dropbox.com"),
        (_r("dl.dropboxusercontent.com", "/s/1"), "Allowed", True, "dl.dropboxusercontent.com"),
        (_r("twitter.com", "/home"), "Allowed", True, "twitter.com"),
        (_r("pbs.twimg.com", "/media/1.jpg"), "Allowed", True, "pbs.twimg.com"),
        (_r("www.notfacebook.com"), "Allowed", False, "www.notfacebook.com"),
        (_r("amazon-adsystem.com"), "Allowed", False, "amazon-adsystem.com"),
        (_r("intranet.corp.example", "/wiki"), "Allowed", False, "intranet.corp.example"),
    ],
    "kid": [
        (_r("www.pornhub.com"), "Blocked", False, "www.pornhub.com"),
        (_r("xhamster.com", "/videos"), "Blocked", False, "xhamster.com"),
        (_r("www.xnxx.com"), "Blocked", False, "www.xnxx.com"),
        (_r("m.redtube.com"), "Blocked", False, "m.redtube.com"),
        (_r("youporn.com"), "Blocked", False, "youporn.com"),
        (_r("www.tube8.com"), "Blocked", False, "www.tube8.com"),
        (_r("spankbang.com"), "Blocked", False, "spankbang.com"),
        (_r("chaturbate.com"), "Blocked", False, "chaturbate.com"),
        (_r("ad.doubleclick.net", "/ad?x=1"), "Allowed", True, "ad.doubleclick.net"),
        (_r("stats.g.doubleclick.net"), "Allowed", True, "stats.g.doubleclick.net"),
        (_r("b.scorecardresearch.com", "/beacon.js"), "Allowed", True, "b.scorecardresearch.com"),
        (_r("sb.scorecardresearch.com"), "Allowed", True, "sb.scorecardresearch.com"),
        (_r("ad.yieldmanager.com", "/imp"), "Allowed", True, "ad.yieldmanager.com"),
        (_r("yieldmanager.com"), "Allowed", True, "yieldmanager.com"),
        (_r("www.youtube.com"), "Allowed", False, "www.youtube.com"),
        (_r("en.wikipedia.org"), "Allowed", False, "en.wikipedia.org"),
        (_r("www.google-analytics.com", "/ga.js"), "Allowed", False, "www.google-analytics.com"),
        (_r("notdoubleclick.net"), "Allowed", False, "notdoubleclick.net"),
        (_r("www.pbskids.org"), "Allowed", False, "www.pbskids.org"),
        (_r("www.facebook.com"), "Allowed", False, "www.facebook.com"),
    ],
    "paranoid": [
        (_r("ad.doubleclick.net"), "Blocked", False, "ad.doubleclick.net"),
        (_r("www.google-analytics.com", "/collect"), "Blocked", False, "www.google-analytics.com"),
        (_r("b.scorecardresearch.com"), "Blocked", False, "b.scorecardresearch.com"),
        (_r("pix04.revsci.net", "/?id=1"), "Blocked", False, "pix04.revsci.net"),
        (_r("tags.bluekai.com"), "Blocked", False, "tags.bluekai.com"),
        (_r("pagead2.googlesyndication.com"), "Blocked", False, "pagead2.googlesyndication.com"),
        (_r("static.criteo.net"), "Blocked", False, "static.criteo.net"),
        (_r("cdn.taboola.com"), "Blocked", False, "cdn.taboola.com"),
        (_r("s.amazon-adsystem.com"), "Blocked", False, "s.amazon-adsystem.com"),
        (_r("www.example.com", "/app.js"), "Blocked", False, "www.example.com"),
        (_r("cdn.example.net", "/lib/jquery.min.js?v=3"), "Blocked", False, "cdn.example.net"),
        (_r("www.example.com", "/main.JS"), "Allowed", False, "www.example.com"),
        (_r("www.example.com", "/app.json"), "Allowed", False, "www.example.com"),
        (_r("www.example.com", "/jsdocs/"), "Allowed", False, "www.example.com"),
        (_r("www.example.com", "/index.html"), "Allowed", False, "www.example.com"),
        (_r("en.wikipedia.org", "/wiki/JavaScript"), "Allowed", False, "en.wikipedia.org"),
        (_r("www.facebook.com"), "Allowed", False, "www.facebook.com"),
        (_r("notadnxs.com"), "Allowed", False, "notadnxs.com"),
        (_r("www.bbc.co.uk", "/news"), "Allowed", False, "www.bbc.co.uk"),
        (_r("img.example.org", "/logo.png"), "Allowed", False, "img.example.org"),
    ],
}
