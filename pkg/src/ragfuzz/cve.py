"""NVD CVE lookup with a disk cache and an offline fixture mode.

Fixture mode (the default for tests and the scripted demo) reads committed
snapshot files and never opens a network connection. Live mode hits the NVD
2.0 keyword-search endpoint, caches one JSON file per keyword, and serves a
stale cache rather than failing when the API is unreachable.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

NVD_ENDPOINT = "https://services.nvd.nist.gov/rest/json/cves/2.0"
CACHE_TTL_SECONDS = 7 * 24 * 3600

_CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")


class CveUnavailable(RuntimeError):
    """API unreachable and no cached payload to fall back on."""


@dataclass(frozen=True)
class CveRecord:
    id: str
    description: str
    severity: Optional[float] = None
    published: str = ""

    def __post_init__(self):
        if not _CVE_ID_RE.match(self.id):
            raise ValueError(f"bad CVE id {self.id!r}")
        if not self.description:
            raise ValueError("CVE description must be non-empty")
        if self.severity is not None and not 0.0 <= self.severity <= 10.0:
            raise ValueError(f"severity {self.severity} outside 0-10")


def parse_nvd_payload(payload: dict) -> list:
    """NVD 2.0 response JSON -> CveRecords (order preserved)."""
    records = []
    for item in payload.get("vulnerabilities", []):
        cve = item.get("cve", {})
        cve_id = cve.get("id")
        if not cve_id:
            continue
        description = ""
        for desc in cve.get("descriptions", []):
            if desc.get("lang") == "en":
                description = desc.get("value", "")
                break
        if not description:
            continue
        severity = None
        metrics = cve.get("metrics", {})
        for key in ("cvssMetricV31", "cvssMetricV30", "cvssMetricV2"):
            entries = metrics.get(key)
            if entries:
                data = entries[0].get("cvssData", {})
                if data.get("baseScore") is not None:
                    severity = float(data["baseScore"])
                    break
        published = (cve.get("published") or "")[:10]
        records.append(CveRecord(id=cve_id, description=description,
                                 severity=severity, published=published))
    return records


class CveClient:
    def __init__(self, cache_dir=None, fixture_dir=None,
                 api_key_env: str = "NVD_API_KEY", ttl: float = CACHE_TTL_SECONDS,
                 session=None):
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.api_key_env = api_key_env
        self.ttl = ttl
        self._session = session

    @property
    def offline(self) -> bool:
        return self.fixture_dir is not None

    def fetch_cves(self, product_keyword: str) -> list:
        """CVE records for a product keyword.

        Fixture mode: committed snapshot, unknown keyword -> []. Live mode:
        fresh cache -> cached payload; otherwise fetch and cache; unreachable
        API falls back to any stale cache, else CveUnavailable.
        """
        key = product_keyword.lower().strip()
        if self.offline:
            snap = self.fixture_dir / f"{key}.json"
            if not snap.exists():
                return []
            return parse_nvd_payload(json.loads(snap.read_text(encoding="utf-8")))

        cache_file = self.cache_dir / f"{key}.json" if self.cache_dir else None
        cached = None
        if cache_file and cache_file.exists():
            cached = json.loads(cache_file.read_text(encoding="utf-8"))
            if time.time() - cached.get("fetched_at", 0) <= self.ttl:
                return parse_nvd_payload(cached["payload"])
        try:
            payload = self._fetch_remote(key)
        except CveUnavailable:
            if cached is not None:
                return parse_nvd_payload(cached["payload"])
            raise
        if cache_file:
            cache_file.parent.mkdir(parents=True, exist_ok=True)
            cache_file.write_text(
                json.dumps({"fetched_at": time.time(), "payload": payload}),
                encoding="utf-8",
            )
        return parse_nvd_payload(payload)

    def _fetch_remote(self, keyword: str) -> dict:
        import os

        import requests

        session = self._session or requests.Session()
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["apiKey"] = key
        try:
            resp = session.get(NVD_ENDPOINT, params={"keywordSearch": keyword},
                               headers=headers, timeout=30)
            resp.raise_for_status()
            return resp.json()
        except Exception as exc:
            raise CveUnavailable(f"NVD API unreachable: {exc}") from exc


def relevance_filter(cves: Iterable[CveRecord], history_tokens: Iterable[str]) -> list:
    """Keep CVEs whose description shares vocabulary with the session.

    history_tokens are method and header names from the recent exchanges;
    matching is case-insensitive whole-token overlap. Output order follows
    input order (stable) and is always a subset of the input.
    """
    tokens = {t.lower() for t in history_tokens if t and len(t) >= 3}
    if not tokens:
        return []
    kept = []
    for cve in cves:
        words = set(re.findall(r"[a-z0-9_\-]+", cve.description.lower()))
        if tokens & words:
            kept.append(cve)
    return kept
