"""Market-data providers: offline fixture store plus thin live HTTP clients.

Fixture layout (all files are CSV with a header row)::

    <fixture_dir>/releases.csv            ticker,release_date
    <fixture_dir>/<TICKER>/prices.csv     date,open,close
    <fixture_dir>/<TICKER>/news.csv       date,headline,summary
    <fixture_dir>/<TICKER>/social.csv     date,title,body,score
    <fixture_dir>/<TICKER>/fundamentals.csv  metric,period,value,as_of

Every record carries a date (``as_of`` for fundamentals) so lookups can be
clamped to a release date.
"""

from __future__ import annotations

import csv
import datetime as dt
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from ..errors import ProviderError
from .registry import parse_date


@dataclass(frozen=True)
class PriceBar:
    date: dt.date
    open: float
    close: float


@dataclass(frozen=True)
class NewsItem:
    date: dt.date
    headline: str
    summary: str


@dataclass(frozen=True)
class SocialPost:
    date: dt.date
    title: str
    body: str
    score: int


@dataclass(frozen=True)
class Fundamental:
    metric: str
    period: str
    value: float
    as_of: dt.date


class MarketData(Protocol):
    def prices(self, ticker: str, start: dt.date, end: dt.date) -> list[PriceBar]: ...

    def news(self, ticker: str, start: dt.date, end: dt.date) -> list[NewsItem]: ...

    def social(self, ticker: str, start: dt.date, end: dt.date) -> list[SocialPost]: ...

    def fundamentals(self, ticker: str, as_of: dt.date) -> list[Fundamental]: ...


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class FixtureStore:
    """Read-only market data loaded from a fixture directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._cache: dict[tuple[str, str], list] = {}
        self.release_dates = {
            r["ticker"]: parse_date(r["release_date"]) for r in _read_csv(self.root / "releases.csv")
        }

    def _load(self, ticker: str, kind: str) -> list:
        key = (ticker, kind)
        if key not in self._cache:
            rows = _read_csv(self.root / ticker / f"{kind}.csv")
            if kind == "prices":
                recs = [PriceBar(parse_date(r["date"]), float(r["open"]), float(r["close"])) for r in rows]
            elif kind == "news":
                recs = [NewsItem(parse_date(r["date"]), r["headline"], r["summary"]) for r in rows]
            elif kind == "social":
                recs = [SocialPost(parse_date(r["date"]), r["title"], r["body"], int(r["score"])) for r in rows]
            else:
                recs = [Fundamental(r["metric"], r["period"], float(r["value"]), parse_date(r["as_of"])) for r in rows]
            recs.sort(key=lambda x: getattr(x, "date", None) or x.as_of)
            self._cache[key] = recs
        return self._cache[key]

    def has_ticker(self, ticker: str) -> bool:
        return (self.root / ticker).is_dir()

    def prices(self, ticker, start, end):
        return [b for b in self._load(ticker, "prices") if start <= b.date <= end]

    def news(self, ticker, start, end):
        return [n for n in self._load(ticker, "news") if start <= n.date <= end]

    def social(self, ticker, start, end):
        return [p for p in self._load(ticker, "social") if start <= p.date <= end]

    def fundamentals(self, ticker, as_of):
        latest: dict[tuple[str, str], Fundamental] = {}
        for f in self._load(ticker, "fundamentals"):
            if f.as_of <= as_of:
                latest[(f.metric, f.period)] = f
        return sorted(latest.values(), key=lambda f: (f.period, f.metric))

    # ground truth for the decision task; never exposed through a tool
    def close_on_or_before(self, ticker: str, day: dt.date) -> float:
        bars = [b for b in self._load(ticker, "prices") if b.date <= day]
        if not bars:
            raise ProviderError(f"no {ticker} price on or before {day}")
        return bars[-1].close

    def close_on_or_after(self, ticker: str, day: dt.date) -> float:
        bars = [b for b in self._load(ticker, "prices") if b.date >= day]
        if not bars:
            raise ProviderError(f"no {ticker} price on or after {day}")
        return bars[0].close

    def ground_truth(self, ticker: str, release_date: dt.date, horizon_days: int = 7) -> tuple[float, float]:
        """(close at release, close one week later)."""
        return (
            self.close_on_or_before(ticker, release_date),
            self.close_on_or_after(ticker, release_date + dt.timedelta(days=horizon_days)),
        )


class LiveMarketData:
    """Thin HTTP clients for FMP (prices, fundamentals), Finnhub (news) and Reddit search.

    Keys come from FMP_API_KEY and FINNHUB_API_KEY. Only the request shape is
    tested; responses are mapped field-by-field with no caching.
    """

    FMP_BASE = "https://financialmodelingprep.com/api/v3"
    FINNHUB_BASE = "https://finnhub.io/api/v1"
    REDDIT_BASE = "https://www.reddit.com"

    def __init__(self, client: httpx.Client | None = None, subreddit: str = "wallstreetbets"):
        self.client = client or httpx.Client(timeout=30.0, headers={"User-Agent": "finagents/0.1"})
        self.subreddit = subreddit

    def _get(self, url: str, params: dict) -> object:
        try:
            resp = self.client.get(url, params=params)
            resp.raise_for_status()
            return resp.json()
        except httpx.HTTPError as e:
            raise ProviderError(f"GET {url}: {e}") from e

    def prices(self, ticker, start, end):
        data = self._get(
            f"{self.FMP_BASE}/historical-price-full/{ticker}",
            {"from": start.isoformat(), "to": end.isoformat(), "apikey": os.environ.get("FMP_API_KEY", "")},
        )
        rows = data.get("historical", []) if isinstance(data, dict) else []
        bars = [PriceBar(parse_date(r["date"]), float(r["open"]), float(r["close"])) for r in rows]
        return sorted((b for b in bars if start <= b.date <= end), key=lambda b: b.date)

    def news(self, ticker, start, end):
        rows = self._get(
            f"{self.FINNHUB_BASE}/company-news",
            {"symbol": ticker, "from": start.isoformat(), "to": end.isoformat(),
             "token": os.environ.get("FINNHUB_API_KEY", "")},
        )
        items = [
            NewsItem(dt.datetime.fromtimestamp(r["datetime"], dt.timezone.utc).date(), r.get("headline", ""), r.get("summary", ""))
            for r in rows or []
        ]
        return sorted((n for n in items if start <= n.date <= end), key=lambda n: n.date)

    def social(self, ticker, start, end):
        data = self._get(
            f"{self.REDDIT_BASE}/r/{self.subreddit}/search.json",
            {"q": ticker, "restrict_sr": 1, "sort": "new", "limit": 100},
        )
        posts = []
        for child in (data or {}).get("data", {}).get("children", []):
            d = child.get("data", {})
            day = dt.datetime.fromtimestamp(d.get("created_utc", 0), dt.timezone.utc).date()
            posts.append(SocialPost(day, d.get("title", ""), d.get("selftext", ""), int(d.get("score", 0))))
        return sorted((p for p in posts if start <= p.date <= end), key=lambda p: p.date)

    def fundamentals(self, ticker, as_of):
        rows = self._get(
            f"{self.FMP_BASE}/key-metrics/{ticker}",
            {"period": "annual", "apikey": os.environ.get("FMP_API_KEY", "")},
        )
        out = []
        for r in rows or []:
            day = parse_date(r["date"])
            if day > as_of:
                continue
            for k, v in r.items():
                if isinstance(v, (int, float)) and not isinstance(v, bool):
                    out.append(Fundamental(k, r["date"], float(v), day))
        return sorted(out, key=lambda f: (f.period, f.metric))
