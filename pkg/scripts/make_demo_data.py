#!/usr/bin/env python3
"""Generate the synthetic offline corpus and market-data fixtures under data/.

The filings are template text, not real 10-K content, and the prices are a
seeded random walk. They exist so the pipeline can run end to end offline.

    python scripts/make_demo_data.py [--out data] [--seed 7]
"""

import argparse
import csv
import datetime as dt
import random
from pathlib import Path

COMPANIES = {
    "IBM": dict(name="International Business Machines Corporation", release="2024-02-26", start=163.0,
                segments=["Software", "Consulting", "Infrastructure", "Financing"],
                themes=["hybrid cloud", "artificial intelligence", "mainframe", "quantum computing"]),
    "HON": dict(name="Honeywell International Inc.", release="2024-02-16", start=198.0,
                segments=["Aerospace Technologies", "Industrial Automation", "Building Automation",
                          "Energy and Sustainability Solutions"],
                themes=["automation", "aviation aftermarket", "energy transition", "warehouse robotics"]),
}

RISKS = [
    "Competition in {theme} could reduce demand for our offerings and pressure margins.",
    "Fluctuations in foreign currency exchange rates affect reported revenue in the {segment} segment.",
    "Cybersecurity incidents could disrupt operations and expose us to liability.",
    "Supply chain constraints may delay deliveries in {segment} and raise component costs.",
    "Changes in interest rates affect our pension obligations and the cost of our debt.",
    "Regulatory changes concerning {theme} could increase compliance costs.",
    "Our ability to attract and retain key talent is critical to executing our {theme} strategy.",
    "Macroeconomic weakness could lead clients to defer spending on {segment} projects.",
    "Litigation and environmental matters could result in material unexpected costs.",
    "Acquisitions in {theme} may not deliver the expected synergies.",
]
BUSINESS = [
    "The {segment} segment grew revenue {pct}% year over year, driven by demand for {theme}.",
    "We continued to invest in {theme}, with research and development spending of ${amt} million.",
    "Backlog in {segment} ended the year at ${amt} million, providing visibility into next year.",
    "Gross margin in {segment} was {pct}%, reflecting pricing actions and productivity.",
    "We returned ${amt} million to shareholders through dividends and share repurchases.",
    "Free cash flow was ${amt} million, an increase of {pct}% compared with the prior year.",
    "Operating expenses in {segment} declined {pct}% as a result of workforce rebalancing.",
    "Our {theme} offerings now serve clients in more than {n} countries.",
    "Total debt at year end was ${amt} million, of which ${amt2} million supports financing receivables.",
    "The effective tax rate for the year was {pct}% compared with {pct2}% in the prior year.",
]
NEWS = [
    ("{name} highlights {theme} momentum ahead of annual report", "Analysts expect the {segment} segment to lead growth."),
    ("{ticker} shares move after analyst day", "Management reiterated its free cash flow outlook for the year."),
    ("{name} announces partnership in {theme}", "The agreement expands the company's reach in {segment}."),
    ("Brokers revise {ticker} price targets", "Several firms adjusted targets citing margins in {segment}."),
    ("{ticker} faces questions over {theme} competition", "Investors weigh pricing pressure against backlog strength."),
]
SOCIAL = [
    ("{ticker} earnings play?", "Thinking about calls before the 10-K. {theme} story looks solid.", 1),
    ("Is {ticker} dead money?", "Stock has gone nowhere, {segment} is boring but cash flow is fine.", -1),
    ("{ticker} DD: {theme}", "Long post on why {theme} could re-rate the stock. Not financial advice.", 1),
    ("Selling my {ticker}", "Worried about {segment} slowdown and debt load.", -1),
    ("{ticker} dividend gang", "Collecting the dividend and sleeping well.", 1),
]


def trading_days(start: dt.date, end: dt.date):
    d = start
    while d <= end:
        if d.weekday() < 5:
            yield d
        d += dt.timedelta(days=1)


def make_filing(rng: random.Random, ticker: str, info: dict, paragraphs: int = 60) -> str:
    def fill(t):
        return t.format(segment=rng.choice(info["segments"]), theme=rng.choice(info["themes"]),
                        pct=rng.randint(1, 45), pct2=rng.randint(1, 45), amt=rng.randint(100, 20000),
                        amt2=rng.randint(100, 9000), n=rng.randint(20, 175))

    parts = [f"{info['name']} ({ticker})\nAnnual Report on Form 10-K for the fiscal year ended December 31, 2023\n"]
    sections = [("Item 1. Business", BUSINESS), ("Item 1A. Risk Factors", RISKS),
                ("Item 7. Management's Discussion and Analysis", BUSINESS)]
    per = paragraphs // len(sections)
    for title, templates in sections:
        parts.append(f"\n{title}\n")
        for _ in range(per):
            parts.append(" ".join(fill(rng.choice(templates)) for _ in range(rng.randint(3, 6))) + "\n")
    return "\n".join(parts)


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    releases = []
    for ticker, info in COMPANIES.items():
        rng = random.Random(f"{args.seed}:{ticker}")
        release = dt.date.fromisoformat(info["release"])
        releases.append([ticker, info["release"]])
        (out / "corpus").mkdir(parents=True, exist_ok=True)
        (out / "corpus" / f"{ticker}_10K_2023.txt").write_text(make_filing(rng, ticker, info), encoding="utf-8")

        price, bars = info["start"], []
        for d in trading_days(dt.date(2023, 12, 1), dt.date(2024, 3, 29)):
            open_ = price * (1 + rng.gauss(0, 0.004))
            price = open_ * (1 + rng.gauss(0.0005, 0.012))
            bars.append([d.isoformat(), f"{open_:.2f}", f"{price:.2f}"])
        fx = out / "fixtures" / ticker
        write_csv(fx / "prices.csv", ["date", "open", "close"], bars)

        def pick(templates):
            return [s.format(ticker=ticker, name=info["name"], segment=rng.choice(info["segments"]),
                             theme=rng.choice(info["themes"])) if isinstance(s, str) else s for s in templates]

        news, social = [], []
        for d in trading_days(release - dt.timedelta(days=40), release + dt.timedelta(days=20)):
            if rng.random() < 0.35:
                h, s = pick(rng.choice(NEWS))
                news.append([d.isoformat(), h, s])
            if rng.random() < 0.5:
                t, b, mood = pick(rng.choice(SOCIAL))
                social.append([d.isoformat(), t, b, max(1, int(rng.expovariate(1 / 80)) * (2 if mood > 0 else 1))])
        write_csv(fx / "news.csv", ["date", "headline", "summary"], news)
        write_csv(fx / "social.csv", ["date", "title", "body", "score"], social)

        fund = []
        for period, as_of in (("FY2022", "2023-02-28"), ("FY2023", info["release"]), ("Q1-2024", "2024-04-24")):
            for metric, lo, hi in (("revenue_musd", 30000, 65000), ("gross_margin", 0.30, 0.56),
                                   ("operating_margin", 0.10, 0.22), ("debt_to_equity", 0.8, 2.6),
                                   ("current_ratio", 0.9, 1.4), ("free_cash_flow_musd", 3000, 11000),
                                   ("return_on_equity", 0.15, 0.40), ("eps_diluted", 4.0, 10.0)):
                v = rng.uniform(lo, hi)
                fund.append([metric, period, f"{v:.2f}" if v > 100 else f"{v:.4f}", as_of])
        write_csv(fx / "fundamentals.csv", ["metric", "period", "value", "as_of"], fund)
    write_csv(out / "fixtures" / "releases.csv", ["ticker", "release_date"], releases)
    print(f"wrote demo data for {', '.join(COMPANIES)} to {out}")


if __name__ == "__main__":
    main()
