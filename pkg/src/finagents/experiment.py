"""Batch experiments: every (ticker, structure, sub-task) cell, then the decision cells.

Outputs under ``output_dir``::

    manifest.json                               one entry per cell
    transcripts/<TICKER>/<structure>/<task>.jsonl
    records.csv                                 one EvalRecord per decision cell
    summary_subtasks.{csv,md}                   structure x criterion mean scores
    summary_decision.{csv,md}                   structure x (avg diff, binary acc)

Nothing time-dependent is written, so two runs of the same config against the
scripted backend produce byte-identical files.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .backend import Backend, HttpBackend, ModelParams, ScriptedBackend
from .core import save_transcript
from .errors import ConfigError, FinAgentsError, TurnCapExceeded
from .orchestrator import Caps, ConversationOutcome, run_conversation
from .rag import HashEmbedder, VectorIndex, load_corpus
from .tasks_eval import (
    ENSEMBLE,
    PUBLISHED_SCORE_TABLE,
    STRUCTURES,
    EvalRecord,
    avg_price_diff,
    binary_accuracy,
    build_group,
    judge_report,
    run_decision_task,
    score_table_from_records,
    select_ensemble,
    task_def,
)
from .toolkit.providers import FixtureStore, LiveMarketData
from .toolkit.registry import DEFAULT_PAYLOAD_BUDGET, ToolContext
from .toolkit.tools import SUB_TASKS, TASKS, build_registry

log = logging.getLogger(__name__)

TERMINATED = "terminated"
FAILED = "failed"
TURN_CAP = "turn_cap_exceeded"
GAP = "-"


@dataclass
class BackendConfig:
    kind: str = "scripted"  # scripted | live
    script: str | None = None
    base_url: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    model: str = "scripted"
    temperature: float = 0.0
    max_tokens: int = 1024


@dataclass
class ExperimentConfig:
    tickers: list[str]
    structures: list[str] = field(default_factory=lambda: list(STRUCTURES))
    tasks: list[str] = field(default_factory=lambda: list(TASKS))
    backend: BackendConfig = field(default_factory=BackendConfig)
    corpus_dir: str = "data/corpus"
    fixture_dir: str = "data/fixtures"
    output_dir: str = "runs/latest"
    caps: Caps = field(default_factory=Caps)
    seed: int = 0
    ensemble_scores: str = "published"  # published | run | <csv path>
    workers: int = 0  # 0: one per ticker, capped at 8
    chunk_size: int = 1000
    embedding_dim: int = 256
    payload_budget: int = DEFAULT_PAYLOAD_BUDGET
    leakage_inclusive: bool = True
    live_data: bool = False

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "tickers" not in d:
            raise ConfigError("config needs 'tickers'")
        try:
            backend = BackendConfig(**(d.pop("backend", None) or {}))
            caps = Caps(**(d.pop("caps", None) or {}))
        except TypeError as e:
            raise ConfigError(str(e)) from None
        cfg = cls(backend=backend, caps=caps, **d)
        if base_dir is not None:
            cfg.resolve_paths(base_dir)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_dict(doc, base_dir=path.parent)

    def resolve_paths(self, base_dir: Path) -> None:
        """Make relative paths relative to `base_dir` (the config file's folder)."""
        def fix(p):
            return str((base_dir / p).resolve()) if p and not Path(p).is_absolute() else p

        self.corpus_dir = fix(self.corpus_dir)
        self.fixture_dir = fix(self.fixture_dir)
        self.output_dir = fix(self.output_dir)
        self.backend.script = fix(self.backend.script)
        if self.ensemble_scores not in ("published", "run"):
            self.ensemble_scores = fix(self.ensemble_scores)

    def config_hash(self) -> str:
        """Digest of everything that determines the results.

        Input files enter by content, not location, so the same experiment
        hashes the same in any checkout. output_dir and workers are left out.
        """
        d = asdict(self)
        for key in ("output_dir", "workers", "corpus_dir", "fixture_dir"):
            d.pop(key)
        d["backend"].pop("script")
        d["inputs"] = {
            "corpus": _digest_files(Path(self.corpus_dir), [f"{t}_10K_2023.txt" for t in self.tickers]),
            "fixtures": _digest_files(Path(self.fixture_dir), None),
            "script": _digest_files(Path(self.backend.script), []) if self.backend.script else None,
        }
        if self.ensemble_scores not in ("published", "run"):
            d["ensemble_scores"] = _digest_files(Path(self.ensemble_scores), [])
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def sub_tasks(self) -> list[str]:
        return [t for t in SUB_TASKS if t in self.tasks]

    @property
    def conversation_structures(self) -> list[str]:
        return [s for s in self.structures if s != ENSEMBLE]

    def validate(self) -> None:
        if not self.tickers:
            raise ConfigError("no tickers configured")
        bad = [s for s in self.structures if s not in STRUCTURES + (ENSEMBLE,)]
        if bad:
            raise ConfigError(f"unknown structures {bad}")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad:
            raise ConfigError(f"unknown tasks {bad}")
        if "decision" in self.tasks and len(self.sub_tasks) != len(SUB_TASKS):
            raise ConfigError("the decision task needs all three sub-tasks")
        if ENSEMBLE in self.structures:
            if "decision" not in self.tasks:
                raise ConfigError("ensemble only applies to the decision task")
            if self.ensemble_scores not in ("published", "run") and not Path(self.ensemble_scores).exists():
                raise ConfigError(f"ensemble score table {self.ensemble_scores} not found")
        if self.backend.kind == "scripted":
            if not self.backend.script or not Path(self.backend.script).exists():
                raise ConfigError(f"scripted backend needs an existing script, got {self.backend.script!r}")
        elif self.backend.kind == "live":
            if not self.backend.base_url:
                raise ConfigError("live backend needs base_url")
        else:
            raise ConfigError(f"unknown backend kind {self.backend.kind!r}")
        for t in self.tickers:
            if not (Path(self.corpus_dir) / f"{t}_10K_2023.txt").exists():
                raise ConfigError(f"missing corpus file for ticker {t}")


def _digest_files(root: Path, names: list[str] | None) -> str | None:
    """sha256 over (relative name, bytes) of the listed files under root.

    ``names=None`` takes every file below root; ``[]`` means root is itself the file.
    """
    if names == []:
        files = [(root.name, root)] if root.is_file() else []
    elif names is None:
        files = sorted((p.relative_to(root).as_posix(), p) for p in root.rglob("*") if p.is_file()) if root.is_dir() else []
    else:
        files = [(n, root / n) for n in names if (root / n).is_file()]
    if not files:
        return None
    h = hashlib.sha256()
    for name, path in files:
        h.update(name.encode() + b"\0" + path.read_bytes() + b"\0")
    return h.hexdigest()


@dataclass
class CellEntry:
    ticker: str
    structure: str
    task: str
    status: str
    transcript: str | None = None
    turns_used: int | None = None
    terminated_by: str | None = None
    error: str | None = None
    scores: dict[str, int] = field(default_factory=dict)
    sources: dict[str, str] = field(default_factory=dict)


@dataclass
class RunManifest:
    config_hash: str
    cells: list[CellEntry]
    records_path: str = "records.csv"
    summary_paths: list[str] = field(default_factory=list)
    ensemble_selection: dict[str, str] = field(default_factory=dict)

    @property
    def all_completed(self) -> bool:
        return all(c.status == TERMINATED for c in self.cells)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        d["cells"] = [CellEntry(**c) for c in d["cells"]]
        return cls(**d)


def _cell_rng(seed: int, *key: str) -> random.Random:
    return random.Random(hashlib.sha256(":".join([str(seed), *key]).encode()).hexdigest())


class _Runner:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        if cfg.live_data:
            self.data = LiveMarketData()
        else:
            self.data = FixtureStore(cfg.fixture_dir)
        self.store = FixtureStore(cfg.fixture_dir)
        missing = [t for t in cfg.tickers if t not in self.store.release_dates]
        if missing:
            raise ConfigError(f"no release date for tickers {missing} in {cfg.fixture_dir}/releases.csv")
        embedder = HashEmbedder(cfg.embedding_dim, cfg.seed)
        corpus = load_corpus(cfg.corpus_dir, cfg.tickers)
        self.indices = {t: VectorIndex.build({f"{t}_10K_2023": corpus[t]}, embedder, cfg.chunk_size) for t in cfg.tickers}
        self.registry = build_registry(self.data, self.indices, cfg.tasks)
        b = cfg.backend
        self.model_params = ModelParams(b.model, b.temperature, b.max_tokens)
        if b.kind == "scripted":
            self.base_backend: Backend = ScriptedBackend.from_file(b.script)
        else:
            self.base_backend = HttpBackend(b.base_url, b.api_key_env, self.model_params)

    def context(self, ticker: str) -> ToolContext:
        return ToolContext(ticker, self.store.release_dates[ticker], self.cfg.leakage_inclusive, self.cfg.payload_budget)

    def variables(self, ticker: str, structure: str, task: str) -> dict[str, Any]:
        release = self.store.release_dates[ticker]
        last_close = self.store.close_on_or_before(ticker, release)
        rng = _cell_rng(self.cfg.seed, ticker, structure, task)
        drift = rng.uniform(-0.04, 0.04)
        return {
            "ticker": ticker,
            "structure": structure,
            "task": task,
            "release_date": release.isoformat(),
            "window_start": (release - dt.timedelta(days=30)).isoformat(),
            "last_close": f"{last_close:.2f}",
            "scripted_target": f"{last_close * (1 + drift):.2f}",
            "scripted_buy": "yes" if drift > 0 else "no",
        }

    def backend_for(self, ticker: str, structure: str, task: str, **extra) -> Backend:
        if isinstance(self.base_backend, ScriptedBackend):
            return self.base_backend.bind(**self.variables(ticker, structure, task), **extra)
        return self.base_backend

    def transcript_path(self, ticker: str, structure: str, task: str) -> str:
        return f"transcripts/{ticker}/{structure}/{task}.jsonl"

    def _converse(self, entry: CellEntry, fn) -> ConversationOutcome | None:
        try:
            outcome = fn()
        except TurnCapExceeded as e:
            entry.status, entry.error = TURN_CAP, str(e)
            if e.transcript is not None:
                save_transcript(e.transcript, self.out / entry.transcript)
            return None
        except FinAgentsError as e:
            entry.status, entry.error = FAILED, f"{type(e).__name__}: {e}"
            return None
        save_transcript(outcome.transcript, self.out / entry.transcript)
        entry.turns_used = outcome.turns_used
        entry.terminated_by = outcome.terminated_by
        return outcome

    def judge(self, ticker: str, structure: str, task: str, report: str) -> dict[str, int]:
        scores = {}
        for criterion in (task, "readability", "coherence"):
            rng = _cell_rng(self.cfg.seed, "judge", ticker, structure, task, criterion)
            backend = self.backend_for(ticker, structure, task, judge_score=rng.randint(2, 5))
            scores[criterion] = judge_report(report, criterion, backend, model_params=self.model_params).score
        return scores

    def run_subtask(self, ticker: str, structure: str, task: str) -> tuple[CellEntry, str | None]:
        entry = CellEntry(ticker, structure, task, TERMINATED, self.transcript_path(ticker, structure, task))
        tdef = task_def(task)
        ctx = self.context(ticker)
        prompt = tdef.prompt(ticker, ctx.release_date.isoformat())
        outcome = self._converse(entry, lambda: run_conversation(
            build_group(structure, task), prompt, self.backend_for(ticker, structure, task),
            self.registry, ctx, self.cfg.caps, self.model_params,
        ))
        if outcome is None:
            return entry, None
        try:
            entry.scores = self.judge(ticker, structure, task, outcome.final_report)
        except FinAgentsError as e:
            entry.status, entry.error = FAILED, f"judge: {type(e).__name__}: {e}"
            return entry, None
        return entry, outcome.final_report

    def run_decision(self, ticker: str, structure: str, reports: dict[str, str | None],
                     sources: dict[str, str]) -> tuple[CellEntry, EvalRecord | None]:
        entry = CellEntry(ticker, structure, "decision", TERMINATED, self.transcript_path(ticker, structure, "decision"),
                          sources=dict(sources))
        missing = [t for t in SUB_TASKS if not reports.get(t)]
        if missing:
            entry.status, entry.error, entry.transcript = FAILED, f"missing sub-task reports {missing}", None
            return entry, None
        # the ensemble's final call is made by a single CIO agent
        group = build_group("single" if structure == ENSEMBLE else structure, "decision")
        ctx = self.context(ticker)
        result = {}

        def go():
            r = run_decision_task(reports, group, self.backend_for(ticker, structure, "decision"),
                                  self.registry, ctx, self.cfg.caps, self.model_params)
            result["decision"] = r.decision
            return r.outcome

        if self._converse(entry, go) is None:
            return entry, None
        release_price, week_price = self.store.ground_truth(ticker, ctx.release_date)
        decision = result["decision"]
        return entry, EvalRecord(ticker, structure, decision.target_price, decision.buy, release_price, week_price)


def _ensemble_table(cfg: ExperimentConfig, sub_entries: list[CellEntry]) -> dict[tuple[str, str], float]:
    if cfg.ensemble_scores == "published":
        return dict(PUBLISHED_SCORE_TABLE)
    if cfg.ensemble_scores == "run":
        rows = [(e.structure, e.task, e.scores[e.task]) for e in sub_entries if e.status == TERMINATED]
        return score_table_from_records(rows)
    with open(cfg.ensemble_scores, newline="", encoding="utf-8") as f:
        return {(r["structure"], r["task"]): float(r["score"]) for r in csv.DictReader(f)}


def _resolve_selection(selection: dict[str, str], available: list[str]) -> dict[str, str]:
    out = {}
    for task, label in selection.items():
        label = "horizontal" if label == "triple" else label
        if label not in available:
            raise ConfigError(f"ensemble picks {label!r} for {task}, which is not among the run's structures")
        out[task] = label
    return out


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    cfg.validate()
    runner = _Runner(cfg)
    out = runner.out
    out.mkdir(parents=True, exist_ok=True)
    workers = cfg.workers or min(len(cfg.tickers), 8)

    cells = [(t, s, k) for t in cfg.tickers for s in cfg.conversation_structures for k in cfg.sub_tasks]
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        sub_results = list(pool.map(lambda c: runner.run_subtask(*c), cells))
    sub_entries = [e for e, _ in sub_results]
    reports = {(e.ticker, e.structure, e.task): r for e, r in sub_results}

    decision_entries: list[CellEntry] = []
    records: list[EvalRecord] = []
    selection: dict[str, str] = {}
    if "decision" in cfg.tasks:
        jobs = []
        for t in cfg.tickers:
            for s in cfg.conversation_structures:
                jobs.append((t, s, {k: reports.get((t, s, k)) for k in SUB_TASKS}, {k: s for k in SUB_TASKS}))
        if ENSEMBLE in cfg.structures:
            selection = _resolve_selection(
                select_ensemble(_ensemble_table(cfg, sub_entries), SUB_TASKS), cfg.conversation_structures
            )
            for t in cfg.tickers:
                jobs.append((t, ENSEMBLE, {k: reports.get((t, selection[k], k)) for k in SUB_TASKS}, selection))
        with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
            dec_results = list(pool.map(lambda j: runner.run_decision(*j), jobs))
        by_cell = {(e.ticker, e.structure, e.task): e for e in sub_entries}
        for entry, record in dec_results:
            decision_entries.append(entry)
            if record is None:
                continue
            srcs = [by_cell[(entry.ticker, entry.sources[k], k)] for k in SUB_TASKS]
            for k, src in zip(SUB_TASKS, srcs):
                record.scores[k] = src.scores[k]
            for aigc in ("readability", "coherence"):
                record.scores[aigc] = round(sum(s.scores[aigc] for s in srcs) / len(srcs), 4)
            records.append(record)

    write_records(records, out / "records.csv")
    manifest = RunManifest(cfg.config_hash(), sub_entries + decision_entries, "records.csv",
                           ensemble_selection=selection)
    manifest.summary_paths = emit_report(manifest, out)
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


RECORD_FIELDS = ["ticker", "structure", "predicted_target_price", "buy_decision", "actual_release_price",
                 "actual_week_price", "scores"]


def write_records(records: list[EvalRecord], path: Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([r.ticker, r.structure, f"{r.predicted_target_price:.4f}", "yes" if r.buy_decision else "no",
                    f"{r.actual_release_price:.4f}", f"{r.actual_week_price:.4f}", json.dumps(r.scores, sort_keys=True)])
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_records(path: Path) -> list[EvalRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        return [
            EvalRecord(r["ticker"], r["structure"], float(r["predicted_target_price"]), r["buy_decision"] == "yes",
                       float(r["actual_release_price"]), float(r["actual_week_price"]), json.loads(r["scores"]))
            for r in csv.DictReader(f)
        ]


def format_pct(value: float, decimals: int) -> str:
    return f"{value * 100:.{decimals}f}%"


def _table_md(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _table_csv(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def subtask_table(cells: list[CellEntry]) -> tuple[list[str], list[list[str]]]:
    sub_cells = [c for c in cells if c.task in SUB_TASKS]
    structures = [s for s in STRUCTURES if any(c.structure == s for c in sub_cells)]
    header = ["Collaboration", "Fundamental", "Sentiment", "Risk", "Readability", "Coherence"]
    rows = []
    for s in structures:
        row = [s.capitalize()]
        mine = [c for c in sub_cells if c.structure == s]
        for crit in ("fundamental", "sentiment", "risk"):
            group = [c for c in mine if c.task == crit]
            ok = group and all(c.status == TERMINATED for c in group)
            row.append(f"{sum(c.scores[crit] for c in group) / len(group):.2f}" if ok else GAP)
        for crit in ("readability", "coherence"):
            ok = mine and all(c.status == TERMINATED for c in mine)
            row.append(f"{sum(c.scores[crit] for c in mine) / len(mine):.2f}" if ok else GAP)
        rows.append(row)
    return header, rows


def decision_table(cells: list[CellEntry], records: list[EvalRecord]) -> tuple[list[str], list[list[str]]]:
    header = ["Collaboration", "Avg. Diff. to Target", "Binary Acc."]
    dec_cells = [c for c in cells if c.task == "decision"]
    rows = []
    for s in STRUCTURES + (ENSEMBLE,):
        mine = [c for c in dec_cells if c.structure == s]
        if not mine:
            continue
        recs = [r for r in records if r.structure == s]
        if all(c.status == TERMINATED for c in mine) and recs:
            rows.append([s.capitalize(), format_pct(avg_price_diff(recs), 2), format_pct(binary_accuracy(recs), 1)])
        else:
            rows.append([s.capitalize(), GAP, GAP])
    return header, rows


def emit_report(manifest: RunManifest, out_dir: str | Path) -> list[str]:
    """Write the sub-task score table and the decision table; returns the file names."""
    out = Path(out_dir)
    records_file = out / manifest.records_path
    records = read_records(records_file) if records_file.exists() else []
    written = []
    for name, (header, rows) in (
        ("summary_subtasks", subtask_table(manifest.cells)),
        ("summary_decision", decision_table(manifest.cells, records)),
    ):
        (out / f"{name}.csv").write_text(_table_csv(header, rows), encoding="utf-8")
        (out / f"{name}.md").write_text(_table_md(header, rows), encoding="utf-8")
        written += [f"{name}.csv", f"{name}.md"]
    return written
