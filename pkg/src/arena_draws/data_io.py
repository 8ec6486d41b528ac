"""Battle/annotation ingestion, report serialization and an HTTP annotation client."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import random
import re
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Iterator, Mapping, Optional, Sequence, Union

from .domain import Annotation, Battle, BattleStream, Outcome
from .errors import ArenaError, DataError, DomainError

log = logging.getLogger(__name__)

LOGICAL_FIELDS = ("battle_id", "timestamp", "model_a", "model_b", "outcome", "query_text")
REQUIRED_FIELDS = ("model_a", "model_b", "outcome")

DEFAULT_VOCABULARY: dict[str, Outcome] = {
    "model_a": Outcome.WIN_A,
    "model_b": Outcome.WIN_B,
    "tie": Outcome.DRAW,
    "tie (bothbad)": Outcome.DRAW,
}

TOKEN_ENV = "ARENA_ANNOTATOR_TOKEN"


@dataclass(frozen=True)
class SchemaMapping:
    """Maps logical battle fields to source keys and outcome tokens to outcomes."""

    fields: Mapping[str, Optional[str]] = field(
        default_factory=lambda: {
            "battle_id": "battle_id",
            "timestamp": "timestamp",
            "model_a": "model_a",
            "model_b": "model_b",
            "outcome": "winner",
            "query_text": "query",
        }
    )
    outcome_vocabulary: Mapping[str, Outcome] = field(default_factory=lambda: dict(DEFAULT_VOCABULARY))
    drop_tokens: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        unknown = set(self.fields) - set(LOGICAL_FIELDS)
        if unknown:
            raise DataError(f"unknown logical fields in mapping: {sorted(unknown)}")
        missing = [f for f in REQUIRED_FIELDS if not self.fields.get(f)]
        if missing:
            raise DataError(f"mapping lacks mandatory fields: {', '.join(missing)}")
        if not self.outcome_vocabulary:
            raise DataError("mapping has an empty outcome vocabulary")
        vocab = {str(k): v if isinstance(v, Outcome) else _outcome_from_name(v) for k, v in self.outcome_vocabulary.items()}
        object.__setattr__(self, "outcome_vocabulary", vocab)
        object.__setattr__(self, "drop_tokens", frozenset(self.drop_tokens))

    @classmethod
    def lmarena(cls, drop_bothbad: bool = False) -> "SchemaMapping":
        """Chatbot Arena style exports (``question_id``, ``tstamp``, ``winner``)."""
        return cls(
            {
                "battle_id": "question_id",
                "timestamp": "tstamp",
                "model_a": "model_a",
                "model_b": "model_b",
                "outcome": "winner",
                "query_text": "conversation_a",
            },
            drop_tokens=frozenset({"tie (bothbad)"}) if drop_bothbad else frozenset(),
        )

    def with_drop_bothbad(self) -> "SchemaMapping":
        return dataclasses.replace(self, drop_tokens=self.drop_tokens | {"tie (bothbad)"})

    def to_dict(self) -> dict:
        return {
            "fields": dict(self.fields),
            "outcome_vocabulary": {k: v.name for k, v in self.outcome_vocabulary.items()},
            "drop_tokens": sorted(self.drop_tokens),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SchemaMapping":
        base = cls()
        return cls(
            {**base.fields, **d.get("fields", {})},
            d.get("outcome_vocabulary", base.outcome_vocabulary),
            frozenset(d.get("drop_tokens", ())),
        )


def _outcome_from_name(name: str) -> Outcome:
    try:
        return Outcome[str(name).upper()]
    except KeyError:
        try:
            return Outcome(str(name).lower())
        except ValueError:
            raise DataError(f"{name!r} is not an outcome (use WIN_A, DRAW or WIN_B)") from None


def _as_text(source: Union[IO, bytes, str]) -> IO[str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _iter_rows(source, fmt: str) -> Iterator[tuple[int, Mapping[str, Any]]]:
    text = _as_text(source)
    if fmt == "jsonl":
        for line_no, line in enumerate(text, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise DataError(f"line {line_no}: expected a JSON object")
            yield line_no, row
    elif fmt == "csv":
        reader = csv.DictReader(text)
        for row in reader:
            yield reader.line_num, row
    else:
        raise DomainError(f"unsupported format {fmt!r}; use jsonl or csv")


def _query_text(value: Any) -> Optional[str]:
    # Conversation exports hold a list of {role, content} turns.
    if value is None or isinstance(value, str):
        return value or None
    if isinstance(value, list):
        for turn in value:
            if isinstance(turn, dict) and turn.get("role") == "user":
                content = turn.get("content")
                return content if isinstance(content, str) else json.dumps(content, sort_keys=True)
        return None
    return str(value)


def _timestamp(value: Any, line_no: int) -> Union[int, float]:
    if isinstance(value, bool):
        raise DataError(f"line {line_no}: timestamp must be numeric")
    if isinstance(value, (int, float)):
        return value
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise DataError(f"line {line_no}: timestamp {value!r} is not numeric") from None
    return int(x) if x.is_integer() and "." not in str(value) else x


def parse_battles(source, fmt: str = "jsonl", mapping: Optional[SchemaMapping] = None) -> BattleStream:
    mapping = mapping or SchemaMapping()
    f = mapping.fields
    battles: list[Battle] = []
    seen: dict[str, int] = {}
    has_ts = bool(f.get("timestamp"))
    for idx, (line_no, row) in enumerate(_iter_rows(source, fmt)):
        for name in REQUIRED_FIELDS:
            if row.get(f[name]) in (None, ""):
                raise DataError(f"line {line_no}: missing field {f[name]!r} ({name})")
        token = str(row[f["outcome"]])
        if token in mapping.drop_tokens:
            continue
        if token not in mapping.outcome_vocabulary:
            raise DataError(f"line {line_no}: outcome token {token!r} is not in the vocabulary")
        key = f.get("battle_id")
        bid = str(row[key]) if key and row.get(key) not in (None, "") else f"row-{line_no}"
        if bid in seen:
            raise DataError(f"line {line_no}: duplicate battle_id {bid!r} (first seen on line {seen[bid]})")
        seen[bid] = line_no
        if has_ts and row.get(f["timestamp"]) not in (None, ""):
            ts = _timestamp(row[f["timestamp"]], line_no)
        else:
            ts = idx
        qkey = f.get("query_text")
        try:
            battles.append(
                Battle(
                    bid,
                    ts,
                    str(row[f["model_a"]]),
                    str(row[f["model_b"]]),
                    mapping.outcome_vocabulary[token],
                    _query_text(row.get(qkey)) if qkey else None,
                )
            )
        except DataError as exc:
            raise DataError(f"line {line_no}: {exc}") from None
    if has_ts and any(b.timestamp < a.timestamp for a, b in zip(battles, battles[1:])):
        log.warning("battles are not in timestamp order; applying a stable sort by timestamp")
        battles.sort(key=lambda b: b.timestamp)
    return BattleStream(battles)


def _score(value: Any, name: str, line_no: int) -> int:
    if isinstance(value, bool):
        raise DataError(f"line {line_no}: {name} must be an integer in 0..5, got {value!r}")
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise DataError(f"line {line_no}: {name} must be an integer in 0..5, got {value!r}") from None
    if not x.is_integer() or not 0 <= x <= 5:
        raise DataError(f"line {line_no}: {name} must be an integer in 0..5, got {value!r}")
    return int(x)


def parse_annotations(source, fmt: str = "jsonl") -> list[Annotation]:
    """Annotations in first-seen order; a repeated battle_id keeps its last row."""
    out: dict[str, Annotation] = {}
    for line_no, row in _iter_rows(source, fmt):
        bid = row.get("battle_id")
        if bid in (None, ""):
            raise DataError(f"line {line_no}: missing battle_id")
        bid = str(bid)
        ann = Annotation(
            bid,
            _score(row.get("difficulty"), "difficulty", line_no),
            _score(row.get("subjectivity"), "subjectivity", line_no),
        )
        if bid in out:
            log.warning("line %d: duplicate annotation for %r; keeping the last one", line_no, bid)
        out[bid] = ann
    return list(out.values())


# -- writers -----------------------------------------------------------------


_TOKEN_FOR = {Outcome.WIN_A: "model_a", Outcome.WIN_B: "model_b", Outcome.DRAW: "tie"}


def write_battles(battles: Iterable[Battle], sink: IO[str], fmt: str = "jsonl") -> None:
    """Write battles under the default schema mapping."""
    rows = (
        {
            "battle_id": b.battle_id,
            "timestamp": b.timestamp,
            "model_a": b.model_a,
            "model_b": b.model_b,
            "winner": _TOKEN_FOR[b.outcome],
            "query": b.query_text,
        }
        for b in battles
    )
    _write_rows(rows, sink, fmt, ["battle_id", "timestamp", "model_a", "model_b", "winner", "query"])


def write_annotations(annotations: Iterable[Annotation], sink: IO[str], fmt: str = "jsonl") -> None:
    rows = ({"battle_id": a.battle_id, "difficulty": a.difficulty, "subjectivity": a.subjectivity} for a in annotations)
    _write_rows(rows, sink, fmt, ["battle_id", "difficulty", "subjectivity"])


def _write_rows(rows: Iterable[dict], sink: IO[str], fmt: str, header: Sequence[str]) -> None:
    if fmt == "jsonl":
        for row in rows:
            sink.write(json.dumps(row, ensure_ascii=False) + "\n")
    elif fmt == "csv":
        writer = csv.DictWriter(sink, fieldnames=list(header), lineterminator="\n")
        # Minimal quoting only looks at the line terminator, so a bare CR would go out unquoted.
        quoted = csv.DictWriter(sink, fieldnames=list(header), lineterminator="\n", quoting=csv.QUOTE_ALL)
        writer.writeheader()
        for row in rows:
            clean = {k: "" if v is None else v for k, v in row.items()}
            has_cr = any(isinstance(v, str) and "\r" in v for v in clean.values())
            (quoted if has_cr else writer).writerow(clean)
    else:
        raise DomainError(f"unsupported format {fmt!r}; use jsonl or csv")


def sig6(x: Any) -> Any:
    """Round floats to 6 significant digits; leave everything else alone."""
    if isinstance(x, float):
        if x != x or x in (float("inf"), float("-inf")):
            return None
        return float(f"{x:.6g}")
    return x


def _plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Outcome):
        return obj.name
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return sig6(obj)


def _fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def report_table(report: Any) -> tuple[list[str], list[list[Any]]]:
    """Header and rows for the CSV/text rendering of a report."""
    from .analysis import BinnedRR
    from .prequential import CurvePoint, ExperimentReport, MetricsReport

    if isinstance(report, MetricsReport):
        header = ["acc", "wl_acc", "draw_acc", "n", "n_wl", "n_draw"]
        return header, [[getattr(report, h) for h in header]]
    if isinstance(report, ExperimentReport):
        header = [f.name for f in dataclasses.fields(report.rows[0])] if report.rows else []
        return header, [[getattr(r, h) for h in header] for r in report.rows]
    items = list(report)
    if items and isinstance(items[0], CurvePoint):
        return ["epsilon", "draw_acc", "wl_acc"], [[p.epsilon, p.draw_acc, p.wl_acc] for p in items]
    if items and isinstance(items[0], BinnedRR):
        header = [
            "bin", "rr", "ci_low", "ci_high",
            "exposed_draws", "exposed_total", "unexposed_draws", "unexposed_total",
            "low", "high", "degenerate",
        ]
        rows = []
        for b in items:
            r = b.result
            rows.append([
                b.label, r.rr, r.ci_low, r.ci_high,
                r.exposed_draws, r.exposed_total, r.unexposed_draws, r.unexposed_total,
                b.low, b.high, b.degenerate,
            ])
        return header, rows
    raise DomainError(f"no tabular layout for {type(report).__name__}")


def write_report(report: Any, fmt: str, sink: IO[str]) -> None:
    if fmt == "json":
        sink.write(json.dumps(_plain(report), indent=2, sort_keys=True) + "\n")
        return
    header, rows = report_table(report)
    if fmt == "csv":
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    elif fmt == "text":
        cells = [header] + [[_fmt(x) or "-" for x in row] for row in rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
        for r in cells:
            sink.write("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() + "\n")
    else:
        raise DomainError(f"unsupported report format {fmt!r}; use json, csv or text")


def read_experiment_report(source: IO[str]):
    """Inverse of ``write_report(..., "json")`` for experiment reports."""
    from .prequential import ExperimentReport, ExperimentRow

    d = json.load(source)
    rows = tuple(ExperimentRow(**r) for r in d["rows"])
    return ExperimentReport(rows, d["draw_fraction"], d["calibration_fraction"], d["seed"], d.get("params", {}))


# -- LLM annotation client ---------------------------------------------------

DEFAULT_PROMPT = (
    "Rate the following user query on two scales from 0 to 5.\n"
    "Difficulty: 0 means trivially easy, 5 means extremely hard.\n"
    "Subjectivity: 0 means fully objective with one correct answer, 5 means entirely a matter of taste.\n"
    "Answer exactly in the form 'difficulty: <0-5>, subjectivity: <0-5>'.\n\n"
    "Query:\n{query}\n"
)

_LABELED = re.compile(r"difficulty\D{0,20}?(-?\d+).*?subjectivity\D{0,20}?(-?\d+)", re.IGNORECASE | re.DOTALL)
_INTS = re.compile(r"-?\d+")


@dataclass(frozen=True)
class AnnotatorConfig:
    endpoint: str
    prompt_template: str = DEFAULT_PROMPT
    timeout: float = 30.0
    max_retries: int = 2
    parser: str = "integer_pair"
    prompt_key: str = "prompt"
    max_in_flight: int = 1
    token_env: str = TOKEN_ENV

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise DomainError("timeout must be positive")
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise DomainError("max_retries must be >= 0 and max_in_flight >= 1")
        if "{query}" not in self.prompt_template:
            raise DomainError("prompt template needs a {query} placeholder")
        if self.parser != "integer_pair":
            raise DomainError(f"unknown response parser {self.parser!r}")


def parse_score_pair(text: str) -> Optional[tuple[int, int]]:
    """Extract (difficulty, subjectivity) from a free-text response, or None."""
    m = _LABELED.search(text)
    if m:
        pair = (int(m.group(1)), int(m.group(2)))
    else:
        ints = _INTS.findall(text)
        if len(ints) < 2:
            return None
        pair = (int(ints[0]), int(ints[1]))
    if all(0 <= x <= 5 for x in pair):
        return pair
    return None


def _response_text(body: bytes) -> str:
    raw = body.decode("utf-8", errors="replace")
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError:
        return raw
    # Accept common completion shapes without committing to a vendor.
    if isinstance(payload, dict):
        for path in (("choices", 0, "message", "content"), ("choices", 0, "text"), ("output",), ("text",), ("content",)):
            node: Any = payload
            try:
                for key in path:
                    node = node[key]
            except (KeyError, IndexError, TypeError):
                continue
            if isinstance(node, str):
                return node
    return raw


def _post(cfg: AnnotatorConfig, prompt: str) -> str:
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(cfg.token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    req = urllib.request.Request(
        cfg.endpoint, data=json.dumps({cfg.prompt_key: prompt}).encode("utf-8"), headers=headers, method="POST"
    )
    with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
        return _response_text(resp.read())


def _annotate_one(battle: Battle, cfg: AnnotatorConfig) -> Optional[Annotation]:
    prompt = cfg.prompt_template.replace("{query}", battle.query_text or "")
    for attempt in range(cfg.max_retries + 1):
        try:
            pair = parse_score_pair(_post(cfg, prompt))
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            log.warning("battle %s attempt %d: request failed (%s)", battle.battle_id, attempt + 1, exc)
            continue
        if pair is not None:
            return Annotation(battle.battle_id, *pair)
        log.warning("battle %s attempt %d: no valid score pair in response", battle.battle_id, attempt + 1)
    log.warning("battle %s: skipped after %d attempts", battle.battle_id, cfg.max_retries + 1)
    return None


def sample_battles(battles: Sequence[Battle], limit: int, seed: int = 0) -> list[Battle]:
    """Uniform sample without replacement, returned in stream order."""
    if limit >= len(battles):
        return list(battles)
    picked = sorted(random.Random(seed).sample(range(len(battles)), limit))
    return [battles[i] for i in picked]


def annotate_via_llm(battles: Sequence[Battle], cfg: AnnotatorConfig, limit: int, seed: int = 0) -> list[Annotation]:
    candidates = [b for b in battles if b.query_text]
    if not candidates:
        raise DataError("no battles carry query text to annotate")
    chosen = sample_battles(candidates, limit, seed)
    if cfg.max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            results = list(pool.map(lambda b: _annotate_one(b, cfg), chosen))
    else:
        results = [_annotate_one(b, cfg) for b in chosen]
    out = [a for a in results if a is not None]
    if not out:
        raise ArenaError("annotation endpoint produced no usable responses")
    return out
