"""Command-line entry point: ``arena-draws <command> [options]``.

Every command writes its outputs plus a ``manifest.json`` into ``--out-dir``.
Re-running a command with ``--config <manifest.json>`` reproduces the
outputs byte for byte.  Option precedence is flags > config file > defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .analysis import gaps_from_ratings, rr_by_annotation, rr_by_gap_values, rr_by_rating_gap
from .data_io import (
    AnnotatorConfig,
    SchemaMapping,
    annotate_via_llm,
    parse_annotations,
    parse_battles,
    write_annotations,
    write_battles,
    write_report,
)
from .domain import Outcome
from .errors import ArenaError, DataError, NumericalError
from .prequential import (
    Treatment,
    calibrate_margin,
    metrics,
    policy_for,
    replay,
    run_experiment,
    tradeoff_curve,
)
from .rating_systems import SYSTEMS, make_system
from .simulator import SimulatorConfig, hypothesis_draw_model, simulate, uniform_draw_model

log = logging.getLogger("arena_draws")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SWEEP_RANGE = (0.05, 0.45)

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "format": "jsonl",
    "schema": "default",
    "mapping": None,
    "drop_bothbad": False,
    "system": "elo",
    "systems": "elo,glicko2,bt,trueskill",
    "params": [],
    "treatment": "apply_all",
    "treatments": "all",
    "epsilon": "calibrate",
    "calibration_fraction": 0.05,
    "wl_mode": "eps0",
    "jobs": 1,
    "n_models": 20,
    "n_battles": 50_000,
    "skill_scale": 1.0,
    "draw_rate": 0.35,
    "rr_difficulty": 1.0,
    "rr_subjectivity": 1.0,
    "gap_coupling": 0.0,
    "bins": 10,
    "field": "both",
    "ratings": None,
    "annotations": None,
    "data": None,
    "endpoint": None,
    "prompt_file": None,
    "limit": 3000,
    "timeout": 30.0,
    "retries": 2,
    "max_in_flight": 1,
}


class UsageError(ArenaError):
    pass


@dataclass
class Diagnostic:
    level: str  # "error" or "warning"
    message: str


@dataclass
class RunConfig:
    command: str
    options: dict[str, Any] = field(default_factory=dict)

    def __getattr__(self, name: str) -> Any:
        try:
            return self.__dict__["options"][name]
        except KeyError:
            raise AttributeError(name) from None


def _split(value: Any) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _treatments(value: Any) -> list[str]:
    items = _split(value)
    if items == ["all"]:
        return [t.value for t in Treatment]
    return items


def _float_or_none(x: Any) -> Optional[float]:
    try:
        return float(x)
    except (TypeError, ValueError):
        return None


def parse_grid(spec: Any) -> list[float]:
    """``"0.05:0.45:0.05"`` (inclusive) or a comma list."""
    if isinstance(spec, (list, tuple)):
        return [float(x) for x in spec]
    text = str(spec)
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise UsageError("grid step must be positive")
        n = int(round((stop - start) / step)) + 1
        return [round(start + k * step, 10) for k in range(n)]
    return [float(x) for x in _split(text)]


def _param_dict(params: Sequence[str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in params:
        key, sep, value = str(item).partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        out[key.strip()] = None if value.strip().lower() == "none" else float(value)
    return out


def validate_config(cfg: RunConfig) -> list[Diagnostic]:
    """Every problem with ``cfg``; an empty list means it can run."""
    out: list[Diagnostic] = []
    o = cfg.options

    def err(msg: str) -> None:
        out.append(Diagnostic("error", msg))

    needs_data = cfg.command in ("evaluate", "sweep", "ablate", "rr-annotations", "rr-gap", "annotate")
    if needs_data:
        if not o.get("data"):
            err("no dataset given (--data)")
        elif not Path(o["data"]).is_file():
            err(f"dataset {o['data']} does not exist")
        if o.get("format") not in ("jsonl", "csv"):
            err(f"unknown data format {o.get('format')!r}")
        mapping = o.get("mapping")
        if mapping and not Path(mapping).is_file():
            err(f"mapping file {mapping} does not exist")
        elif mapping:
            try:
                SchemaMapping.from_dict(json.loads(Path(mapping).read_text(encoding="utf-8")))
            except (ArenaError, ValueError, TypeError) as exc:
                err(f"invalid schema mapping {mapping}: {exc}")
        if o.get("schema") not in ("default", "lmarena"):
            err(f"unknown schema preset {o.get('schema')!r}")

    if cfg.command in ("evaluate", "sweep", "rr-gap"):
        if o.get("system") not in SYSTEMS:
            err(f"unknown rating system {o.get('system')!r}")
    if cfg.command == "ablate":
        systems = _split(o.get("systems", ""))
        if not systems:
            err("empty system list")
        for s in systems:
            if s not in SYSTEMS:
                err(f"unknown rating system {s!r}")
        treatments = _treatments(o.get("treatments", ""))
        if not treatments:
            err("empty treatment list")
        for t in treatments:
            if t not in {x.value for x in Treatment}:
                err(f"unknown treatment {t!r}")
    if cfg.command in ("evaluate", "sweep") and o.get("treatment") not in {x.value for x in Treatment}:
        err(f"unknown treatment {o.get('treatment')!r}")

    if cfg.command in ("evaluate", "ablate"):
        eps = o.get("epsilon")
        if eps != "calibrate":
            value = _float_or_none(eps)
            if value is None or value < 0:
                err(f"decision margin must be 'calibrate' or a non-negative number, got {eps!r}")
            elif not SWEEP_RANGE[0] <= value <= SWEEP_RANGE[1]:
                out.append(Diagnostic("warning", f"decision margin {value:g} outside the swept range [0.05, 0.45]"))
    if cfg.command in ("evaluate", "sweep", "ablate", "rr-gap"):
        cf = _float_or_none(o.get("calibration_fraction"))
        if cf is None or not 0 <= cf < 1:
            err("calibration fraction must lie in [0, 1)")
        try:
            _param_dict(o.get("params", []))
        except (UsageError, ValueError) as exc:
            err(str(exc))
    if cfg.command == "sweep":
        try:
            if not parse_grid(o.get("epsilon_grid")):
                err("empty epsilon grid")
        except (UsageError, ValueError):
            err(f"cannot parse epsilon grid {o.get('epsilon_grid')!r}")
    if cfg.command == "rr-annotations":
        if not o.get("annotations") or not Path(o["annotations"]).is_file():
            err("annotation file missing (--annotations)")
        if o.get("field") not in ("difficulty", "subjectivity", "both"):
            err(f"unknown field {o.get('field')!r}")
    if cfg.command == "rr-gap":
        if int(o.get("bins", 0)) < 1:
            err("--bins must be at least 1")
        if o.get("ratings") and not Path(o["ratings"]).is_file():
            err(f"ratings file {o['ratings']} does not exist")
    if cfg.command == "annotate":
        if not o.get("endpoint"):
            err("no annotator endpoint (--endpoint)")
        if float(o.get("timeout", 0)) <= 0:
            err("timeout must be positive")
    if cfg.command == "simulate":
        if int(o.get("n_models", 0)) < 2:
            err("need at least two models")
        if int(o.get("n_battles", -1)) < 0:
            err("n_battles must be non-negative")
    return out


# -- command implementations -------------------------------------------------


def _mapping(o: dict) -> SchemaMapping:
    if o.get("mapping"):
        mapping = SchemaMapping.from_dict(json.loads(Path(o["mapping"]).read_text(encoding="utf-8")))
    elif o.get("schema") == "lmarena":
        mapping = SchemaMapping.lmarena()
    else:
        mapping = SchemaMapping()
    return mapping.with_drop_bothbad() if o.get("drop_bothbad") else mapping


def _load_stream(o: dict):
    with open(o["data"], "rb") as fh:
        stream = parse_battles(fh, o["format"], _mapping(o))
    if not len(stream):
        raise DataError(f"{o['data']}: no battles")
    log.info("loaded %d battles from %s (draw fraction %.4f)", len(stream), o["data"], stream.draw_fraction)
    return stream


def _write(path: Path, report: Any, fmt: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_report(report, fmt, fh)


def _epsilon(o: dict, stream, system) -> float:
    if o["epsilon"] == "calibrate":
        eps = calibrate_margin(stream, system, float(o["calibration_fraction"]))
        log.info("calibrated decision margin for %s: %g", system.name, eps)
        return eps
    return float(o["epsilon"])


def cmd_simulate(o: dict, out: Path) -> None:
    if float(o["rr_difficulty"]) != 1.0 or float(o["rr_subjectivity"]) != 1.0:
        draw_model = hypothesis_draw_model(float(o["draw_rate"]), float(o["rr_difficulty"]), float(o["rr_subjectivity"]))
    else:
        draw_model = uniform_draw_model(float(o["draw_rate"]))
    cfg = SimulatorConfig(
        n_models=int(o["n_models"]),
        n_battles=int(o["n_battles"]),
        skill_scale=float(o["skill_scale"]),
        draw_model=draw_model,
        gap_coupling=float(o["gap_coupling"]),
        seed=int(o["seed"]),
    )
    stream, annotations, truth = simulate(cfg)
    ext = o["format"]
    with open(out / f"battles.{ext}", "w", encoding="utf-8", newline="\n") as fh:
        write_battles(stream, fh, ext)
    with open(out / f"annotations.{ext}", "w", encoding="utf-8", newline="\n") as fh:
        write_annotations(annotations, fh, ext)
    with open(out / "truth.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"config": cfg.to_dict(), "skills": truth.skills}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %d battles (draw fraction %.4f) to %s", len(stream), stream.draw_fraction if len(stream) else 0, out)


def cmd_evaluate(o: dict, out: Path) -> None:
    stream = _load_stream(o)
    system = make_system(o["system"], **_param_dict(o["params"]))
    eps = _epsilon(o, stream, system)
    policy = policy_for(o["treatment"], stream.draw_fraction, int(o["seed"]))
    report = metrics(replay(stream, system, policy, eps, float(o["calibration_fraction"])), wl_mode=o["wl_mode"])
    _write(out / "metrics.json", report, "json")
    _write(out / "metrics.txt", report, "text")
    write_report(report, "text", sys.stdout)


def cmd_sweep(o: dict, out: Path) -> None:
    stream = _load_stream(o)
    system = make_system(o["system"], **_param_dict(o["params"]))
    policy = policy_for(o["treatment"], stream.draw_fraction, int(o["seed"]))
    curve = tradeoff_curve(stream, system, policy, parse_grid(o["epsilon_grid"]), float(o["calibration_fraction"]))
    _write(out / "curve.csv", curve, "csv")


def cmd_ablate(o: dict, out: Path) -> None:
    stream = _load_stream(o)
    params = _param_dict(o["params"])
    systems = []
    for name in _split(o["systems"]):
        # --param entries apply to every system that accepts them.
        cls, cfg_cls = SYSTEMS[name]
        accepted = {k: v for k, v in params.items() if k in cfg_cls.__dataclass_fields__}
        systems.append(make_system(name, **accepted))
    eps = None if o["epsilon"] == "calibrate" else float(o["epsilon"])
    report = run_experiment(
        stream,
        systems,
        _treatments(o["treatments"]),
        seed=int(o["seed"]),
        calibration_fraction=float(o["calibration_fraction"]),
        epsilon=eps,
        jobs=int(o["jobs"]),
    )
    _write(out / "ablation.json", report, "json")
    _write(out / "ablation.csv", report, "csv")
    _write(out / "ablation.txt", report, "text")
    with open(out / "delta_summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("system,treatment,delta_pct\n")
        for r in report.rows:
            fh.write(f"{r.system},{r.treatment},{r.delta_pct:.6g}\n")
    write_report(report, "text", sys.stdout)


def cmd_rr_annotations(o: dict, out: Path) -> None:
    stream = _load_stream(o)
    with open(o["annotations"], "rb") as fh:
        annotations = parse_annotations(fh, o["format"])
    fields = ["difficulty", "subjectivity"] if o["field"] == "both" else [o["field"]]
    for name in fields:
        bins = rr_by_annotation(stream, annotations, name)
        _write(out / f"rr_{name}.csv", bins, "csv")
        _write(out / f"rr_{name}.json", bins, "json")


def cmd_rr_gap(o: dict, out: Path) -> None:
    stream = _load_stream(o)
    bins_n = int(o["bins"])
    if o.get("ratings"):
        ratings = json.loads(Path(o["ratings"]).read_text(encoding="utf-8"))
        gaps = gaps_from_ratings(stream, {k: float(v) for k, v in ratings.items()})
        bins = rr_by_gap_values(gaps, [b.outcome is Outcome.DRAW for b in stream], bins_n)
    else:
        # Online pre-battle gaps do not depend on the decision margin.
        system = make_system(o["system"], **_param_dict(o["params"]))
        bins = rr_by_rating_gap(replay(stream, system, calibration_fraction=float(o["calibration_fraction"])), bins_n)
    if bins and bins[0].degenerate:
        log.warning("fewer distinct gap values than bins; degenerate bins were merged")
    _write(out / "rr_gap.csv", bins, "csv")
    _write(out / "rr_gap.json", bins, "json")


def cmd_annotate(o: dict, out: Path) -> None:
    stream = _load_stream(o)
    kwargs: dict[str, Any] = {
        "endpoint": o["endpoint"],
        "timeout": float(o["timeout"]),
        "max_retries": int(o["retries"]),
        "max_in_flight": int(o["max_in_flight"]),
    }
    if o.get("prompt_file"):
        kwargs["prompt_template"] = Path(o["prompt_file"]).read_text(encoding="utf-8")
    annotations = annotate_via_llm(stream, AnnotatorConfig(**kwargs), int(o["limit"]), int(o["seed"]))
    with open(out / "annotations.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        write_annotations(annotations, fh)
    log.info("wrote %d annotations", len(annotations))


COMMANDS = {
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "rr-annotations": cmd_rr_annotations,
    "rr-gap": cmd_rr_gap,
    "annotate": cmd_annotate,
}


# -- argument parsing --------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(message)


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="battle file (JSONL or CSV)")
    p.add_argument("--format", choices=["jsonl", "csv"])
    p.add_argument("--schema", choices=["default", "lmarena"], help="built-in schema mapping")
    p.add_argument("--mapping", help="JSON schema mapping file (overrides --schema)")
    p.add_argument("--drop-bothbad", action="store_const", const=True, help="drop 'tie (bothbad)' rows")


def _system_args(p: argparse.ArgumentParser, multi: bool = False) -> None:
    if multi:
        p.add_argument("--systems", help="comma list of rating systems")
    else:
        p.add_argument("--system", help=f"one of {', '.join(SYSTEMS)}")
    p.add_argument("--param", dest="params", action="append", help="system hyperparameter key=value (repeatable)")
    p.add_argument("--calibration-fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arena-draws", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file or manifest")
        p.add_argument("--out-dir", help="output directory (default: current directory)")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_const", const=True)

    p = sub.add_parser("simulate", help="generate a synthetic arena")
    common(p)
    p.add_argument("--format", choices=["jsonl", "csv"])
    p.add_argument("--n-models", type=int)
    p.add_argument("--n-battles", type=int)
    p.add_argument("--skill-scale", type=float)
    p.add_argument("--draw-rate", type=float)
    p.add_argument("--rr-difficulty", type=float, help="draw risk ratio of difficulty 0")
    p.add_argument("--rr-subjectivity", type=float, help="draw risk ratio of subjectivity 0")
    p.add_argument("--gap-coupling", type=float)

    p = sub.add_parser("evaluate", help="prequential accuracy of one system under one treatment")
    common(p)
    _data_args(p)
    _system_args(p)
    p.add_argument("--treatment", choices=[t.value for t in Treatment])
    p.add_argument("--epsilon", help="decision margin or 'calibrate'")
    p.add_argument("--wl-mode", choices=["eps0", "margin"])

    p = sub.add_parser("sweep", help="draw vs win-loss trade-off curve")
    common(p)
    _data_args(p)
    _system_args(p)
    p.add_argument("--treatment", choices=[t.value for t in Treatment])
    p.add_argument("--epsilon", dest="epsilon_grid", help="start:stop:step or comma list")

    p = sub.add_parser("ablate", help="systems x treatments grid with McNemar tests")
    common(p)
    _data_args(p)
    _system_args(p, multi=True)
    p.add_argument("--treatments", help="comma list or 'all'")
    p.add_argument("--epsilon", help="decision margin or 'calibrate'")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("analyze", help="draw risk-ratio analyses")
    asub = p.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    q = asub.add_parser("rr-annotations", help="risk ratio by difficulty/subjectivity score")
    common(q)
    _data_args(q)
    q.add_argument("--annotations")
    q.add_argument("--field", choices=["difficulty", "subjectivity", "both"])
    q = asub.add_parser("rr-gap", help="risk ratio by rating-gap percentile")
    common(q)
    _data_args(q)
    _system_args(q)
    q.add_argument("--bins", type=int)
    q.add_argument("--ratings", help="JSON {model: rating} table to use instead of online ratings")

    p = sub.add_parser("annotate", help="label query difficulty/subjectivity through an HTTP endpoint")
    common(p)
    _data_args(p)
    p.add_argument("--endpoint")
    p.add_argument("--prompt-file")
    p.add_argument("--limit", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--retries", type=int)
    p.add_argument("--max-in-flight", type=int)
    return parser


_NOT_OPTIONS = {"command", "analysis", "config", "out_dir", "verbose"}


def resolve(args: argparse.Namespace) -> RunConfig:
    command = args.analysis if args.command == "analyze" else args.command
    file_opts: dict[str, Any] = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if "options" in loaded:
            if loaded.get("command", command) != command:
                raise UsageError(f"{args.config} is a manifest for {loaded['command']!r}, not {command!r}")
            loaded = loaded["options"]
        file_opts = loaded
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in _NOT_OPTIONS}
    known = set(flags) | {k for k in vars(args) if k not in _NOT_OPTIONS}
    defaults = {k: v for k, v in DEFAULTS.items() if k in known}
    if command == "sweep":
        defaults["epsilon_grid"] = "0.05:0.45:0.05"
    if command == "rr-gap":
        defaults["system"] = "bt"
    unknown = set(file_opts) - known
    if unknown:
        raise UsageError(f"unknown options in config: {', '.join(sorted(unknown))}")
    return RunConfig(command, {**defaults, **file_opts, **flags})


def write_manifest(cfg: RunConfig, out: Path) -> None:
    manifest = {"command": cfg.command, "options": cfg.options, "version": __version__}
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"arena-draws: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve(args)
        diagnostics = validate_config(cfg)
    except UsageError as exc:
        print(f"arena-draws: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for d in diagnostics:
        print(f"arena-draws: {d.level}: {d.message}", file=sys.stderr)
    if any(d.level == "error" for d in diagnostics):
        return EXIT_USAGE

    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[cfg.command](cfg.options, out)
    except NumericalError as exc:
        print(f"arena-draws: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"arena-draws: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArenaError as exc:
        print(f"arena-draws: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    write_manifest(cfg, out)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
