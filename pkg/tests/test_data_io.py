import io
import json
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arena_draws.data_io import (
    AnnotatorConfig,
    SchemaMapping,
    annotate_via_llm,
    parse_annotations,
    parse_battles,
    parse_score_pair,
    read_experiment_report,
    write_annotations,
    write_battles,
    write_report,
)
from arena_draws.analysis import rr_by_gap_values
from arena_draws.domain import Annotation, Battle, BattleStream, Outcome
from arena_draws.errors import ArenaError, DataError, DomainError
from arena_draws.prequential import CurvePoint, MetricsReport, run_experiment
from arena_draws.rating_systems import all_systems
from arena_draws.simulator import SimulatorConfig, simulate

W, D, L = Outcome.WIN_A, Outcome.DRAW, Outcome.WIN_B


def jsonl(*rows):
    return "".join(json.dumps(r) + "\n" for r in rows).encode()


class TestParseBattles:
    def test_basic_jsonl(self):
        src = jsonl(
            {"battle_id": "1", "model_a": "x", "model_b": "y", "winner": "model_a"},
            {"battle_id": "2", "model_a": "x", "model_b": "y", "winner": "tie"},
            {"battle_id": "3", "model_a": "y", "model_b": "x", "winner": "model_b"},
        )
        stream = parse_battles(src, "jsonl")
        assert [b.outcome for b in stream] == [W, D, L]
        assert [b.timestamp for b in stream] == [0, 1, 2]

    def test_lmarena_schema(self):
        src = jsonl(
            {
                "question_id": "q1",
                "tstamp": 1712.5,
                "model_a": "gpt",
                "model_b": "llama",
                "winner": "tie (bothbad)",
                "conversation_a": [{"role": "user", "content": "hi"}, {"role": "assistant", "content": "hello"}],
            },
            {"question_id": "q2", "tstamp": 1713.0, "model_a": "gpt", "model_b": "llama", "winner": "model_b"},
        )
        stream = parse_battles(src, "jsonl", SchemaMapping.lmarena())
        assert stream[0].outcome is D and stream[0].query_text == "hi"
        assert stream[0].timestamp == 1712.5
        dropped = parse_battles(src, "jsonl", SchemaMapping.lmarena(drop_bothbad=True))
        assert [b.battle_id for b in dropped] == ["q2"]

    def test_csv(self):
        src = b"battle_id,timestamp,model_a,model_b,winner,query\nz1,10,a,b,model_a,what\nz2,11,b,a,tie,\n"
        stream = parse_battles(src, "csv")
        assert [b.outcome for b in stream] == [W, D]
        assert stream[0].query_text == "what"
        assert stream[1].timestamp == 11
        assert stream[1].query_text is None

    def test_self_play_names_row(self):
        src = jsonl({"battle_id": "1", "model_a": "x", "model_b": "x", "winner": "tie"})
        with pytest.raises(DataError, match="line 1"):
            parse_battles(src)

    def test_unknown_token_names_line(self):
        src = jsonl(
            {"battle_id": "1", "model_a": "x", "model_b": "y", "winner": "tie"},
            {"battle_id": "2", "model_a": "x", "model_b": "y", "winner": "both great"},
        )
        with pytest.raises(DataError, match="line 2.*both great"):
            parse_battles(src)

    def test_missing_field(self):
        with pytest.raises(DataError, match="model_b"):
            parse_battles(jsonl({"battle_id": "1", "model_a": "x", "winner": "tie"}))

    def test_duplicate_id(self):
        row = {"battle_id": "1", "model_a": "x", "model_b": "y", "winner": "tie"}
        with pytest.raises(DataError, match="duplicate"):
            parse_battles(jsonl(row, row))

    def test_unsorted_timestamps_are_sorted(self, caplog):
        src = jsonl(
            {"battle_id": "1", "timestamp": 5, "model_a": "x", "model_b": "y", "winner": "tie"},
            {"battle_id": "2", "timestamp": 3, "model_a": "x", "model_b": "y", "winner": "tie"},
            {"battle_id": "3", "timestamp": 5, "model_a": "y", "model_b": "x", "winner": "tie"},
        )
        stream = parse_battles(src)
        assert [b.battle_id for b in stream] == ["2", "1", "3"]
        assert "stable sort" in caplog.text

    def test_custom_mapping_from_dict(self):
        mapping = SchemaMapping.from_dict(
            {
                "fields": {"model_a": "left", "model_b": "right", "outcome": "label", "battle_id": None},
                "outcome_vocabulary": {"L": "WIN_A", "R": "WIN_B", "=": "DRAW"},
            }
        )
        stream = parse_battles(jsonl({"left": "p", "right": "q", "label": "="}), "jsonl", mapping)
        assert stream[0].outcome is D
        assert stream[0].battle_id == "row-1"
        assert SchemaMapping.from_dict(mapping.to_dict()) == mapping

    def test_mapping_requires_outcome(self):
        with pytest.raises(DataError):
            SchemaMapping({"model_a": "a", "model_b": "b"})

    def test_bad_json(self):
        with pytest.raises(DataError, match="line 1"):
            parse_battles(b"{nope\n")


# NUL cannot be written by the stdlib csv module on this Python.
query_chars = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"), max_size=20)

battle_rows = st.lists(
    st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd"), st.sampled_from(list(Outcome)), query_chars),
    max_size=30,
)


@given(battle_rows, st.sampled_from(["jsonl", "csv"]))
@settings(max_examples=50)
def test_battle_round_trip(rows, fmt):
    battles = [
        Battle(f"id{i}", i, a, b, y, q or None) for i, (a, b, y, q) in enumerate(rows) if a != b
    ]
    buf = io.StringIO()
    write_battles(battles, buf, fmt)
    parsed = parse_battles(buf.getvalue().encode(), fmt)
    assert list(parsed) == battles
    again = io.StringIO()
    write_battles(parsed, again, fmt)
    assert again.getvalue() == buf.getvalue()


@pytest.mark.parametrize("query", ["\r", "a\r0", "x\r\ny", 'say "hi", ok'])
def test_csv_awkward_queries(query):
    battles = [Battle("1", 0, "a", "b", D, query)]
    buf = io.StringIO()
    write_battles(battles, buf, "csv")
    assert list(parse_battles(buf.getvalue().encode(), "csv")) == battles


class TestAnnotations:
    def test_single(self):
        (a,) = parse_annotations(jsonl({"battle_id": "x", "difficulty": 0, "subjectivity": 5}))
        assert a == Annotation("x", 0, 5)

    def test_out_of_range(self):
        with pytest.raises(DataError, match="line 1.*difficulty"):
            parse_annotations(jsonl({"battle_id": "x", "difficulty": 6, "subjectivity": 1}))

    def test_non_integer(self):
        with pytest.raises(DataError):
            parse_annotations(jsonl({"battle_id": "x", "difficulty": 2.5, "subjectivity": 1}))

    def test_last_wins(self, caplog):
        anns = parse_annotations(
            jsonl(
                {"battle_id": "x", "difficulty": 1, "subjectivity": 1},
                {"battle_id": "x", "difficulty": 2, "subjectivity": 3},
            )
        )
        assert anns == [Annotation("x", 2, 3)]
        assert "duplicate" in caplog.text

    @pytest.mark.parametrize("fmt", ["jsonl", "csv"])
    def test_count_preservation(self, fmt):
        _, anns, _ = simulate(SimulatorConfig(n_battles=3000, seed=1))
        buf = io.StringIO()
        write_annotations(anns, buf, fmt)
        parsed = parse_annotations(buf.getvalue().encode(), fmt)
        assert len(parsed) == 3000
        assert parsed == anns


class TestReports:
    def test_metrics_json_keys(self):
        buf = io.StringIO()
        write_report(MetricsReport(0.5, 0.7, None, 10, 6, 4), "json", buf)
        d = json.loads(buf.getvalue())
        assert set(d) == {"acc", "wl_acc", "draw_acc", "n", "n_wl", "n_draw"}
        assert d["draw_acc"] is None

    def test_curve_csv(self):
        buf = io.StringIO()
        write_report([CurvePoint(0.05, 0.1234567, 0.7), CurvePoint(0.1, 0.2, 0.65)], "csv", buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "epsilon,draw_acc,wl_acc"
        assert lines[1] == "0.05,0.123457,0.7"

    def test_rr_csv_header(self):
        buf = io.StringIO()
        write_report(rr_by_gap_values([1, 2, 3, 4], [True, False, True, True], 2), "csv", buf)
        assert buf.getvalue().startswith("bin,rr,ci_low,ci_high,exposed_draws,exposed_total,unexposed_draws,unexposed_total")

    def test_experiment_round_trip(self):
        stream, _, _ = simulate(SimulatorConfig(n_models=5, n_battles=600, seed=2))
        rep = run_experiment(stream, all_systems())
        buf = io.StringIO()
        write_report(rep, "json", buf)
        back = read_experiment_report(io.StringIO(buf.getvalue()))
        assert len(back.rows) == len(rep.rows)
        for r0, r1 in zip(rep.rows, back.rows):
            for name in ("acc", "wl_acc", "rel_acc", "delta_pct", "p_acc", "p_wl_acc", "epsilon"):
                x0, x1 = getattr(r0, name), getattr(r1, name)
                assert x1 == float(f"{x0:.6g}")
        again = io.StringIO()
        write_report(back, "json", again)
        assert again.getvalue() == buf.getvalue()

    def test_text_is_deterministic(self):
        stream, _, _ = simulate(SimulatorConfig(n_models=5, n_battles=300, seed=2))
        outs = []
        for _ in range(2):
            buf = io.StringIO()
            write_report(run_experiment(stream, all_systems()), "text", buf)
            outs.append(buf.getvalue())
        assert outs[0] == outs[1]
        assert len(outs[0].splitlines()) == 13

    def test_unknown_format(self):
        with pytest.raises(DomainError):
            write_report(MetricsReport(1, 1, 1, 1, 1, 0), "xml", io.StringIO())


# -- annotator ---------------------------------------------------------------


def _queried(n):
    return BattleStream(Battle(f"q{i}", i, "a", "b", D, f"query {i}") for i in range(n))


class TestAnnotator:
    def test_parse_score_pair(self):
        assert parse_score_pair("difficulty: 2, subjectivity: 3") == (2, 3)
        assert parse_score_pair("Subjectivity 4 ... wait, difficulty=1 subjectivity=4") == (1, 4)
        assert parse_score_pair("0 and 5") == (0, 5)
        assert parse_score_pair("7 and 3") is None
        assert parse_score_pair("no numbers") is None

    def test_stub_round_trip(self, stub_server, monkeypatch):
        handler, url = stub_server
        monkeypatch.setenv("ARENA_ANNOTATOR_TOKEN", "secret")
        anns = annotate_via_llm(_queried(5), AnnotatorConfig(url, timeout=5), limit=10)
        assert [(a.difficulty, a.subjectivity) for a in anns] == [(2, 3)] * 5
        body, auth = handler.seen[0]
        assert "query 0" in body["prompt"]
        assert auth == "Bearer secret"

    def test_out_of_range_reply_is_retried_then_skipped(self, stub_server):
        handler, url = stub_server
        handler.reply = "7 and 3"
        with pytest.raises(ArenaError, match="no usable"):
            annotate_via_llm(_queried(2), AnnotatorConfig(url, timeout=5, max_retries=2), limit=2)
        assert len(handler.seen) == 6

    def test_limit(self, stub_server):
        handler, url = stub_server
        anns = annotate_via_llm(_queried(3500), AnnotatorConfig(url, timeout=5, max_in_flight=8), limit=3000, seed=4)
        assert len(anns) == 3000
        assert len({a.battle_id for a in anns}) == 3000

    def test_unreachable_endpoint(self):
        cfg = AnnotatorConfig("http://127.0.0.1:9/none", timeout=0.5, max_retries=0)
        with pytest.raises(ArenaError):
            annotate_via_llm(_queried(1), cfg, limit=1)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            AnnotatorConfig("http://x", timeout=0)
        with pytest.raises(DomainError):
            AnnotatorConfig("http://x", prompt_template="no placeholder")

    def test_requires_query_text(self):
        stream = BattleStream([Battle("1", 0, "a", "b", D)])
        with pytest.raises(DataError):
            annotate_via_llm(stream, AnnotatorConfig("http://x"), limit=1)
