import json
import shutil
import time
from pathlib import Path

import pytest

from timer_bench import cli
from timer_bench.artifacts import read_json, read_jsonl
from timer_bench.genpipe import InstructionPair

PIPELINE_INI = """\
[run]
seed = 7

[synth]
patients = 50
visits = 3,12

[generation]
mode = benchmark
min_evidence = 2

[sample]
uniform_n = 30
edge_n = 40

[evaluate]
n_resamples = 200
sample_size = 20
"""

STEPS = [
    ["synth"],
    ["ingest"],
    ["chunk"],
    ["generate"],
    ["analyze"],
    ["filter", "--k", "2"],
    ["benchmark"],
    ["evaluate"],
    ["judge"],
]


def write_config(tmp_path: Path, text: str) -> str:
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return str(path)


def run(out: Path, *args: str, config: str = None) -> int:
    argv = [args[0], "--out", str(out), *args[1:]]
    if config:
        argv += ["--config", config]
    return cli.main(argv)


def run_pipeline(out: Path, config: str) -> None:
    for step in STEPS:
        assert run(out, *step, "--mock", config=config) == cli.EXIT_OK, step


# --- End to end ---

def test_full_pipeline_with_mock_provider(tmp_path):
    config = write_config(tmp_path, PIPELINE_INI)
    out = tmp_path / "out"
    started = time.perf_counter()
    run_pipeline(out, config)

    assert len(list(read_jsonl(out / cli.TIMELINES))) == 50
    chunks = cli.load_chunks(out / cli.CHUNKS)
    pairs = [InstructionPair.from_json(row) for row in read_jsonl(out / cli.PAIRS)]
    assert pairs
    for pair in pairs:
        assert set(pair.evidence.dates) <= set(chunks[pair.chunk_ref].visit_dates)

    uniform = {row["pair_id"] for row in read_jsonl(out / "benchmark_uniform.jsonl")}
    edge = {row["pair_id"] for row in read_jsonl(out / "benchmark_edge.jsonl")}
    assert uniform and edge
    assert uniform.isdisjoint(edge)

    evaluation = read_json(out / cli.EVALUATION)
    assert set(evaluation["metrics"]) == {"all", "edge", "uniform"}
    assert evaluation["scored"] == len(uniform | edge)
    assert (out / cli.SCORES).read_text(encoding="utf-8").startswith(",".join(cli.SCORE_COLUMNS))

    judge = read_json(out / cli.JUDGE_SUMMARY)
    assert judge["overall"]["judged"] == len(uniform | edge)

    # same responses on both sides: the overlap judge can only call ties
    shutil.copy(out / cli.RESPONSES, tmp_path / "responses_b.jsonl")
    assert run(out, "head2head", "--mock", "--b", str(tmp_path / "responses_b.jsonl"), config=config) == cli.EXIT_OK
    assert read_json(out / cli.HEAD2HEAD_SUMMARY)["tie_pct"] == 100.0

    assert run(out, "report", config=config) == cli.EXIT_OK
    report = read_json(out / cli.REPORT)
    assert set(report) == {"evaluation", "analysis", "judge", "head2head"}
    assert "rouge_l" in (out / cli.REPORT_TEXT).read_text(encoding="utf-8")
    assert time.perf_counter() - started < 60

    steps = read_json(out / "manifest.json")["steps"]
    assert {"synth", "generate", "benchmark", "respond", "evaluate", "judge", "report"} <= set(steps)


def test_same_seed_gives_identical_manifests(tmp_path):
    config = write_config(tmp_path, PIPELINE_INI)
    run_pipeline(tmp_path / "a", config)
    run_pipeline(tmp_path / "b", config)

    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    assert (tmp_path / "a" / cli.PAIRS).read_bytes() == (tmp_path / "b" / cli.PAIRS).read_bytes()


def test_sample_and_export_tuning_set(tmp_path):
    out = tmp_path / "out"
    for step in (["synth"], ["ingest"], ["chunk"], ["generate"]):
        assert run(out, *step, "--mock", "--seed", "3") == cli.EXIT_OK

    assert run(out, "sample", "--strategy", "edge", "--n", "20", "--seed", "3") == cli.EXIT_OK
    assert run(out, "export", "--strategy", "edge", "--seed", "3") == cli.EXIT_OK

    rows = list(read_jsonl(out / "tuning_edge.jsonl"))
    assert len(rows) == 20
    assert all(set(row) == {"instruction", "output"} for row in rows)
    assert read_json(out / "tuning_edge.meta.json")["spec"]["strategy"] == "edge"


# --- Single subcommands ---

def test_analyze_prints_the_label(tmp_path, capsys):
    out = tmp_path / "out"
    out.mkdir()
    rows = [{"pair_id": f"q{i}", "positions": [0.8 + i / 100]} for i in range(10)]
    (out / cli.POSITIONS).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")

    assert run(out, "analyze") == cli.EXIT_OK
    assert "label: recency" in capsys.readouterr().out
    assert read_json(out / cli.ANALYSIS)["region_fractions"]["frac_last_quarter"] == 1.0
    assert (out / cli.HISTOGRAM_CSV).exists()


def test_bad_event_rows_are_a_partial_failure(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "events.csv").write_text(
        "patient_id,timestamp,event_type,code,value,text\n"
        "p1,2020-01-05,note,,,Visit on 2020-01-05.\n"
        "p1,not-a-date,note,,,broken\n",
        encoding="utf-8",
    )

    assert run(out, "ingest") == cli.EXIT_PARTIAL
    errors = list(read_jsonl(out / cli.INGEST_ERRORS))
    assert errors == [{"line": 3, "error": "invalid timestamp, line 3"}]
    assert len(list(read_jsonl(out / cli.TIMELINES))) == 1


def test_control_characters_stop_at_ingest(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "events.csv").write_text(
        "patient_id,timestamp,event_type,code,value,text\n"
        "p1,2020-01-05,note,,,pasted\x0bform feed\n"
        "p2,2020-01-05,note,,,Visit on 2020-01-05.\n"
        "p2,2020-03-05,condition,C34.90,,lung cancer dx\n",
        encoding="utf-8",
    )

    assert run(out, "ingest") == cli.EXIT_PARTIAL
    errors = list(read_jsonl(out / cli.INGEST_ERRORS))
    assert [e["line"] for e in errors] == [2]
    assert [t["patient_id"] for t in read_jsonl(out / cli.TIMELINES)] == ["p2"]

    assert run(out, "chunk") == cli.EXIT_OK
    assert run(out, "generate", "--mock") == cli.EXIT_OK
    assert list(read_jsonl(out / cli.PAIRS))


def test_report_before_evaluate_is_a_usage_error(tmp_path, capsys):
    assert run(tmp_path / "out", "report") == cli.EXIT_USAGE
    assert "missing inputs: evaluation.json" in capsys.readouterr().err


def test_benchmark_commands_need_benchmark_files(tmp_path, capsys):
    assert run(tmp_path / "out", "evaluate", "--mock") == cli.EXIT_USAGE
    assert "benchmark_*.jsonl" in capsys.readouterr().err


# --- Configuration ---

def test_credentials_in_config_are_refused(tmp_path, capsys):
    config = write_config(tmp_path, "[judge]\napi_key = sk-live\n")

    assert run(tmp_path / "out", "synth", config=config) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "config error: judge.api_key: credentials are read from TIMER_PROVIDER_<NAME>_KEY" in err
    assert "sk-live" not in err


def test_unknown_setting_is_refused(tmp_path, capsys):
    config = write_config(tmp_path, "[sample]\nbuckets = 4\n")
    assert run(tmp_path / "out", "synth", config=config) == cli.EXIT_USAGE
    assert "config error: sample.buckets: unknown setting" in capsys.readouterr().err


def test_flag_values_are_validated(tmp_path, capsys):
    assert run(tmp_path / "out", "sample", "--bins", "1") == cli.EXIT_USAGE
    assert "config error: bins: must be >= 2" in capsys.readouterr().err


def test_flags_override_the_file(tmp_path):
    config = write_config(tmp_path, "[run]\nseed = 1\n[sample]\nn = 10\n")
    cfg = cli.load_run_config(config, {"seed": 5, "n": None})

    assert (cfg.seed, cfg.n) == (5, 10)


def test_ranges_parse_from_ini(tmp_path):
    config = write_config(tmp_path, "[synth]\nvisits = 4,4\nspan_days = 30\n")
    cfg = cli.load_run_config(config)

    assert cfg.visits_per_patient == (4, 4)
    assert cfg.span_days == (30, 30)


def test_missing_config_file(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.load_run_config(str(tmp_path / "absent.ini"))
