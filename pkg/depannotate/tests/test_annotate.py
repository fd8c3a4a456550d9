import json
import shutil
import subprocess
from pathlib import Path

import pytest

from depannotate import SchemaError, annotate_file, annotate_record, validate_record
from depannotate.annotate import main
from depannotate.parser import parse, span_head

FIXTURE = Path(__file__).parent / "fixtures" / "sentences.jsonl"


def read_records(path):
    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]


# ------------------------------------------------------------ fixture runs

def test_fixture_annotation_schema_and_head_words(tmp_path):
    out = tmp_path / "annotated.jsonl"
    count = annotate_file(FIXTURE, out)
    records = read_records(out)
    assert count == len(records) == 50
    for rec in records:
        validate_record(rec)  # includes dep_path bounds
        assert "dep_path" in rec
        n = len(rec["tokens"])
        path = rec["dep_path"]
        assert all(0 <= i < n for i in path)
        assert path == sorted(path)
        # both entity head words are on the path
        tree = parse(rec["tokens"])
        assert span_head(tree, tuple(rec["head"])) in path
        assert span_head(tree, tuple(rec["tail"])) in path


def test_rerun_without_overwrite_is_fixed_point(tmp_path):
    first = tmp_path / "first.jsonl"
    second = tmp_path / "second.jsonl"
    annotate_file(FIXTURE, first)
    annotate_file(first, second)
    assert first.read_bytes() == second.read_bytes()


def test_annotation_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    annotate_file(FIXTURE, a)
    annotate_file(FIXTURE, b)
    assert a.read_bytes() == b.read_bytes()


def test_record_counts_match(tmp_path):
    out = tmp_path / "out.jsonl"
    n_in = len(read_records(FIXTURE))
    assert annotate_file(FIXTURE, out) == n_in
    assert len(read_records(out)) == n_in


# -------------------------------------------------------------- pass-through

def test_already_annotated_passes_through_verbatim(tmp_path):
    # odd spacing and key order must survive byte-for-byte
    line = ('{"relation": "r",   "tokens": ["Anna", "works", "at", "Acme"], '
            '"dep_path": [1, 2], "head": [0,1], "tail": [3,4]}')
    src = tmp_path / "in.jsonl"
    src.write_text(line + "\n")
    out = tmp_path / "out.jsonl"
    annotate_file(src, out)
    assert out.read_text() == line + "\n"


def test_overwrite_recomputes(tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text(json.dumps({
        "tokens": ["Anna", "works", "at", "Acme"],
        "head": [0, 1], "tail": [3, 4], "relation": "r",
        "dep_path": [0],  # stale annotation
    }) + "\n")
    out = tmp_path / "out.jsonl"
    annotate_file(src, out, overwrite=True)
    rec = read_records(out)[0]
    assert rec["dep_path"] == [0, 1, 2, 3]


def test_unparseable_record_gets_empty_path_and_warning(tmp_path, monkeypatch, caplog):
    import depannotate.annotate as mod
    def boom(tokens, head, tail):
        raise RuntimeError("no parse")
    monkeypatch.setattr(mod, "dependency_path", boom)
    src = tmp_path / "in.jsonl"
    src.write_text(json.dumps({"tokens": ["Anna", "works"], "head": [0, 1],
                               "tail": [1, 2], "relation": "r"}) + "\n")
    out = tmp_path / "out.jsonl"
    with caplog.at_level("WARNING", logger="depannotate"):
        annotate_file(src, out)
    assert read_records(out)[0]["dep_path"] == []
    assert any("empty dep_path" in r.message for r in caplog.records)


# ------------------------------------------------------------------ schema

def test_schema_violation_raises_with_line(tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text('{"tokens": ["a"], "head": [0, 5], "tail": [0, 1], "relation": "r"}\n')
    with pytest.raises(SchemaError, match="line 1"):
        annotate_file(src, tmp_path / "out.jsonl")


def test_invalid_json_raises(tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text("{nope\n")
    with pytest.raises(SchemaError, match="line 1"):
        annotate_file(src, tmp_path / "out.jsonl")


def test_annotate_record_replaces_existing():
    rec = {"tokens": ["Anna", "works"], "head": [0, 1], "tail": [1, 2],
           "relation": "r", "dep_path": [9]}
    out = annotate_record(rec)
    assert out["dep_path"] == [0, 1]


# --------------------------------------------------------------------- cli

def test_cli_roundtrip(tmp_path):
    out = tmp_path / "out.jsonl"
    assert main(["--in", str(FIXTURE), "--out", str(out)]) == 0
    assert len(read_records(out)) == 50


def test_cli_missing_input(tmp_path):
    assert main(["--in", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")]) == 1


def test_cli_overwrite_flag(tmp_path):
    first = tmp_path / "first.jsonl"
    assert main(["--in", str(FIXTURE), "--out", str(first)]) == 0
    again = tmp_path / "again.jsonl"
    assert main(["--in", str(first), "--out", str(again), "--overwrite"]) == 0
    # deterministic parser: recomputing yields the same annotations
    assert first.read_bytes() == again.read_bytes()


def test_cli_schema_error_exit_code(tmp_path):
    src = tmp_path / "bad.jsonl"
    src.write_text('{"tokens": [], "head": [0,1], "tail": [0,1], "relation": "r"}\n')
    assert main(["--in", str(src), "--out", str(tmp_path / "o.jsonl")]) == 1


# ------------------------------------------- integration with the producer

@pytest.mark.skipif(shutil.which("osre") is None, reason="corpus generator CLI not installed")
def test_annotates_freshly_generated_corpus(tmp_path):
    spec = tmp_path / "split.json"
    spec.write_text(json.dumps({"n_known": 3, "n_val_unknown": 1, "n_test_unknown": 1,
                                "instances_per_relation": 5, "noise_rate": 0.1,
                                "seed": 3}))
    data = tmp_path / "data"
    subprocess.run(["osre", "gen-data", "--spec", str(spec), "--out", str(data)],
                   check=True)
    out = tmp_path / "train.annotated.jsonl"
    assert main(["--in", str(data / "train.jsonl"), "--out", str(out)]) == 0
    for rec in read_records(out):
        validate_record(rec)
        assert "dep_path" in rec and rec["dep_path"]
