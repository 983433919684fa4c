import json
import os
import re
import subprocess
import sys

import pytest

from ptnoise.cli import main

pytestmark = pytest.mark.filterwarnings("ignore::ptnoise.errors.EmptyClass")

TINY = {
    "world": {"class_count": 3, "shots_per_class": 4, "test_per_class": 10, "pool_per_class": 8,
              "encoder": {"token_dim": 4, "embed_dim": 4, "context_len": 3}},
    "methods": ["PromptTuning", "ClassifierR"],
    "noise": [{"kind": "random", "rate": 0.0}, {"kind": "random", "rate": 0.5}],
    "losses": ["CE", "GCE"],
    "train": {"epochs": 2, "lr": 0.05},
    "upl": {"per_class": 2, "ensemble_size": 2},
    "seeds": [0, 1],
    "confusion_runs": 3,
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def run(*argv):
    return main([str(a) for a in argv])


def without_wall_ms(text):
    return re.sub(r'"wall_ms": \d+', '"wall_ms": 0', text)


def csv_without_wall_ms(text):
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


def test_sweep_rows_and_embedded_config(cfg_path, tmp_path):
    out = tmp_path / "o"
    assert run("sweep", "--config", cfg_path, "--out", out, "--quiet") == 0
    doc = json.loads((out / "sweep.json").read_text())
    assert doc["config"]["command"] == "sweep" and doc["config"]["seeds"] == [0, 1]
    assert doc["config"]["world"]["class_count"] == 3
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# config=")
    assert json.loads(lines[0][len("# config="):]) == doc["config"]
    assert lines[1].startswith("world_seed,method,context_len")
    assert len(lines) - 2 == 2 * 2 * 2 * 2  # seeds x methods x rates x losses


@pytest.mark.parametrize("command", ["sweep", "gradratio", "confusion", "upl", "gen"])
def test_commands_deterministic(cfg_path, tmp_path, command):
    outputs = []
    for attempt in range(2):
        out = tmp_path / "o"
        if attempt and command == "gen":
            os.rename(out, tmp_path / "first")
        assert run(command, "--config", cfg_path, "--out", out, "--quiet") == 0
        files = sorted(os.listdir(out))
        outputs.append({f: without_wall_ms((out / f).read_text()) for f in files})
    if command == "gen":
        outputs[0] = {f: without_wall_ms((tmp_path / "first" / f).read_text()) for f in outputs[0]}
    assert outputs[0].keys() == outputs[1].keys()
    for f in outputs[0]:
        if f.endswith(".csv") and command != "gen":
            assert csv_without_wall_ms(outputs[0][f]) == csv_without_wall_ms(outputs[1][f]), f
        else:
            assert outputs[0][f] == outputs[1][f], f


def test_gen_never_overwrites(cfg_path, tmp_path):
    out = tmp_path / "g"
    assert run("gen", "--config", cfg_path, "--out", out, "--seed", 4, "--quiet") == 0
    files = sorted(os.listdir(out))
    assert "world_seed4.json" in files and "dataset_seed4_train.csv" in files
    before = {f: (out / f).read_bytes() for f in files}
    assert run("gen", "--config", cfg_path, "--out", out, "--seed", 4, "--quiet") == 2
    assert {f: (out / f).read_bytes() for f in files} == before
    side = json.loads((out / "dataset_seed4_train.json").read_text())
    assert side["seed"] == 4 and side["config"]["seeds"] == [4]


def test_report_rerender_is_identical(cfg_path, tmp_path):
    out = tmp_path / "o"
    assert run("gradratio", "--config", cfg_path, "--out", out, "--quiet") == 0
    original = (out / "gradratio.csv").read_text()
    assert run("report", out / "gradratio.json", "--out", tmp_path / "r", "--quiet") == 0
    first = (tmp_path / "r" / "gradratio.csv").read_text()
    assert first == original
    assert run("report", out / "gradratio.json", "--out", tmp_path / "r", "--quiet") == 0
    assert (tmp_path / "r" / "gradratio.csv").read_text() == first


def test_confusion_writes_matrices(cfg_path, tmp_path):
    out = tmp_path / "o"
    assert run("confusion", "--config", cfg_path, "--out", out, "--seed", 2, "--quiet") == 0
    doc = json.loads((out / "confusion_matrix.json").read_text())
    m = doc["matrices"]["2"]
    assert len(m) == 3 and all(abs(sum(r) - 1) < 1e-9 for r in m)
    rows = (out / "confusion.csv").read_text().splitlines()[2:]
    assert {r.split(",")[3] for r in rows} == {"confusion"}


def test_upl_reports_precision(cfg_path, tmp_path):
    out = tmp_path / "o"
    assert run("upl", "--config", cfg_path, "--out", out, "--seed", 0, "--quiet") == 0
    doc = json.loads((out / "upl.json").read_text())
    assert len(doc["reports"]) == 4 and all(r["pseudo_precision"] is not None for r in doc["reports"])
    assert doc["config"]["upl"]["per_class"] == 2


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"train": {"momentum": 1.5}}')
    assert run("sweep", "--config", bad) == 1
    assert "train.momentum" in capsys.readouterr().err
    bad.write_text('{"train": ')
    assert run("sweep", "--config", bad) == 1
    assert run("sweep", "--config", tmp_path / "missing.json") == 1
    assert run("report", tmp_path / "missing.json", "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_failed_cells_exit_2_with_coordinates(tmp_path, capsys):
    doc = dict(TINY, world=dict(TINY["world"], encoder=dict(TINY["world"]["encoder"], temperature=1e-5)),
               methods=["ClassifierR"], losses=["CE"], seeds=[0])
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert run("sweep", "--config", p, "--out", tmp_path / "o", "--quiet") == 2
    err = capsys.readouterr().err
    assert "seed=0 method=ClassifierR noise=random@" in err and "DegenerateProbability" in err
    assert (tmp_path / "o" / "sweep.json").exists()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ptnoise", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gradratio" in r.stdout
