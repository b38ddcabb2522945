import json

import pytest

from cooprag.cli import main
from cooprag.toy import ITEMS


def test_ask_and_eval(toy_workspace, capsys):
    assert main(["ask", "--config", str(toy_workspace), ITEMS[1].example.question]) == 0
    assert capsys.readouterr().out.strip() == "Lanmere"
    assert main(["eval", "--config", str(toy_workspace), "--workers", "1"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["em"] == 1.0 and summary["counts"]["failed"] == 0


def test_ingest_and_build_index(toy_workspace, tmp_path, capsys):
    cfg = str(toy_workspace)
    assert main(["ingest", "--config", cfg, "--store", str(tmp_path / "s.crle")]) == 0
    assert main(["build-index", "--config", cfg, "--store", str(tmp_path / "s.crle"), "--index", str(tmp_path / "i.crfi")]) == 0
    assert "indexed 10 documents" in capsys.readouterr().out


def test_rerank_bench(toy_workspace, capsys):
    assert main(["rerank-bench", "--config", str(toy_workspace), "--query", "Marlow Fenwick", "--candidates", "d01,d02,d08"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"candidate_layers", "naive-gap", "gap-weighted", "token-contrast", "plain-maxsim"}
    assert sorted(d for d, _ in out["plain-maxsim"]) == ["d01", "d02", "d08"]


def test_loss_check(capsys):
    assert main(["loss-check", "--batches", "5"]) == 0
    assert "ok" in capsys.readouterr().out


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["eval", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert "error:" in capsys.readouterr().err


def test_bad_flag_value():
    with pytest.raises(SystemExit):
        main(["eval", "--rerank-strategy", "nope"])
