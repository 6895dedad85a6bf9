"""CLI surface: dataset generation, commitment, local runs, bench output."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from authpsi import datasets, merkle
from authpsi.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def _gen(runner, tmp_path, count=32, parties=2, overlap=8, seed=7):
    prefix = str(tmp_path / "p")
    result = runner.invoke(main, ["gen", "--count", str(count), "--elem-bytes", "8",
                                  "--seed", str(seed), "--parties", str(parties),
                                  "--overlap", str(overlap), "--out-prefix", prefix])
    assert result.exit_code == 0, result.output
    return prefix


def _commit_all(runner, prefix, parties, salt):
    for i in range(1, parties + 1):
        result = runner.invoke(main, ["commit", "--in", f"{prefix}{i}.dat",
                                      "--salt", salt, "--out", f"{prefix}{i}.root"])
        assert result.exit_code == 0, result.output


def _config(tmp_path, prefix, parties, salt, extra=None):
    cfg = {
        "session_id": salt,
        "salted": True,
        "dealer": {"address": "127.0.0.1:0"},
        "parties": {str(i): {"address": "127.0.0.1:0",
                             "dataset": f"{prefix}{i}.dat",
                             "root": f"{prefix}{i}.root"}
                    for i in range(1, parties + 1)},
    }
    if parties == 2:
        cfg["parties"]["1"]["role"] = "receiver"
        cfg["parties"]["2"]["role"] = "sender"
    cfg.update(extra or {})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_gen_deterministic_and_overlap_exact(runner, tmp_path):
    prefix = _gen(runner, tmp_path, count=50, overlap=20)
    a = datasets.read_dataset(f"{prefix}1.dat")
    b = datasets.read_dataset(f"{prefix}2.dat")
    core = datasets.read_dataset(f"{prefix}_core.dat")
    assert len(a) == len(b) == 50
    assert set(a) & set(b) == set(core)
    assert len(core) == 20
    # same seed, byte-identical files
    prefix2 = str(tmp_path / "q")
    runner.invoke(main, ["gen", "--count", "50", "--elem-bytes", "8", "--seed", "7",
                         "--parties", "2", "--overlap", "20", "--out-prefix", prefix2])
    assert Path(f"{prefix}1.dat").read_bytes() == Path(f"{prefix2}1.dat").read_bytes()


def test_gen_zero_overlap(runner, tmp_path):
    prefix = _gen(runner, tmp_path, count=30, overlap=0, seed=9)
    a = datasets.read_dataset(f"{prefix}1.dat")
    b = datasets.read_dataset(f"{prefix}2.dat")
    assert set(a).isdisjoint(b)


def test_gen_usage_errors(runner, tmp_path):
    bad = runner.invoke(main, ["gen", "--count", "4", "--overlap", "9",
                               "--out-prefix", str(tmp_path / "x")])
    assert bad.exit_code == 2


def test_commit_matches_library(runner, tmp_path):
    prefix = _gen(runner, tmp_path)
    salt = "ab" * 16
    _commit_all(runner, prefix, 2, salt)
    root = merkle.MerkleRoot.from_bytes(Path(f"{prefix}1.root").read_bytes())
    elements = datasets.read_dataset(f"{prefix}1.dat")
    assert root == merkle.root(elements, bytes.fromhex(salt))
    # different salt, different root
    result = runner.invoke(main, ["commit", "--in", f"{prefix}1.dat",
                                  "--salt", "cd" * 16, "--out", f"{prefix}alt.root"])
    assert result.exit_code == 0
    assert Path(f"{prefix}alt.root").read_bytes() != Path(f"{prefix}1.root").read_bytes()


def test_commit_rejects_bad_dataset(runner, tmp_path):
    path = tmp_path / "bad.dat"
    path.write_text("count=2 elem_bytes=4\ndeadbeef\n")
    result = runner.invoke(main, ["commit", "--in", str(path), "--salt", "",
                                  "--out", str(tmp_path / "x.root")])
    assert result.exit_code == 2


def test_local_two_party_run(runner, tmp_path):
    prefix = _gen(runner, tmp_path, count=48, overlap=12, seed=3)
    salt = "11" * 16
    _commit_all(runner, prefix, 2, salt)
    cfg = _config(tmp_path, prefix, 2, salt)
    out_dir = tmp_path / "out"
    result = runner.invoke(main, ["run", "--construction", "2pc", "--config", cfg,
                                  "--local", "--out-dir", str(out_dir)])
    assert result.exit_code == 0, result.output
    got = sorted(bytes.fromhex(l) for l in (out_dir / "intersection.txt").read_text().split())
    assert got == sorted(datasets.read_dataset(f"{prefix}_core.dat"))
    report = json.loads((out_dir / "report.json").read_text())
    assert report["aborted"] is False
    assert report["bits_per_element"] > 0
    assert set(report) >= {"session", "n", "parties", "t", "bytes_total",
                           "bits_per_element", "per_type", "setup_bytes",
                           "phase_ms", "aborted"}


def test_local_tampered_run_exits_3(runner, tmp_path):
    prefix = _gen(runner, tmp_path, count=24, overlap=6, seed=4)
    salt = "22" * 16
    _commit_all(runner, prefix, 2, salt)
    cfg = _config(tmp_path, prefix, 2, salt)
    result = runner.invoke(main, ["run", "--construction", "2pc", "--config", cfg,
                                  "--local", "--tamper", "flip-element:5",
                                  "--tamper-party", "2", "--out-dir", str(tmp_path / "out")])
    assert result.exit_code == 3, result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["aborted"] is True


def test_local_multi_party_run(runner, tmp_path):
    prefix = _gen(runner, tmp_path, count=20, parties=4, overlap=5, seed=5)
    salt = "33" * 16
    _commit_all(runner, prefix, 4, salt)
    cfg = _config(tmp_path, prefix, 4, salt, extra={"n": 4, "t": 2})
    out_dir = tmp_path / "outm"
    result = runner.invoke(main, ["run", "--construction", "npc", "--config", cfg,
                                  "--local", "--out-dir", str(out_dir)])
    assert result.exit_code == 0, result.output
    got = sorted(bytes.fromhex(l) for l in (out_dir / "intersection.txt").read_text().split())
    assert got == sorted(datasets.read_dataset(f"{prefix}_core.dat"))


def test_local_multi_party_tamper_exits_3(runner, tmp_path):
    prefix = _gen(runner, tmp_path, count=16, parties=3, overlap=4, seed=6)
    salt = "44" * 16
    _commit_all(runner, prefix, 3, salt)
    cfg = _config(tmp_path, prefix, 3, salt, extra={"n": 3, "t": 1})
    result = runner.invoke(main, ["run", "--construction", "npc", "--config", cfg,
                                  "--local", "--tamper", "swap-proofs:0,3",
                                  "--tamper-party", "3", "--out-dir", str(tmp_path / "o")])
    assert result.exit_code == 3, result.output


def test_stale_root_is_usage_error(runner, tmp_path):
    prefix = _gen(runner, tmp_path, count=16, overlap=4, seed=8)
    salt = "55" * 16
    _commit_all(runner, prefix, 2, salt)
    # regenerate party 1's dataset after committing: honest self-check trips
    runner.invoke(main, ["gen", "--count", "16", "--elem-bytes", "8", "--seed", "99",
                         "--parties", "2", "--overlap", "4", "--out-prefix", prefix])
    cfg = _config(tmp_path, prefix, 2, salt)
    result = runner.invoke(main, ["run", "--construction", "2pc", "--config", cfg,
                                  "--local", "--out-dir", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_bench_smoke(runner, tmp_path):
    out = tmp_path / "bench.json"
    result = runner.invoke(main, ["bench", "--sizes", "64", "--reps", "1",
                                  "--construction", "2pc", "--out", str(out)])
    assert result.exit_code == 0, result.output
    data = json.loads(out.read_text())
    assert data["aggregated"] is False
    assert data["two_party"][0]["n"] == 64
    assert data["two_party"][0]["bits_per_element"] > 0

    csv_out = tmp_path / "bench.csv"
    result = runner.invoke(main, ["bench", "--sizes", "64", "--reps", "1",
                                  "--construction", "2pc", "--out", str(csv_out)])
    assert result.exit_code == 0
    assert csv_out.read_text().startswith("construction,n,median_ms")
