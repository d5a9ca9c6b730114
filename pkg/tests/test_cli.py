import csv
import json

import pytest

from ctsp.cli import main
from ctsp.enumeration import read_jsonl
from ctsp.harness import RECORD_FIELDS
from ctsp.model import Instance


@pytest.fixture
def pop_file(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"count": 8, "seed": 3, "extent": 4000.0}))
    out = tmp_path / "pop.json"
    assert main(["gen", "--spec", str(spec), "--out", str(out)]) == 0
    return out


def test_gen_writes_loadable_instance(pop_file):
    inst = Instance.load(pop_file)
    assert inst.n == 8


def test_solvers_agree_and_emit_json_and_stats(pop_file, tmp_path):
    keys = {}
    stats = tmp_path / "stats.csv"
    for cmd in ("solve-rea", "solve-bpa"):
        out = tmp_path / f"{cmd}.json"
        extra = ["--threads", "1"] if cmd == "solve-bpa" else []
        assert main([cmd, "--instance", str(pop_file), "--out", str(out), "--stats", str(stats)] + extra) == 0
        sol = json.loads(out.read_text())
        assert set(sol) == {"routes", "vehicle_count", "total_distance", "objective", "gap"}
        keys[cmd] = (sol["vehicle_count"], sol["total_distance"])
    assert keys["solve-rea"] == keys["solve-bpa"]
    with stats.open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == RECORD_FIELDS and len(rows) == 2


def test_heuristic_command(pop_file, tmp_path, capsys):
    assert main(["heuristic", "--instance", str(pop_file), "--t-rmp", "5", "--t-mip", "5",
                 "--relax-forbidden"]) == 0
    sol = json.loads(capsys.readouterr().out)
    assert sol["vehicle_count"] * 2 == len(sol["routes"])


def test_enumerate_and_cluster(pop_file, tmp_path):
    routes = tmp_path / "routes.jsonl"
    assert main(["enumerate", "--instance", str(pop_file), "--out", str(routes), "--capacity", "2"]) == 0
    rows = read_jsonl(routes)
    assert rows and all(len(r["riders"]) <= 2 for r in rows)
    assert {r["direction"] for r in rows} == {"inbound", "outbound"}
    out_dir = tmp_path / "clusters"
    assert main(["cluster", "--instance", str(pop_file), "--max-size", "3", "--restarts", "4",
                 "--seed", "7", "--out-dir", str(out_dir)]) == 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert len(manifest["clusters"]) == 3
    assert max(e["size"] for e in manifest["clusters"]) <= 3


def test_bench(tmp_path, pop_file):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"population": pop_file.name, "algorithms": ["rea"], "K": [1, 2], "N": [4],
                                "delta_min": [10], "ratio": [0.5], "restarts": 2}))
    out = tmp_path / "results"
    assert main(["bench", "--grid", str(grid), "--out", str(out)]) == 0
    with (out / "runs.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 4
