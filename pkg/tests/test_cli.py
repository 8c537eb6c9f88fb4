import json

import numpy as np
import pytest

from disttomo import presets as P
from disttomo.cli import main

TREE_LINKS = [{"weights": list(w)} for w in P.TREE_WEIGHTS]
GENERAL_LINKS = [{"weights": list(w)} for w in P.GENERAL_WEIGHTS]


def write_config(tmp_path, name="cfg.json", **over):
    cfg = {
        "schema_version": 1,
        "mode": "gh",
        "topology": {"paths": [[0, 1], [0, 2]], "num_links": 3},
        "basis_rates": list(P.RATES),
        "links": TREE_LINKS,
        "L": 2000,
        "seed": 1,
        "out": str(tmp_path / "out"),
    }
    cfg.update(over)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 7


def test_ideal_run(tmp_path, capsys):
    cfg = write_config(tmp_path, tau={"grids": [list(t) for t in P.TREE_TAU]})
    assert main(["run", "--config", str(cfg), "--ideal"]) == 0
    out = capsys.readouterr().out
    assert "error norm" in out
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    est = np.array([l["weights"][:2] for l in report["links"]])
    assert np.allclose(est, np.array(P.free_weights(P.TREE_WEIGHTS)), atol=1e-6)
    assert not (tmp_path / "out" / "samples").exists()


def test_simulate_row_counts(tmp_path):
    cfg = write_config(tmp_path, topology={"matrix": [list(r) for r in P.GENERAL.entries]}, links=GENERAL_LINKS, L=1500)
    assert main(["simulate", "--config", str(cfg)]) == 0
    files = sorted((tmp_path / "out" / "samples").glob("path_*.txt"))
    assert len(files) == 3
    for f in files:
        assert len(np.loadtxt(f)) == 1500


def test_empty_path_list(tmp_path, capsys):
    cfg = write_config(tmp_path, topology={"paths": [], "num_links": 3})
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json")]) == 2


def test_bad_schema_version(tmp_path):
    assert main(["run", "--config", str(write_config(tmp_path, schema_version=7))]) == 2


def test_invalid_link_model(tmp_path, capsys):
    links = [{"weights": [-1.0, 0.0, 2.0]}] + TREE_LINKS[1:]
    assert main(["simulate", "--config", str(write_config(tmp_path, links=links))]) == 2
    assert "link 0" in capsys.readouterr().err


def test_duplicate_tau_rejected(tmp_path):
    cfg = write_config(tmp_path, tau={"grids": [[1.0, 1.0, 2.0, 3.0], [0.1, 0.2, 0.3, 0.4]]})
    assert main(["estimate", "--config", str(cfg), "--ideal"]) == 2


def test_explicit_tau_file(tmp_path):
    tau = tmp_path / "tau.json"
    tau.write_text(json.dumps([list(t) for t in P.TREE_TAU]))
    cfg = write_config(tmp_path)
    assert main(["estimate", "--config", str(cfg), "--ideal", "--tau-file", str(tau)]) == 0
    saved = json.loads((tmp_path / "out" / "tau.json").read_text())
    assert saved == [list(t) for t in P.TREE_TAU]


def test_missing_solutions(tmp_path, capsys):
    assert main(["match", "--config", str(write_config(tmp_path))]) == 2
    assert "solutions" in capsys.readouterr().err


def test_missing_report(tmp_path):
    assert main(["report", "--config", str(write_config(tmp_path))]) == 2


def test_estimate_replay_bit_exact(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert main(["estimate", "--config", str(cfg)]) == 0
    first = (tmp_path / "out" / "targets.json").read_bytes()
    assert main(["estimate", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "targets.json").read_bytes() == first


def test_sampled_run_deterministic(tmp_path):
    manifests = []
    for k in range(2):
        cfg = write_config(tmp_path, name=f"c{k}.json", out=str(tmp_path / f"out{k}"), L=20_000)
        assert main(["run", "--config", str(cfg)]) in (0, 3)
        m = json.loads((tmp_path / f"out{k}" / "manifest.json").read_text())
        manifests.append(m["files"])
    assert manifests[0] == manifests[1]
    assert "report.json" in manifests[0]


def test_expmean_ideal(tmp_path, capsys):
    cfg = write_config(tmp_path, mode="expmean", links=[{"mean": 2.0}, {"mean": 0.5}, {"mean": 1.3}])
    del_keys = json.loads(cfg.read_text())
    del_keys.pop("basis_rates")
    cfg.write_text(json.dumps(del_keys))
    assert main(["run", "--config", str(cfg), "--ideal"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["error_norm"] <= 1e-8
