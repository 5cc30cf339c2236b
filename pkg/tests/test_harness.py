import csv
import json

import numpy as np
import pytest

from chipmap.harness import (EXIT_CONFIG, EXIT_OK, ConfigError, ExperimentConfig,
                             ResultsParseError, cmd_gen, cmd_report, eval_seed, load_config,
                             main, read_results, smoke_config)

FAST = {"agent": {"episodes": 3, "batch": 4, "dna_hidden": 4, "dna_head": [4],
                  "d_model": 8, "heads": 2, "trunk": 8},
        "anneal": {"iterations": 200}, "eval_seeds": [0, 1]}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg_path = root / "fast.json"
    cfg_path.write_text(json.dumps(FAST))
    out = root / "run"
    common = ["--smoke", "--config", str(cfg_path), "--out", str(out)]
    codes = [main(["gen", *common]), main(["train", *common, "--quiet"]),
             main(["eval", *common]), main(["report", *common])]
    return out, codes, common


def test_pipeline_exit_codes(pipeline):
    _, codes, _ = pipeline
    assert codes == [EXIT_OK] * 4


def test_gen_writes_smoke_suite(pipeline, tmp_path):
    out, _, _ = pipeline
    assert len(list((out / "circuits").glob("*.json"))) == 12
    again = tmp_path / "again"
    cmd_gen(load_config(out / "../fast.json", True, None), again)
    for f in (out / "circuits").iterdir():
        assert f.read_bytes() == (again / "circuits" / f.name).read_bytes()
    assert (out / "manifest.csv").read_bytes() == (again / "manifest.csv").read_bytes()


def test_full_scale_suite_size(tmp_path):
    cfg = ExperimentConfig()
    assert len(range(*[cfg.suite["scales"][0], cfg.suite["scales"][-1] + 1, 10])) * 3 * \
        cfg.suite["variants"] == 270


def test_results_shape_and_shared_noise(pipeline):
    out, _, _ = pipeline
    rows = read_results(out / "results.csv")
    assert len(rows) == 12 * 2 * 4
    assert all(r["n_inter"] >= 0 and r["wall_ms"] == 0.0 for r in rows)
    hashes = {}
    for r in rows:
        hashes.setdefault((r["circuit_id"], r["seed"]), set()).add(r["noise_hash"])
    assert all(len(h) == 1 for h in hashes.values())


def test_report_means_match_hand_pass(pipeline):
    out, _, _ = pipeline
    with open(out / "results.csv") as fh:
        body = [ln for ln in fh if not ln.startswith("#")]
    data = list(csv.DictReader(body))
    text = (out / "report.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "Method,Fidelity,Ops,Error,Depth"
    table = {ln.split(",")[0]: ln.split(",")[1:] for ln in lines[1:5]}
    assert list(table) == ["agent", "qubo", "greedy", "trivial"]
    for m, cells in table.items():
        for col, cell in zip(("fidelity", "n_inter", "error", "depth"), cells):
            vals = [float(r[col]) for r in data if r["method"] == m]
            mean = sum(vals) / len(vals)
            std = (sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)) ** 0.5
            assert cell == f"{mean:.4f}±{std:.4f}"
    assert "method_a,method_b,metric,t,df,p,d,significant" in lines
    assert any(ln.startswith("anova_metric") for ln in lines)


def test_report_single_method_and_identical(tmp_path):
    header = "method,circuit_id,family,n,seed,fidelity,n_inter,depth,balance,reward,wall_ms\n"
    row = "{m},c1,QFT,4,{s},0.5,{k},3,0,1,0\n"
    (tmp_path / "one.csv").write_text(header + "".join(row.format(m="a", s=s, k=s)
                                                       for s in range(3)))
    text, _, comps = cmd_report(tmp_path / "one.csv", tmp_path)
    assert comps == [] and "anova_metric" not in text
    (tmp_path / "two.csv").write_text(header + "".join(row.format(m=m, s=s, k=s)
                                                       for m in "ab" for s in range(3)))
    _, _, comps = cmd_report(tmp_path / "two.csv", tmp_path)
    assert [c.t for c in comps if c.metric == "n_inter"] == [0.0]


def test_malformed_results_report_line_number(tmp_path):
    header = "method,circuit_id,family,n,seed,fidelity,n_inter,depth,balance,reward,wall_ms\n"
    p = tmp_path / "bad.csv"
    p.write_text("# tag\n" + header + "a,c,QFT,4,0,0.5,1,3,0,1,0\na,c,QFT,4,1,oops,1,3,0,1,0\n")
    with pytest.raises(ResultsParseError, match=":4:"):
        read_results(p)
    assert main(["report", "--out", str(tmp_path), "--results", str(p)]) == EXIT_CONFIG


def test_config_errors(tmp_path):
    assert main(["train", "--out", str(tmp_path / "empty"), "--smoke"]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(ConfigError):
        load_config(bad, True, None)
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["eval", "--smoke", "--out", str(tmp_path / "x"),
                 "--methods", "oracle"]) == EXIT_CONFIG


def test_missing_checkpoint_is_config_error(tmp_path):
    out = tmp_path / "run"
    assert main(["gen", "--smoke", "--out", str(out)]) == EXIT_OK
    assert main(["eval", "--smoke", "--out", str(out), "--methods", "agent"]) == EXIT_CONFIG
    assert main(["eval", "--smoke", "--out", str(out), "--methods", "trivial"]) == EXIT_OK


def test_ablate_flag_recorded(pipeline, tmp_path):
    out, _, common = pipeline
    cfg = [c if c != str(out) else str(tmp_path) for c in common]
    assert main(["gen", *cfg]) == EXIT_OK
    assert main(["train", *cfg, "--quiet", "--ablate", "no-dna"]) == EXIT_OK
    first = (tmp_path / "train" / "metrics.csv").read_text().splitlines()[0]
    assert first == "# ablate=no-dna"


def test_eval_seed_depends_on_all_inputs():
    a = eval_seed(0, "QFT-8-v0", 1)
    assert a == eval_seed(0, "QFT-8-v0", 1)
    assert len({a, eval_seed(1, "QFT-8-v0", 1), eval_seed(0, "QFT-8-v1", 1),
                eval_seed(0, "QFT-8-v0", 2)}) == 4


def test_smoke_config_shape():
    cfg = smoke_config()
    hw = cfg.hardware()
    assert (hw.M, hw.k) == (2, 4)
    assert cfg.agent_config().episodes == 150
    assert np.array_equal(sorted(cfg.suite["scales"]), [6, 8])
