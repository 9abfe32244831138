import json

import pytest
import yaml

from rexpath.cli import main

TINY_RUN = {
    "synth": {"verticals": [{"name": "film", "n_websites": 2, "pages_per_website": 4},
                            {"name": "sport", "n_websites": 2, "pages_per_website": 4},
                            {"name": "campus", "n_websites": 1, "pages_per_website": 4}]},
    "encoder": {"d_model": 16, "n_heads": 2, "n_layers": 2, "alpha": 1, "beta": 1,
                "d_ff": 32, "dropout": 0.0},
    "train": {"max_steps": 2, "eval_every": 1},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "run.yaml"
    cfg.write_text(yaml.safe_dump(TINY_RUN))
    assert main(["synth", "--config", str(cfg), "--seed", "1", "--out", str(d / "data"),
                 "--html", str(d / "html")]) == 0
    assert main(["train", "--data", str(d / "data"), "--test-vertical", "campus",
                 "--config", str(cfg), "--out", str(d / "model.npz")]) == 0
    return d


def test_synth_writes_corpus_and_sidecars(workspace):
    data = workspace / "data"
    assert (data / "pages.jsonl").exists() and (data / "pairs.jsonl").exists()
    assert len(list((data / "popularity").glob("*.tsv"))) == 5
    assert (workspace / "html" / "pairs.jsonl").exists()


def test_ingest_html_tree(workspace, capsys):
    out = workspace / "ingested"
    assert main(["ingest", "--pages-dir", str(workspace / "html"), "--annotations",
                 str(workspace / "html" / "pairs.jsonl"), "--out", str(out)]) == 0
    stats = json.loads(capsys.readouterr().out)["stats"]
    assert stats["film"]["pages"] == 8 and stats["film"]["pairs_per_page"] == 6.0


def test_featurize(workspace, capsys):
    out = workspace / "enc" / "film.jsonl"
    assert main(["featurize", "--data", str(workspace / "data"), "--vertical", "film",
                 "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["examples"] == 8
    assert out.exists() and out.with_suffix(".vocab.json").exists()


def test_evaluate_with_baseline_report(workspace, capsys):
    rep = workspace / "report.json"
    assert main(["evaluate", "--checkpoint", str(workspace / "model.npz"), "--data",
                 str(workspace / "data"), "--baseline", "--report", str(rep)]) == 0
    assert "F1=" in capsys.readouterr().out
    body = json.loads(rep.read_text())
    assert body["colon_baseline"]["recall"] >= 0.9


def test_evaluate_on_training_vertical_is_refused(workspace):
    assert main(["evaluate", "--checkpoint", str(workspace / "model.npz"), "--data",
                 str(workspace / "data"), "--test-vertical", "film"]) == 2


def test_extract_outputs_jsonl(workspace):
    page = next((workspace / "html" / "campus").rglob("*.html"))
    out = workspace / "pred.jsonl"
    assert main(["extract", "--checkpoint", str(workspace / "model.npz"), "--page", str(page),
                 "--site-dir", str(page.parent), "--threshold", "0.0", "--out",
                 str(out)]) == 0
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert rows and {"subject", "object", "probability"} <= set(rows[0])


def test_baseline_command(workspace, capsys):
    assert main(["baseline", "--data", str(workspace / "data"), "--vertical", "campus"]) == 0
    assert "R=1.0000" in capsys.readouterr().out


def test_inspect_xpath(workspace, capsys):
    pid = json.loads((workspace / "data" / "pairs.jsonl").read_text().splitlines()[0])
    assert main(["inspect-xpath", "--data", str(workspace / "data"), "--page",
                 pid["page_id"], "--i", str(pid["subject"]["node_id"]), "--j",
                 str(pid["object"]["node_id"])]) == 0
    out = capsys.readouterr().out
    assert "d: " in out and "rel " in out


def test_ablate_single_variant(workspace, capsys):
    rep = workspace / "ablate.json"
    assert main(["ablate", "--data", str(workspace / "data"), "--test-vertical", "campus",
                 "--variant", "no_relxpath", "--config", str(workspace / "run.yaml"),
                 "--report", str(rep)]) == 0
    assert set(json.loads(rep.read_text())) == {"no_relxpath"}


@pytest.mark.parametrize("argv", [
    ["train", "--data", "{d}/data", "--test-vertical", "jobs", "--out", "{d}/x.npz"],
    ["featurize", "--data", "{d}/data", "--vertical", "jobs"],
    ["baseline", "--data", "{d}/nowhere"],
    ["inspect-xpath", "--data", "{d}/data", "--page", "nope", "--i", "0", "--j", "1"],
])
def test_validation_failures_exit_2(workspace, argv):
    assert main([a.format(d=workspace) for a in argv]) == 2


def test_runtime_error_exits_1(workspace):
    assert main(["extract", "--checkpoint", str(workspace / "model.npz"), "--page",
                 str(workspace / "missing.html")]) == 1


def test_bad_config_exits_2(workspace):
    bad = workspace / "bad.yaml"
    bad.write_text("encoder: {n_layers: 4, alpha: 3, beta: 3}\n")
    assert main(["train", "--data", str(workspace / "data"), "--test-vertical", "campus",
                 "--config", str(bad), "--out", str(workspace / "y.npz")]) == 2
