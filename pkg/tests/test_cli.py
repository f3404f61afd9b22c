import csv
import io
import json

from click.testing import CliRunner

from mad_compress.cli import main
from mad_compress.harness import majority_script, synthetic_arithmetic


def dataset_file(tmp_path, n=3):
    ds = synthetic_arithmetic(n)
    path = tmp_path / "items.jsonl"
    path.write_text("".join(json.dumps({"id": q.id, "question": q.text, "answer": q.gold_answer}) + "\n"
                            for q in ds.items))
    return ds, path


def test_cost_predict():
    res = CliRunner().invoke(main, ["cost", "predict", "-K", "3", "-R", "5", "-L", "658"])
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(io.StringIO(res.output)))
    assert rows[-1]["full_text_cum"] == "59220"
    assert rows[-1]["visual_cum"] == "3072"


def test_cost_predict_first_round():
    res = CliRunner().invoke(main, ["cost", "predict", "--count-first-round"])
    rows = list(csv.DictReader(io.StringIO(res.output)))
    assert rows[-1]["visual_cum"] == "3840" and rows[-1]["summary_cum"] == "18000"


def test_debate_run_and_render(tmp_path):
    ds, path = dataset_file(tmp_path)
    out = tmp_path / "run"
    runner = CliRunner()
    res = runner.invoke(main, ["debate", "run", "--dataset", str(path), "--strategy", "text",
                               "--strategy", "visual", "--backend", "mock", "--out-dir", str(out)])
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(io.StringIO(res.output)))
    assert [r["strategy"] for r in rows] == ["full_text", "visual"]
    assert all(r["accuracy_pct"] == "100.0" for r in rows)
    for name in ("report.json", "report.csv", "token_curve.csv", "transcript_full_text.jsonl",
                 "transcript_visual.jsonl"):
        assert (out / name).exists()

    pages = tmp_path / "pages"
    res = runner.invoke(main, ["render", str(out / "transcript_visual.jsonl"), "--out-dir", str(pages)])
    assert res.exit_code == 0, res.output
    manifest = (pages / "manifest.tsv").read_text()
    # three items, rounds 2..5 each see a one-page history
    assert len(manifest.splitlines()) == 12
    assert (pages / "arith-000_r2_p0.png").read_bytes()[:4] == b"\x89PNG"
    again = runner.invoke(main, ["render", str(out / "transcript_visual.jsonl"), "--out-dir", str(pages)])
    assert again.output == res.output


def test_debate_run_mock_script_file(tmp_path):
    ds, path = dataset_file(tmp_path, 2)
    script_path = tmp_path / "script.json"
    majority_script(ds, 3, 2).save(script_path)
    cfg = tmp_path / "c.ini"
    cfg.write_text("[debate]\nnum_agents = 3\nnum_rounds = 2\n[strategy]\nkind = summary\n")
    res = CliRunner().invoke(main, ["debate", "run", "--config", str(cfg), "--dataset", str(path),
                                    "--mock-script", str(script_path), "--out-dir", str(tmp_path / "o")])
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["rows"][0]["strategy"] == "summary" and report["config"]["num_rounds"] == 2


def test_debate_run_bad_dataset(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a"}\n')
    res = CliRunner().invoke(main, ["debate", "run", "--dataset", str(path)])
    assert res.exit_code != 0
    assert "bad.jsonl:1" in str(res.exception)


def test_theory_verify(tmp_path):
    res = CliRunner().invoke(main, ["theory", "verify", "--trials", "5000", "--out-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    summary = json.loads(res.output)
    assert summary["passed"] and set(summary["checks"]) >= {"bound_validity", "agent_count", "distance_margin"}
    assert (tmp_path / "bounds.csv").read_text().count("\n") == 201


def test_gradcheck():
    res = CliRunner().invoke(main, ["gradcheck", "--seeds", "3"])
    assert res.exit_code == 0, res.output
    out = json.loads(res.output)
    assert out["passed"] and out["max_rel_err"] <= 1e-4


def test_train_toy(tmp_path):
    csv_path = tmp_path / "loss.csv"
    res = CliRunner().invoke(main, ["train-toy", "--steps", "200", "--lr", "1e-3", "--batch-size", "8",
                                    "--csv", str(csv_path)])
    assert res.exit_code == 0, res.output
    out = json.loads(res.output)
    assert out["final_loss"] < out["initial_loss"] and out["max_rel_err"] <= 1e-4
    assert {"steps", "final_loss", "max_rel_err"} <= set(out)
    assert csv_path.read_text().splitlines()[0] == "step,loss_nats,loss_bits"
    assert len(csv_path.read_text().splitlines()) == 202


def test_train_toy_divergence():
    res = CliRunner().invoke(main, ["train-toy", "--steps", "20", "--lr", "1e200", "--optimizer", "sgd",
                                    "--samples", "2"])
    assert res.exit_code == 1
    assert "non-finite" in res.output
