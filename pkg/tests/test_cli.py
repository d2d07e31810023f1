import csv
import json

import pytest

from posediff.cli import main
from posediff.config import config_keys

TINY = [
    "--set", "data.synthetic_train={n_actors: 2, n_frames: 30, seed: 1}",
    "--set", "data.synthetic_test={n_actors: 2, n_frames: 30, seed: 2, segment_length: 6, "
             "injectors: [{kind: freeze, rate: 0.4, magnitude: 1.0}]}",
    "--set", "train.epochs=1", "--set", "train.batch_size=64", "--set", "train.unet.channels=[2, 8, 2]",
    "--set", "train.unet.cond_dim=8", "--set", "train.enc_width=4",
    "--set", "eval.ms=[1, 3]", "--set", "eval.default_m=3",
]


def run(tmp_path, *argv):
    return main([argv[0], *TINY, "--set", f"output_dir={tmp_path}", *argv[1:]])


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for key in config_keys():
        assert key in text, key
    assert "POSEDIFF_OUTPUT_DIR" in text


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1
    assert main(["train", "--set", "train.bogus=1", "--set", f"output_dir={tmp_path}"]) == 1
    assert main(["eval", "--set", f"output_dir={tmp_path}", "--checkpoint", str(tmp_path / "none.bin")]) == 2


def test_full_pipeline(tmp_path, capsys):
    assert run(tmp_path, "synth") == 0
    assert (tmp_path / "data" / "test.yaml").exists()
    capsys.readouterr()
    assert run(tmp_path, "train") == 0
    out = capsys.readouterr().out
    assert json.loads(out.splitlines()[0])["step"] == 1
    assert (tmp_path / "checkpoint.bin").exists() and (tmp_path / "config.yaml").exists()
    n_lines = len((tmp_path / "metrics.jsonl").read_text().splitlines())

    main(["train", *TINY, "--set", f"output_dir={tmp_path}", "--set", "train.epochs=2", "--resume"])
    assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 2 * n_lines
    assert run(tmp_path, "train", "--set", "train.lr=0.5", "--resume") != 0

    assert run(tmp_path, "eval", "--histograms") == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["m"] == 3 and 0 <= report["auc"] <= 1
    assert len(list(csv.DictReader((tmp_path / "auc_table.csv").open()))) == 2
    assert "bin_edges" in json.loads((tmp_path / "histograms.json").read_text())
    assert (tmp_path / "frame_scores.csv").exists()

    dest = tmp_path / "s.csv"
    assert run(tmp_path, "score", "--input", str(tmp_path / "data" / "test.yaml"), "--output", str(dest)) == 0
    rows = list(csv.DictReader(dest.open()))
    assert rows and set(rows[0]) == {"scene_id", "frame_index", "score", "n_actors"}
    assert run(tmp_path, "score", "--input", str(tmp_path / "data" / "test_tracks.ndjson"),
               "--output", str(tmp_path / "t.csv")) == 0
    assert (tmp_path / "t.csv").read_text() == dest.read_text()


def test_ablate(tmp_path):
    code = run(tmp_path, "ablate", "--set", "ablation.strategies=[input_concat, e2e_embedding]",
               "--set", "ablation.tasks=[forecasting]")
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "ablation.csv").open()))
    assert [r["strategy"] for r in rows] == ["input_concat", "e2e_embedding"]


def test_eval_on_normal_only_data_is_undefined(tmp_path):
    assert run(tmp_path, "train") == 0
    code = run(tmp_path, "eval", "--set", "data.synthetic_test={n_actors: 2, n_frames: 30, seed: 2}")
    assert code == 2
