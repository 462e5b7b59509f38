import hashlib
import json

import pytest

from spot.cli import main
from spot.data import ActionSegment, dump_annotations, VideoRecord

TINY = {
    "data": {"num_videos": 16, "num_test": 4, "raw_length": 40},
    "train": {
        "temporal_length": 20,
        "pretrain_epochs": 1,
        "finetune_epochs": 2,
        "warmup_epochs": 1,
        "steps_per_epoch": 2,
        "pretrain_steps_per_epoch": 2,
        "batch_size": 4,
    },
}


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_gen_data_counts_and_determinism(tmp_path, capsys):
    assert main(["gen-data", "--run-dir", str(tmp_path / "a"), "--seed", "3"]) == 0
    assert main(["gen-data", "--run-dir", str(tmp_path / "b"), "--seed", "3"]) == 0
    man = json.loads((tmp_path / "a" / "data" / "manifest.json").read_text())
    assert len(man["labeled"]) + len(man["unlabeled"]) == 200
    assert len(man["labeled"]) == 20
    assert len(man["classes"]) == 5
    header = json.loads((tmp_path / "a" / "data" / "features" / f"{man['test'][0]}.json").read_text())
    assert header["dims"] == [32, 120]
    assert _digest(tmp_path / "a" / "data") == _digest(tmp_path / "b" / "data")
    assert (tmp_path / "a" / "config.json").exists()


def test_bad_label_fraction_exits_nonzero(tmp_path, capsys):
    assert main(["gen-data", "--run-dir", str(tmp_path), "--labels-fraction", "1.5"]) != 0
    assert "label fraction" in capsys.readouterr().err


def test_missing_checkpoint_names_path(tmp_path, capsys):
    main(["gen-data", "--run-dir", str(tmp_path)])
    assert main(["finetune", "--run-dir", str(tmp_path)]) == 2
    assert str(tmp_path / "pretrain.npz") in capsys.readouterr().err
    assert main(["infer", "--run-dir", str(tmp_path), "--checkpoint", str(tmp_path / "nope.npz")]) == 2
    assert "nope.npz" in capsys.readouterr().err


def test_missing_dataset(tmp_path, capsys):
    assert main(["pretrain", "--run-dir", str(tmp_path)]) == 2
    assert "gen-data" in capsys.readouterr().err


def test_eval_perfect_detections(tmp_path, capsys):
    rec = VideoRecord("v", 10.0, [ActionSegment(1.0, 4.0, 0), ActionSegment(6.0, 9.0, 1)])
    dump_annotations([rec], ["a", "b"], tmp_path / "gt.json")
    dets = {"results": {"v": [{"segment": [1.0, 4.0], "label": "a", "score": 0.9},
                              {"segment": [6.0, 9.0], "label": "b", "score": 0.8}]}}
    (tmp_path / "d.json").write_text(json.dumps(dets))
    rc = main(["eval", "--run-dir", str(tmp_path), "--annotations", str(tmp_path / "gt.json"),
               "--detections", str(tmp_path / "d.json")])
    assert rc == 0
    assert json.loads((tmp_path / "report.json").read_text())["average"] == 1.0
    assert "Avg" in (tmp_path / "report.txt").read_text()


@pytest.mark.filterwarnings("ignore:classes")
def test_tiny_pipeline(tmp_path, capsys):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    common = ["--run-dir", str(tmp_path / "run"), "--config", str(cfg), "--labels-fraction", "0.5"]
    for cmd in (["gen-data"], ["pretrain"], ["finetune"], ["infer"], ["eval"], ["error-prop"]):
        assert main(cmd + common) == 0, cmd
    run = tmp_path / "run"
    for name in ("pretrain.npz", "finetune.npz", "detections.json", "report.json",
                 "error_propagation.json", "pretrain_log.jsonl", "finetune_log.jsonl"):
        assert (run / name).exists(), name
    assert json.loads((run / "config.json").read_text())["train"]["temporal_length"] == 20
    rep = json.loads((run / "report.json").read_text())
    assert 0.0 <= rep["average"] <= 1.0
    assert main(["finetune", "--from-scratch", "--checkpoint", str(run / "scratch.npz")] + common) == 0
    assert (run / "scratch.npz").exists()
