import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from agglo.cli import main
from agglo.volume import load_volume

SMALL = ["--shape", "40", "40", "--n-regions", "6"]
FOREST = ["--n-trees", "5", "--bins", "5", "--quantiles", "2"]


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    assert main(["synth", "--out", str(d / "a"), "--seed", "3"] + SMALL) == 0
    assert main(["synth", "--out", str(d / "b"), "--seed", "4"] + SMALL) == 0
    return d


def _files(d, name):
    return [str(d / name / f) for f in ("sp.ndv", "cues.ndv", "gt.ndv")]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_outputs(bench):
    d = bench / "a"
    for f in ("gt.ndv", "cues.ndv", "sp.ndv", "config.json",
              "manifest.json"):
        assert (d / f).exists()
    cfg = json.loads((d / "config.json").read_text())
    assert cfg["seed"] == 3 and cfg["shape"] == [40, 40]
    man = json.loads((d / "manifest.json").read_text())
    assert man["command"] == "synth" and "wall_time_seconds" in man
    assert load_volume(d / "cues.ndv").shape == (2, 40, 40)


def test_flat_equals_gala_zero_epochs(bench, tmp_path):
    sp, cues, gt = _files(bench, "a")
    base = ["train", "--sp", sp, "--cues", cues, "--gt", gt] + FOREST
    assert main(base + ["--method", "flat", "--out",
                        str(tmp_path / "flat.json")]) == 0
    assert main(base + ["--method", "gala", "--epochs", "0", "--out",
                        str(tmp_path / "g0.json")]) == 0
    assert (tmp_path / "flat.json").read_bytes() == \
        (tmp_path / "g0.json").read_bytes()
    assert (tmp_path / "flat.examples.csv").read_bytes() == \
        (tmp_path / "g0.examples.csv").read_bytes()
    man = json.loads((tmp_path / "flat.manifest.json").read_text())
    assert set(man["inputs"]) == {sp, cues, gt}
    assert man["inputs"][gt] == hashlib.sha256(
        open(gt, "rb").read()).hexdigest()
    assert man["seeds"] == {"forest": 0}


def test_train_segment_eval_pipeline(bench, tmp_path):
    sp, cues, gt = _files(bench, "a")
    sp2, cues2, gt2 = _files(bench, "b")
    model = str(tmp_path / "m.json")
    assert main(["train", "--sp", sp, "--cues", cues, "--gt", gt,
                 "--method", "gala", "--epochs", "1", "--out", model]
                + FOREST) == 0
    seg = str(tmp_path / "seg.ndv")
    assert main(["segment", "--sp", sp2, "--cues", cues2, "--model", model,
                 "--save-tree", "--out", seg]) == 0
    tree = str(tmp_path / "seg.tree.csv")
    out = tmp_path / "metrics.csv"
    assert main(["eval", "--seg", seg, "--gt", gt2, "--out", str(out)]) == 0
    names = {r["metric"] for r in _rows(out)}
    assert {"vi", "ri", "are", "covering"} <= names
    sweep = tmp_path / "sweep.csv"
    assert main(["eval", "--sp", sp2, "--sweep", tree, "--gt", gt2,
                 "--thresholds", "0:1:11", "--metrics", "splitvi",
                 "--out", str(sweep)]) == 0
    rows = _rows(sweep)
    under = [float(r["value"]) for r in rows if r["metric"] == "vi_under"]
    assert len(under) == 11
    assert all(b >= a for a, b in zip(under, under[1:]))


def test_segment_threshold_zero_and_mean_policy(bench, tmp_path):
    sp, cues, _ = _files(bench, "b")
    out = tmp_path / "s0.ndv"
    assert main(["segment", "--sp", sp, "--cues", cues, "--policy", "mean",
                 "--threshold", "0", "--out", str(out)]) == 0
    seg, orig = load_volume(out), load_volume(sp)
    assert len(np.unique(seg)) == len(np.unique(orig))
    pairs = np.unique(np.stack([seg.ravel(), orig.ravel()]), axis=1)
    assert pairs.shape[1] == len(np.unique(orig))


def test_eval_identity(bench, tmp_path):
    _, _, gt = _files(bench, "a")
    out = tmp_path / "e.csv"
    assert main(["eval", "--seg", gt, "--gt", gt, "--metrics",
                 "vi,ri,are,covering,breakdown", "--out", str(out)]) == 0
    vals = {r["metric"]: float(r["value"]) for r in _rows(out)}
    assert vals["vi"] == 0 and vals["ri"] == 1
    assert vals["are"] == 0 and vals["covering"] == 1
    assert (tmp_path / "e.breakdown.csv").exists()


def test_eval_ods_across_images(bench, tmp_path):
    trees = []
    for name in ("a", "b"):
        sp, cues, gt = _files(bench, name)
        seg = tmp_path / f"{name}.ndv"
        assert main(["segment", "--sp", sp, "--cues", cues, "--policy",
                     "mean", "--save-tree", "--out", str(seg)]) == 0
        trees.append(str(tmp_path / f"{name}.tree.csv"))
    sps = [_files(bench, n)[0] for n in "ab"]
    gts = [_files(bench, n)[2] for n in "ab"]
    out = tmp_path / "ods.csv"
    args = ["eval", "--sp"] + sps + ["--sweep"] + trees + ["--gt"] + gts \
        + ["--thresholds", "0,0.25,0.5,0.75,1", "--metrics", "vi",
           "--out", str(out)]
    assert main(args) == 2        # several images need --ods
    assert main(args + ["--ods"]) == 0
    metrics = [r["metric"] for r in _rows(out)]
    assert "vi_ods" in metrics and "vi_ois" in metrics


def test_exit_codes(bench, tmp_path, capsys):
    sp, cues, gt = _files(bench, "a")
    missing = str(tmp_path / "nope.ndv")
    code = main(["train", "--sp", sp, "--cues", cues, "--gt", missing,
                 "--out", str(tmp_path / "m.json")])
    assert code == 3
    assert missing in capsys.readouterr().err
    assert main(["train", "--sp", sp]) == 2
    assert main(["eval", "--seg", gt, "--gt", gt, "--metrics", "bogus",
                 "--out", str(tmp_path / "x.csv")]) == 2
    other = str(bench / "b" / "gt.ndv")
    small = tmp_path / "small"
    assert main(["synth", "--out", str(small), "--shape", "10", "12",
                 "--n-regions", "3"]) == 0
    assert main(["eval", "--seg", str(small / "gt.ndv"), "--gt", other,
                 "--out", str(tmp_path / "y.csv")]) == 3


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"shape": [16, 18], "n-regions": 4,
                               "seed": 8}))
    assert main(["synth", "--config", str(cfg), "--out",
                 str(tmp_path / "s")]) == 0
    assert load_volume(tmp_path / "s" / "gt.ndv").shape == (16, 18)
    assert main(["synth", "--config", str(cfg), "--seed", "9", "--out",
                 str(tmp_path / "t")]) == 0
    assert json.loads((tmp_path / "t" / "config.json").read_text())[
        "seed"] == 9
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["synth", "--config", str(cfg), "--out",
                 str(tmp_path / "u")]) == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "agglo.cli", "synth",
                          "--out", str(tmp_path / "s"), "--shape", "8", "8",
                          "--n-regions", "2"], capture_output=True)
    assert res.returncode == 0, res.stderr
