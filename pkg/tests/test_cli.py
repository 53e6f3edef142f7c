import json
from pathlib import Path

import numpy as np
import pytest

from rtfn import cli, layers
from rtfn.clustering import rand_index

SMALL = """
hidden = 6
channels = 8
branch_channels = 2
branch_kernels = 3,4
stem_kernel = 3
decoder_widths = 7,6,8
"""


def write_config(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_config_types_and_comments(tmp_path):
    p = write_config(tmp_path, "# header\nepochs = 5  # inline\nbranch_kernels = 3, 5\nnormalize = no\nlr0=0.02\n")
    cfg = cli.parse_config(p)
    assert cfg == {"epochs": 5, "branch_kernels": (3, 5), "normalize": False, "lr0": 0.02}


@pytest.mark.parametrize("text", ["epochz = 5\n", "epochs = five\n", "epochs\n", "epochs = 1\nepochs = 2\n",
                                  "num_classes = 3\n", "format = parquet\n"])
def test_config_errors_exit_2(tmp_path, capsys, text):
    cfg = write_config(tmp_path, text + ("" if "format" in text else "format = synthetic\n"))
    code, _, err = run(["train", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2 and "config error" in err


def test_missing_config_exit_2_with_path(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    code, _, err = run(["train", "--config", missing, "--out", tmp_path / "o"], capsys)
    assert code == 2 and str(missing) in err


def test_missing_dataset_exit_3(tmp_path, capsys):
    cfg = write_config(tmp_path, "dataset = Nothing\n")
    code, _, err = run(["train", "--config", cfg, "--data", tmp_path, "--out", tmp_path / "o"], capsys)
    assert code == 3 and "Nothing_TRAIN.tsv" in err


def test_divergence_exit_4(tmp_path, capsys):
    cfg = write_config(tmp_path, "format = synthetic\nsynthetic_n = 4\nsynthetic_length = 16\nepochs = 3\n"
                                 "lr0 = 1e300\nrms_init = 0\n" + SMALL)
    with np.errstate(all="ignore"):
        code, _, err = run(["train", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 4 and "non-finite" in err


SEPARABLE = "format = synthetic\nsynthetic_kind = separable\nsynthetic_n = 16\nsynthetic_length = 32\n" \
            "epochs = 30\neval_every = 10\n" + SMALL


def test_train_separable_writes_run_dir(tmp_path, capsys):
    cfg = write_config(tmp_path, SEPARABLE)
    out = tmp_path / "run"
    code, stdout, _ = run(["train", "--config", cfg, "--out", out, "--seed", 3], capsys)
    assert code == 0
    assert stdout.strip() == "top1=1.000000"
    assert sorted(p.name for p in out.iterdir()) == sorted([cli.MANIFEST_NAME, cli.LOSS_NAME, cli.CHECKPOINT_NAME])
    m = json.loads((out / cli.MANIFEST_NAME).read_text())
    assert m["seed"] == 3 and m["metrics"]["top1"] == 1.0 and m["model_config"]["hidden"] == 6
    assert m["train_config"]["epochs"] == 30 and m["run"]["normalize"] is True
    header = (out / cli.LOSS_NAME).read_text().splitlines()[0]
    assert header == "epoch,train_loss,eval_metric,lr,wall_ms"


def test_train_is_deterministic_and_flags_apply(tmp_path, capsys):
    cfg = write_config(tmp_path, SEPARABLE.replace("epochs = 30", "epochs = 3"))
    outs = []
    for d in ("a", "b"):
        code, stdout, _ = run(["train", "--config", cfg, "--out", tmp_path / d, "--seed", 7,
                               "--no-normalize", "--lstman-depth", 1], capsys)
        assert code == 0
        outs.append(stdout)
    ma = json.loads((tmp_path / "a" / cli.MANIFEST_NAME).read_text())
    mb = json.loads((tmp_path / "b" / cli.MANIFEST_NAME).read_text())
    assert outs[0] == outs[1] and ma["metrics"] == mb["metrics"]
    assert ma["run"]["normalize"] is False and ma["model_config"]["lstman_depth"] == 1
    assert (tmp_path / "a" / cli.CHECKPOINT_NAME).read_bytes() == (tmp_path / "b" / cli.CHECKPOINT_NAME).read_bytes()


def test_train_on_ucr_layout(tmp_path, capsys):
    rng = np.random.default_rng(0)
    for split in ("TRAIN", "TEST"):
        rows = [f"{1 + i % 2}\t" + "\t".join(str(v) for v in rng.standard_normal(12) + (i % 2) * 3) for i in range(6)]
        (tmp_path / f"Toy_{split}.tsv").write_text("\n".join(rows) + "\n")
    cfg = write_config(tmp_path, "dataset = Toy\nepochs = 2\n" + SMALL)
    code, stdout, _ = run(["train", "--config", cfg, "--data", tmp_path, "--out", tmp_path / "o"], capsys)
    m = json.loads((tmp_path / "o" / cli.MANIFEST_NAME).read_text())
    assert code == 0 and stdout.startswith("top1=")
    assert set(m["dataset_checksums"]) == {"Toy_TRAIN.tsv", "Toy_TEST.tsv"}


def test_cluster_blobs(tmp_path, capsys):
    cfg = write_config(tmp_path, "format = synthetic\nsynthetic_kind = blobs\nsynthetic_n = 20\n"
                                 "synthetic_length = 8\nepochs = 5\n" + SMALL)
    out = tmp_path / "c"
    code, stdout, _ = run(["cluster", "--config", cfg, "--out", out, "--seed", 1], capsys)
    assert code == 0
    assert float(stdout.strip().split("=")[1]) >= 0.99
    assert sorted(p.name for p in out.iterdir()) == sorted([cli.MANIFEST_NAME, cli.LOSS_NAME, cli.CHECKPOINT_NAME])


def test_cluster_single_cluster_closed_form(tmp_path, capsys):
    cfg = write_config(tmp_path, "format = synthetic\nsynthetic_kind = blobs\nsynthetic_n = 10\n"
                                 "synthetic_length = 8\nepochs = 1\nclusters = 1\ncluster_split = train\n" + SMALL)
    code, stdout, _ = run(["cluster", "--config", cfg, "--out", tmp_path / "c"], capsys)
    # blobs alternate labels 0/1: 2 * C(5, 2) of C(10, 2) pairs share a class
    assert code == 0
    assert float(stdout.strip().split("=")[1]) == pytest.approx(rand_index(np.arange(10) % 2, np.zeros(10)))
    assert rand_index(np.arange(10) % 2, np.zeros(10)) == 20 / 45


def test_gradcheck_passes(capsys):
    code, stdout, _ = run(["gradcheck"], capsys)
    lines = [l for l in stdout.splitlines() if l.strip()]
    assert code == 0 and len(lines) >= 8 and all(l.endswith("ok") for l in lines)


def test_gradcheck_catches_corrupted_backward(monkeypatch, capsys):
    good = layers.Dense.backward
    monkeypatch.setattr(layers.Dense, "backward", lambda self, g: 1.5 * good(self, g))
    code, _, err = run(["gradcheck", "--components", "dense,conv1d"], capsys)
    assert code == 5 and "dense" in err and "conv1d" not in err


def _manifest(path: Path, alg, ds, score):
    path.mkdir(parents=True, exist_ok=True)
    (path / cli.MANIFEST_NAME).write_text(json.dumps({"algorithm": alg, "dataset": ds, "metrics": {"score": score}}))
    return path / cli.MANIFEST_NAME


def test_report_single_manifest(tmp_path, capsys):
    m = _manifest(tmp_path / "r1", "RTFN", "Coffee", 1.0)
    code, stdout, _ = run(["report", m], capsys)
    assert code == 0
    assert "RTFN,1,0,0,1,1,1" in stdout


def test_report_identical_runs_tie(tmp_path, capsys):
    _manifest(tmp_path / "a", "A", "Coffee", 0.9)
    _manifest(tmp_path / "b", "B", "Coffee", 0.9)
    code, stdout, _ = run(["report", str(tmp_path / "*" / cli.MANIFEST_NAME)], capsys)
    assert code == 0 and "A,0,1,0,1,1,1" in stdout and "B,0,1,0,1,1,1" in stdout


def test_report_three_run_fixture(tmp_path, capsys):
    _manifest(tmp_path / "1", "A", "D1", 0.9)
    _manifest(tmp_path / "2", "B", "D1", 0.8)
    _manifest(tmp_path / "3", "B", "D2", 0.7)
    code, stdout, _ = run(["report", tmp_path, "--out", tmp_path / "rep"], capsys)
    assert code == 0
    csv_lines = (tmp_path / "rep" / "leaderboard.csv").read_text().splitlines()
    assert csv_lines == ["algorithm,win,tie,lose,best,total,avg_rank", "A,1,0,0,1,1,1", "B,1,0,1,1,2,1.5"]
    assert "algorithm" in stdout.splitlines()[len(csv_lines) + 1]


def test_report_unreadable_manifest_exit_3(tmp_path, capsys):
    bad = tmp_path / "manifest.json"
    bad.write_text("{not json")
    code, _, err = run(["report", bad], capsys)
    assert code == 3 and "unreadable" in err
