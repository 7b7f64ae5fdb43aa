import subprocess
import sys

import numpy as np
import pytest

from gsdnet.cli import main
from gsdnet.formats import (
    read_grid,
    read_labels,
    read_manifest,
    read_pgm,
    resolve,
    write_grid,
)
from gsdnet.metrics import read_metrics


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> add-noise, shared by the command tests below."""
    root = tmp_path_factory.mktemp("cli")
    spec = root / "shapes.cfg"
    spec.write_text("n_train = 4\nn_test = 2\nimage_size = 16\nseed = 3\n"
                    "fg_min = 0.08\nfg_max = 0.35\n")
    data_dir = root / "data"
    assert main(["gen-data", "--spec", str(spec), "--out", str(data_dir)]) == 0
    manifest = data_dir / "manifest.tsv"
    assert manifest.exists()
    assert main(["add-noise", "--manifest", str(manifest), "--kind", "S_R",
                 "--strength", "0.06", "--seed", "1", "--walk-step", "2"]) == 0
    return root, manifest


def test_gen_data_and_noise(pipeline):
    _, manifest = pipeline
    entries = read_manifest(manifest)
    assert len(entries) == 6
    for e in entries:
        if e.split == "train":
            assert e.noisy.endswith("_noisy_S_R.pgm")
            clean = read_labels(resolve(manifest, e.clean))
            noisy = read_labels(resolve(manifest, e.noisy))
            assert (noisy <= clean).all()
        else:
            assert e.noisy == e.clean


def test_train_and_eval(pipeline, capsys):
    root, manifest = pipeline
    cfg = root / "train.cfg"
    cfg.write_text("mode = jocor\nepochs = 2\nbatch_size = 4\nfeatures = 4\n"
                   "learning_rate = 0.002\nseed = 0\n")
    out_dir = root / "run"
    assert main(["train", "--config", str(cfg), "--manifest", str(manifest),
                 "--out-dir", str(out_dir)]) == 0
    rows = read_metrics(out_dir / "metrics.csv")
    assert len(rows) == 2
    assert (out_dir / "ckpt_final" / "net1.gsdm").exists()
    capsys.readouterr()
    assert main(["eval", "--metrics", str(out_dir / "metrics.csv"), "--last", "2"]) == 0
    out = capsys.readouterr().out
    assert "dice" in out and "+-" in out


def test_weights_command(pipeline):
    root, manifest = pipeline
    entries = read_manifest(manifest)
    labels = resolve(manifest, entries[0].clean)
    out = root / "w.gsdt"
    assert main(["weights", "--labels", str(labels), "--T", "5", "--epoch", "0",
                 "--E", "60", "--out", str(out)]) == 0
    w = read_grid(out)
    assert w.shape == (16, 16)
    assert w.min() >= 1.0 and w.max() <= 5.0
    assert read_pgm(out.with_suffix(".pgm")).shape == (16, 16)


def test_refine_command(pipeline):
    root, manifest = pipeline
    entries = read_manifest(manifest)
    image = resolve(manifest, entries[0].image)
    noisy = resolve(manifest, entries[0].noisy)
    rng = np.random.default_rng(0)
    z = rng.standard_normal((16, 16, 2))
    p = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    p1_path, p2_path = root / "p1.gsdt", root / "p2.gsdt"
    write_grid(p1_path, p, dtype="f64")
    write_grid(p2_path, p[:, :, ::-1].copy(), dtype="f64")
    out = root / "refined.pgm"
    seg_dump = root / "segments.gsdt"
    assert main(["refine", "--p1", str(p1_path), "--p2", str(p2_path),
                 "--noisy", str(noisy), "--tau-rate", "0.8", "--image", str(image),
                 "--alpha", "0.5", "--out", str(out),
                 "--dump-superpixels", str(seg_dump)]) == 0
    labels = read_labels(out, num_classes=2)
    assert labels.shape == (16, 16)
    assert read_grid(seg_dump).shape == (16, 16)


def test_refine_pooled_requires_image(pipeline):
    root, manifest = pipeline
    entries = read_manifest(manifest)
    noisy = resolve(manifest, entries[0].noisy)
    assert main(["refine", "--p1", str(root / "p1.gsdt"), "--p2", str(root / "p2.gsdt"),
                 "--noisy", str(noisy), "--tau-rate", "0.8",
                 "--out", str(root / "x.pgm")]) == 1


def test_usage_errors_exit_2():
    assert main([]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["train", "--config"]) == 2


def test_runtime_errors_exit_1(tmp_path):
    assert main(["eval", "--metrics", str(tmp_path / "missing.csv")]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("mode = warp-drive\n")
    assert main(["train", "--config", str(bad), "--manifest", str(tmp_path / "m.tsv"),
                 "--out-dir", str(tmp_path / "o")]) == 1


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-c",
                           "from gsdnet.cli import entrypoint; entrypoint()",
                           "--help"], capture_output=True, text=True)
    # argparse prints usage on --help and exits 0 through the entrypoint
    assert proc.returncode == 0
    assert "gsdnet" in proc.stdout
