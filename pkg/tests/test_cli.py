import json

import numpy as np
import pytest

from deepsc import cli
from deepsc.classifier import load_sparse_text
from deepsc.config import load_config
from deepsc.datasets import list_images, load_image, save_image
from deepsc.pipeline import extract_many, load_model

CONFIG = """
[data]
root = {root}
train_per_class = 2

[model]
seed = 3
max_dict_samples = 400

[layer1]
K = 8
alpha = 0.15

[layer2]
K = 6
alpha = 0.15
embed_dim = 5
epochs = 2
pairs_per_image = 100

[svm]
epochs = 10

[output]
dir = {out}
"""


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert cli.main(["synth", str(root), "--n-per-class", "4", "--size", "48", "--seed", "2"]) == 0
    return root


def write_config(path, root, out, text=CONFIG):
    path.write_text(text.format(root=root, out=out))
    return path


@pytest.fixture(scope="module")
def trained_run(data_dir, tmp_path_factory):
    work = tmp_path_factory.mktemp("run")
    cfg = write_config(work / "run.ini", data_dir, work / "out")
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return cfg, work / "out"


def test_synth_layout(data_dir):
    paths, labels, names = list_images(data_dir)
    assert len(paths) == 8 and names == ["class0_vertical_stripes", "class1_horizontal_stripes"]
    assert labels.tolist() == [0] * 4 + [1] * 4


def test_descriptors(tmp_path, data_dir):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["descriptors", str(empty), str(tmp_path / "d.txt")]) == cli.EXIT_DATA

    single = tmp_path / "one"
    single.mkdir()
    save_image(single / "a.png", load_image(list_images(data_dir)[0][0]))
    out = tmp_path / "one.txt"
    assert cli.main(["descriptors", str(single), str(out)]) == 0
    assert sum(line.startswith("DEEPSC-DESC") for line in out.read_text().splitlines()) == 1

    out1, out2 = tmp_path / "a.txt", tmp_path / "b.txt"
    assert cli.main(["descriptors", str(data_dir), str(out1)]) == 0
    assert cli.main(["descriptors", str(data_dir), str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_train_outputs(trained_run):
    _, out = trained_run
    model = load_model(out / "model.zip")
    assert model.dict_sizes == [8, 6]
    log = json.loads((out / "train_log.json").read_text())
    assert len(log["drlim_loss"]) == 1 and len(log["drlim_loss"][0]) == 3
    assert len(log["dictionary_objective"]) == 2


def test_train_one_layer(tmp_path, data_dir):
    text = CONFIG.split("[layer2]")[0] + "[svm]" + CONFIG.split("[svm]")[1]
    cfg = write_config(tmp_path / "one.ini", data_dir, tmp_path / "out", text)
    assert cli.main(["train", "--config", str(cfg)]) == 0
    model = load_model(tmp_path / "out" / "model.zip")
    assert len(model.layers) == 1 and model.layers[0].embedding is None


def test_bad_chaining_rejected_before_compute(tmp_path, data_dir):
    text = CONFIG.replace("[layer1]\nK = 8\nalpha = 0.15\n", "[layer1]\nK = 8\nalpha = 0.15\nembed_dim = 4\n")
    cfg = write_config(tmp_path / "bad.ini", data_dir, tmp_path / "out", text)
    assert cli.main(["train", "--config", str(cfg)]) == cli.EXIT_CONFIG
    assert not (tmp_path / "out").exists()
    gap = CONFIG.replace("[layer2]", "[layer3]")
    cfg = write_config(tmp_path / "gap.ini", data_dir, tmp_path / "out", gap)
    assert cli.main(["evaluate", "--config", str(cfg)]) == cli.EXIT_CONFIG


def test_train_reproducible(trained_run, tmp_path):
    cfg, out = trained_run
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model.zip").read_bytes() == (out / "model.zip").read_bytes()
    assert (tmp_path / "train_log.json").read_bytes() == (out / "train_log.json").read_bytes()


def test_features_match_library(trained_run, data_dir, tmp_path):
    _, out = trained_run
    feats = tmp_path / "f.txt"
    assert cli.main(["features", "--model", str(out / "model.zip"), "--images", str(data_dir),
                     "--out", str(feats)]) == 0
    assert feats.read_text().splitlines()[0] == f"# dim={21 * (8 + 6)}"
    X, labels = load_sparse_text(feats)
    model = load_model(out / "model.zip")
    paths, want_labels, _ = list_images(data_dir)
    expected = extract_many(model, [load_image(p) for p in paths])
    assert X.tobytes() == (expected + 0.0).tobytes()  # the text format has no negative zeros
    assert labels.tolist() == want_labels.tolist()

    shallow = tmp_path / "f1.txt"
    assert cli.main(["features", "--model", str(out / "model.zip"), "--images", str(data_dir),
                     "--out", str(shallow), "--layers", "1"]) == 0
    assert shallow.read_text().splitlines()[0] == f"# dim={21 * 8}"
    assert cli.main(["features", "--model", str(out / "model.zip"), "--images", str(data_dir),
                     "--out", str(shallow), "--layers", "3"]) == cli.EXIT_CONFIG


def test_features_blank_image(trained_run, tmp_path):
    _, out = trained_run
    blank = tmp_path / "blank"
    blank.mkdir()
    save_image(blank / "b.png", np.full((48, 48), 0.5))
    feats = tmp_path / "f.txt"
    assert cli.main(["features", "--model", str(out / "model.zip"), "--images", str(blank),
                     "--out", str(feats)]) == 0
    assert feats.read_text().splitlines()[1:] == ["0"]


def test_corrupt_model_is_data_error(tmp_path, data_dir):
    bad = tmp_path / "m.zip"
    bad.write_bytes(b"junk")
    assert cli.main(["features", "--model", str(bad), "--images", str(data_dir),
                     "--out", str(tmp_path / "f.txt")]) == cli.EXIT_DATA


def test_evaluate_single_repeat(trained_run, tmp_path):
    cfg, _ = trained_run
    assert cli.main(["evaluate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    entry = report["depths"]["2"]
    assert entry["std"] == 0.0
    assert entry["per_repeat"] == [entry["mean"]]
    # R=1 equals one direct run with the same split seed
    results, _ = cli._evaluate_once(load_config(cfg), 3, 2, 1)
    assert results[2][0].average_accuracy == entry["mean"]
    assert "DeepSC-2" in (tmp_path / "report.txt").read_text()


def test_evaluate_repeats_aggregate(trained_run, tmp_path):
    cfg, _ = trained_run
    assert cli.main(["evaluate", "--config", str(cfg), "--repeats", "2", "--layers", "all",
                     "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["depths"]) == {"1", "2"}
    conf = load_config(cfg)
    for depth, entry in report["depths"].items():
        manual = [cli._evaluate_once(conf, 3 + r, int(depth), 1)[0][int(depth)][0].average_accuracy
                  for r in range(2)]
        assert entry["per_repeat"] == manual
        assert entry["mean"] == pytest.approx(sum(manual) / 2)
        assert entry["std"] == pytest.approx(abs(manual[0] - manual[1]) / 2)


def test_aggregate():
    assert cli.aggregate([0.5]) == (0.5, 0.0)
    mean, std = cli.aggregate([0.2, 0.4, 0.9])
    assert mean == pytest.approx(0.5)
    assert std == pytest.approx(np.sqrt(((0.3) ** 2 + 0.1 ** 2 + 0.4 ** 2) / 3))


def test_bad_arguments(trained_run):
    cfg, _ = trained_run
    assert cli.main(["evaluate", "--config", str(cfg), "--repeats", "0"]) == cli.EXIT_CONFIG
    assert cli.main(["evaluate", "--config", str(cfg), "--layers", "deep"]) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit):
        cli.main(["nonsense"])
