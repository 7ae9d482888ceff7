import json

import numpy as np
import pytest

from onespike.cli import load_run_config, main, network_config
from onespike.plasticity import StdpRule, anti_stdp_rule
from onespike.textio import text_to_tensor

from test_data import write_idx


@pytest.fixture(scope="module")
def mnist_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("mnist")
    rng = np.random.default_rng(0)
    for split, prefix, n in (("train", "train", 20), ("test", "t10k", 10)):
        images = np.zeros((n, 28, 28), dtype=np.uint8)
        for i in range(n):
            r, c = rng.integers(6, 22, size=2)
            images[i, r - 5 : r + 5, c - 1 : c + 2] = 255
            images[i, r : r + 2, c - 6 : c + 6] = 180
        write_idx(d / f"{prefix}-images-idx3-ubyte", images)
        write_idx(d / f"{prefix}-labels-idx1-ubyte", np.arange(n) % 10)
    return d


def make_config(tmp_path, mnist_dir, **extra):
    cfg = {
        "data": {"directory": str(mnist_dir)},
        "network": {"features": [4, 8, 10]},
        "schedule": {"layer1_epochs": 1, "layer2_epochs": 1, "rl_epochs": 2,
                     "lr_growth": {"every": 10, "factor": 2.0, "max_rate": 0.15}},
        "output": str(tmp_path / "out"),
    }
    cfg.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


PHASES = [
    ["encode"],
    ["train-layer", "--layer", "1"],
    ["train-layer", "--layer", "2"],
    ["train-rl"],
    ["eval"],
    ["export-features"],
]


def run_all(config, *flags):
    for phase in PHASES:
        assert main(phase + ["--config", str(config), *flags]) == 0, phase


def reports(out):
    return {p.name: p.read_bytes() for p in sorted((out / "reports").glob("*.jsonl"))}


def read_records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_full_run(tmp_path, mnist_dir):
    config = make_config(tmp_path, mnist_dir)
    run_all(config, "--device-threads", "1")
    out = tmp_path / "out"
    (ev,) = read_records(out / "reports" / "eval-test.jsonl")
    assert ev["correct"] + ev["wrong"] + ev["silent"] == ev["total"] == 10
    assert ev["weights"] == {"layer1": "trained", "layer2": "trained", "layer3": "trained"}
    state = json.loads((out / "state.json").read_text())
    assert state["epochs"] == {"layer1": 1, "layer2": 1, "rl": 2}
    layer1 = text_to_tensor(out / "weights" / "layer1.txt")
    assert layer1.shape == (4, 6, 5, 5)
    np.testing.assert_array_equal(text_to_tensor(out / "features" / "layer1" / "feature_002.txt"), layer1[2])
    assert len(list((out / "features" / "layer3").iterdir())) == 10
    assert "finished" in (out / "logs" / "train-rl.log").read_text()
    assert not list(out.rglob("*.tmp"))


def test_rerun_is_byte_identical(tmp_path, mnist_dir):
    config = make_config(tmp_path, mnist_dir)
    run_all(config)
    first = reports(tmp_path / "out")
    run_all(config)
    assert reports(tmp_path / "out") == first
    assert "eval-test.jsonl" in first


def test_disk_cache_matches_memory(tmp_path, mnist_dir):
    config = make_config(tmp_path, mnist_dir)
    run_all(config, "--out", str(tmp_path / "mem"))
    run_all(config, "--cache", "disk", "--out", str(tmp_path / "disk"))
    assert reports(tmp_path / "mem") == reports(tmp_path / "disk")
    assert (tmp_path / "disk" / "cache" / "train" / "manifest.json").exists()


def test_seed_changes_initial_weights(tmp_path, mnist_dir):
    config = make_config(tmp_path, mnist_dir)
    assert main(["encode", "--config", str(config), "--out", str(tmp_path / "a")]) == 0
    assert main(["encode", "--config", str(config), "--seed", "5", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "weights" / "init" / "layer1.txt").read_text()
    b = (tmp_path / "b" / "weights" / "init" / "layer1.txt").read_text()
    assert a != b


def test_eval_on_untrained_checkpoint(tmp_path, mnist_dir):
    config = make_config(tmp_path, mnist_dir)
    assert main(["encode", "--config", str(config)]) == 0
    assert main(["eval", "--config", str(config)]) == 0
    (ev,) = read_records(tmp_path / "out" / "reports" / "eval-test.jsonl")
    assert ev["total"] == 10
    assert set(ev["weights"].values()) == {"init"}


@pytest.mark.parametrize(
    "phase, missing",
    [
        (["train-layer", "--layer", "1"], "state.json"),
        (["train-rl"], "state.json"),
        (["eval"], "state.json"),
    ],
)
def test_phase_before_encode(tmp_path, mnist_dir, capsys, phase, missing):
    config = make_config(tmp_path, mnist_dir)
    assert main(phase + ["--config", str(config)]) == 3
    assert missing in capsys.readouterr().err


def test_phase_order_names_missing_weights(tmp_path, mnist_dir, capsys):
    config = make_config(tmp_path, mnist_dir)
    assert main(["encode", "--config", str(config)]) == 0
    assert main(["train-layer", "--layer", "2", "--config", str(config)]) == 3
    assert "layer1.txt" in capsys.readouterr().err
    assert main(["train-layer", "--layer", "1", "--config", str(config)]) == 0
    assert main(["train-rl", "--config", str(config)]) == 3
    assert "layer2.txt" in capsys.readouterr().err


def test_retraining_a_layer_drops_stale_downstream(tmp_path, mnist_dir):
    config = make_config(tmp_path, mnist_dir)
    run_all(config)
    assert main(["train-layer", "--layer", "1", "--config", str(config)]) == 0
    weights = tmp_path / "out" / "weights"
    assert (weights / "layer1.txt").exists()
    assert not (weights / "layer2.txt").exists() and not (weights / "layer3.txt").exists()


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c.update(colour=True),
        lambda c: c["schedule"].update(rl_epoch=3),
        lambda c: c.update(seed=-1),
        lambda c: c["cache"].update(mode="gpu") if "cache" in c else c.update(cache={"mode": "gpu"}),
        lambda c: c.pop("data"),
    ],
)
def test_schema_rejects(tmp_path, mnist_dir, capsys, mutate):
    config = make_config(tmp_path, mnist_dir)
    cfg = json.loads(config.read_text())
    mutate(cfg)
    config.write_text(json.dumps(cfg))
    assert main(["encode", "--config", str(config)]) == 2
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{")
    assert main(["encode", "--config", str(path)]) == 2


def test_missing_dataset_fails_cleanly(tmp_path):
    config = make_config(tmp_path, tmp_path / "nowhere")
    assert main(["encode", "--config", str(config)]) == 1


def test_layer_overrides(tmp_path, mnist_dir):
    layers = [{"threshold": 12.0, "k": 2}, {"pool": {"window": 2}}, {"a_plus": 0.01, "a_minus": -0.01}]
    config = make_config(tmp_path, mnist_dir, network={"features": [4, 8, 10], "layers": layers})
    run_all(config)
    (ev,) = read_records(tmp_path / "out" / "reports" / "eval-test.jsonl")
    assert ev["total"] == 10


def test_punish_override(tmp_path, mnist_dir):
    layers = [{}, {}, {"upper_bound": 0.9, "punish": {"a_plus": -0.004, "a_minus": 0.0005}}]
    config = make_config(tmp_path, mnist_dir, network={"features": [4, 8, 10], "layers": layers})
    net = network_config(load_run_config(config, None, None, None))
    assert net.layers[2].anti_rule == StdpRule(-0.004, 0.0005, 0.2, 0.9, False)
    default = network_config(load_run_config(make_config(tmp_path, mnist_dir), None, None, None))
    assert default.layers[2].anti_rule == anti_stdp_rule(default.layers[2].rule)
