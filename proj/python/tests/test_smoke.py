import json
import math

import numpy as np
import pytest

import stemrec


def test_auc_and_logloss():
    assert stemrec.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert stemrec.auc([0.2, 0.3], [1, 1]) is None
    assert stemrec.logloss([0.75, 0.75], [1, 0]) == pytest.approx(0.836988, abs=1e-6)
    with pytest.raises(stemrec.EmptyInputError):
        stemrec.logloss([], [])


def test_mtl_gain():
    gain = stemrec.mtl_gain({0: 0.8480, 1: 0.8480}, [{0: 0.8433}, {1: 0.8433}])
    assert gain == pytest.approx(0.0047)
    with pytest.raises(stemrec.ConfigError):
        stemrec.mtl_gain({0: 0.8, 1: 0.8}, [{0: 0.8}])


def test_buckets():
    b = stemrec.equal_freq_buckets(np.arange(20.0), 10)
    assert np.bincount(b).tolist() == [2] * 10
    assert [stemrec.classify_delta(d) for d in (-5, 0, 7)] == [
        "B_Overwhelming",
        "Comparable",
        "A_Overwhelming",
    ]
    rng = np.random.default_rng(0)
    a = rng.random(300)
    split = stemrec.subset_split(a, 1.0 - a)
    assert len(split["subset"]) == 300
    assert set(split["subset"]) <= {"B_Overwhelming", "Comparable", "A_Overwhelming"}


def test_synthetic():
    d = stemrec.generate_synthetic(num_samples=20000, rho=-0.8, positive_ratios=[0.28, 0.05],
                                   seed=3)
    assert d["features"].shape == (20000, 4)
    ratios = d["labels"].mean(axis=0)
    assert abs(ratios[0] - 0.28) < 0.02
    assert abs(ratios[1] - 0.05) < 0.02
    p = d["probabilities"]
    assert np.corrcoef(p[:, 0], p[:, 1])[0, 1] < 0
    again = stemrec.generate_synthetic(num_samples=20000, rho=-0.8, positive_ratios=[0.28, 0.05],
                                       seed=3)
    assert np.array_equal(d["features"], again["features"])


def test_contradictory_pairs():
    assert stemrec.pair_distance(np.array([[0.0, 0.0], [3.0, 4.0]]), 0, 1) == 5.0
    rng = np.random.default_rng(1)
    a = rng.normal(size=(300, 8))
    b = rng.normal(size=(300, 8))
    pairs = np.array([(u, 100 + i) for u in range(100) for i in range(200)], dtype=np.uint32)
    selected, frac = stemrec.select_contradictory(pairs, a, b)
    assert abs(frac - 0.16) <= 0.02
    assert selected.shape[1] == 2
    none, zero = stemrec.select_contradictory(pairs, a, a)
    assert len(none) == 0 and zero == 0.0


def test_cli_pipeline(tmp_path):
    cfg = {
        "seed": 2,
        "data": {
            "synthetic": {"num_users": 60, "num_items": 60, "num_samples": 2000, "rho": -0.5,
                          "positive_ratios": [0.3, 0.1]},
            "min_count": 2,
        },
        "model": {"variant": "stem", "embedding_dim": 4, "expert_hidden": [8],
                  "tower_hidden": [4]},
        "train": {"learning_rate": 0.01, "batch_size": 128, "max_epochs": 1},
    }
    gen = tmp_path / "gen.json"
    gen.write_text(json.dumps(cfg))
    rc, _, err = stemrec.run_cli(["gen-data", "--config", str(gen), "--out",
                                  str(tmp_path / "data")])
    assert rc == 0, err
    cfg["data"] = {"dir": str(tmp_path / "data")}
    tr = tmp_path / "train.json"
    tr.write_text(json.dumps(cfg))
    rc, _, err = stemrec.run_cli(["train", "--config", str(tr), "--out", str(tmp_path / "m")])
    assert rc == 0, err
    scores = stemrec.predict(tmp_path / "m", tmp_path / "data" / "test.csv")
    assert scores.shape[1] == 2
    assert np.all((scores > 0) & (scores < 1))
    rc, _, err = stemrec.run_cli(["train", "--config", str(tmp_path / "nope.json")])
    assert rc == 2 and "cannot open" in err
