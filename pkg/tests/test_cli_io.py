import hashlib
import json

import numpy as np
import pytest

from phast import io
from phast.cli import _save, main, make_trainer, restore_trainer
from phast.config import ExperimentConfig, from_dict, to_dict
from phast.envs import generate_dataset, get_env
from phast.errors import ConfigError
from phast.metrics import is_registered_key
from phast.training import validation_mse

TINY = {
    "env": "pendulum_windy",
    "regime": "KNOWN",
    "seeds": [0, 1],
    "data": {"sizes": {"train": 6, "val": 3, "test": 3}, "T": 115},
    "model": {"damping_hidden": 8, "observer_hidden": 8},
    "train": {"epochs": 2, "batch_size": 4, "eval_every": 1},
}

CONTROL = {
    "seeds": [0],
    "control": {"sigmas": [0.0, 0.01], "methods": ["oracle", "fd", "map"], "trials_per_regime": 2, "T_ctl": 2.0},
}


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "cfg.json", TINY)
    out = root / "out"
    for cmd in ("gen-data", "train", "eval"):
        assert main([cmd, "--config", cfg, "--out", str(out)]) == 0
    return root, out


class TestPhds:
    def test_round_trip(self, tmp_path, rng):
        q, p = rng.normal(size=(3, 7, 2)), rng.normal(size=(3, 7, 2))
        io.write_phds(tmp_path / "a.phds", "cartpole_windy", 0.02, q, p)
        name, dt, q2, p2 = io.read_phds(tmp_path / "a.phds")
        assert name == "cartpole_windy" and dt == 0.02
        assert q.tobytes() == q2.tobytes() and p.tobytes() == p2.tobytes()

    def test_header_layout(self, tmp_path):
        q = np.zeros((4, 5, 1))
        io.write_phds(tmp_path / "a.phds", "rlc", 0.02, q, q)
        raw = (tmp_path / "a.phds").read_bytes()
        assert raw[:4] == b"PHDS"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 3 and raw[12:15] == b"rlc"
        n, T, N = (int.from_bytes(raw[15 + 4 * i:19 + 4 * i], "little") for i in range(3))
        assert (n, T, N) == (1, 5, 4)
        assert len(raw) == 15 + 12 + 8 + 2 * 4 * 5 * 8

    def test_rejects_corrupt(self, tmp_path):
        path = tmp_path / "a.phds"
        io.write_phds(path, "rlc", 0.02, np.zeros((1, 2, 1)), np.zeros((1, 2, 1)))
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(Exception, match="trailing"):
            io.read_phds(path)
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(Exception, match="not a PHDS"):
            io.read_phds(path)

    def test_no_overwrite_without_force(self, tmp_path):
        z = np.zeros((1, 2, 1))
        io.write_phds(tmp_path / "a.phds", "rlc", 0.02, z, z)
        with pytest.raises(FileExistsError):
            io.write_phds(tmp_path / "a.phds", "rlc", 0.02, z, z)
        io.write_phds(tmp_path / "a.phds", "rlc", 0.02, z + 1, z, force=True)
        assert io.read_phds(tmp_path / "a.phds")[2][0, 0, 0] == 1.0

    def test_dataset_round_trip(self, tmp_path):
        ds = generate_dataset(get_env("cartpole_windy"), {"train": 3, "val": 2, "test": 2}, seed=4, T=20)
        io.save_dataset(ds, tmp_path)
        back = io.load_dataset(tmp_path)
        assert back.env == ds.env and back.seed == 4
        for split in ("train", "val", "test"):
            assert back[split].q.tobytes() == ds[split].q.tobytes()
            assert back[split].p.tobytes() == ds[split].p.tobytes()


class TestJson:
    def test_floats_lossless(self, rng):
        values = list(rng.normal(size=50) * 10.0 ** rng.integers(-300, 300, size=50)) + [0.1, 1 / 3, 5e-324]
        back = json.loads(io.dumps(values))
        assert all(a == b for a, b in zip(values, back))

    def test_seventeen_digits(self):
        assert io.dumps(0.1, indent=None) == "0.10000000000000001"


class TestGenData:
    def test_files_and_counts(self, pipeline):
        _, out = pipeline
        d = out / "data" / "pendulum_windy" / "seed42"
        for split, count in (("train", 6), ("val", 3), ("test", 3)):
            name, _, q, _ = io.read_phds(d / f"{split}.phds")
            assert name == "pendulum_windy" and q.shape == (count, 115, 1)
            side = io.read_json(d / f"{split}.json")
            assert side["seed"] == 42 and side["n_trajectories"] == count

    def test_same_seed_same_hash(self, pipeline, tmp_path):
        root, out = pipeline
        assert main(["gen-data", "--config", str(root / "cfg.json"), "--out", str(tmp_path)]) == 0
        rel = "data/pendulum_windy/seed42"
        for name in ("train.phds", "test.phds", "train.json"):
            assert sha(tmp_path / rel / name) == sha(out / rel / name)

    def test_force_required(self, pipeline):
        root, out = pipeline
        assert main(["gen-data", "--config", str(root / "cfg.json"), "--out", str(out)]) == 2
        assert main(["gen-data", "--config", str(root / "cfg.json"), "--out", str(out), "--force"]) == 0

    def test_out_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PHAST_OUT_DIR", str(tmp_path / "envout"))
        cfg = write_config(tmp_path / "c.json", {**TINY, "env": "rlc"})
        assert main(["gen-data", "--config", cfg]) == 0
        assert (tmp_path / "envout" / "data" / "rlc" / "seed42" / "train.phds").exists()


class TestTrain:
    def test_checkpoint_round_trip(self, pipeline):
        _, out = pipeline
        cfg = from_dict(TINY)
        ds = io.load_dataset(out / "data" / "pendulum_windy" / "seed42")
        ckpt = io.load_checkpoint(out / "pendulum_windy" / "KNOWN" / "seed0" / "checkpoint.json")
        trainer = make_trainer(cfg, ds, 0)
        trainer.params.load(ckpt["params"])
        val = validation_mse(trainer.model, trainer.observer, trainer.canon, ds["val"].q, ds.env.dt)
        assert abs(val - ckpt["meta"]["best_val_mse"]) <= 1e-15
        assert ckpt["meta"]["best_epoch"] in (1, 2)

    def test_known_trainable_flags(self, pipeline):
        _, out = pipeline
        ckpt = io.load_checkpoint(out / "pendulum_windy" / "KNOWN" / "seed0" / "checkpoint.json")
        flags = ckpt["trainable"]
        assert not any(v for k, v in flags.items() if k.startswith(("V.", "M.")))
        assert any(v for k, v in flags.items() if k.startswith("D."))

    def test_history_lines(self, pipeline):
        _, out = pipeline
        hist = io.read_jsonl(out / "pendulum_windy" / "KNOWN" / "seed1" / "history.jsonl")
        assert [h["epoch"] for h in hist] == [1, 2]

    def test_existing_checkpoint_needs_flag(self, pipeline):
        root, out = pipeline
        assert main(["train", "--config", str(root / "cfg.json"), "--out", str(out)]) == 2

    def test_resume_reproduces_next_epochs(self, pipeline, tmp_path):
        _, out = pipeline
        cfg = from_dict({**TINY, "train": {**TINY["train"], "epochs": 4}})
        ds = io.load_dataset(out / "data" / "pendulum_windy" / "seed42")
        full = make_trainer(cfg, ds, 0).run()

        part = make_trainer(cfg, ds, 0).run(until=2)
        _save(part, cfg, tmp_path / "ckpt.json", 0)
        resumed = restore_trainer(make_trainer(cfg, ds, 0), io.load_checkpoint(tmp_path / "ckpt.json")).run()
        assert resumed.history == full.history
        for k, v in full.params.snapshot().items():
            assert np.array_equal(v, resumed.params[k].value), k

    def test_dataset_mismatch(self, pipeline, tmp_path):
        _, out = pipeline
        bad = tmp_path / "data" / "pendulum_windy" / "seed42"
        ds = generate_dataset(get_env("pendulum_cons"), {"train": 2, "val": 2, "test": 2}, seed=42, T=5)
        io.save_dataset(ds, bad)
        cfg = write_config(tmp_path / "c.json", TINY)
        assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2


class TestEval:
    def test_metrics_registered(self, pipeline):
        _, out = pipeline
        rep = io.read_json(out / "pendulum_windy" / "KNOWN" / "seed0" / "metrics.json")
        assert all(is_registered_key(k) for k in rep)
        assert {"damping_r2", "rollout_theta_wrap_mse_h100"} <= rep.keys()

    def test_mean_std_rows(self, pipeline):
        _, out = pipeline
        rows = io.read_csv(out / "pendulum_windy" / "KNOWN" / "metrics.csv")
        assert [r["seed"] for r in rows] == ["0", "1", "mean", "std"]
        for key in ("theta_wrap_mse", "damping_r2", "rollout_theta_wrap_mse_h100"):
            vals = np.array([float(rows[i][key]) for i in range(2)])
            assert float(rows[2][key]) == pytest.approx(vals.mean(), rel=1e-15)
            assert float(rows[3][key]) == pytest.approx(vals.std(), rel=1e-12, abs=1e-300)

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        root, out = pipeline
        for cmd in ("train", "eval"):
            assert main([cmd, "--config", str(root / "cfg.json"), "--out", str(tmp_path)]) == 0
        for rel in ("pendulum_windy/KNOWN/metrics.csv", "pendulum_windy/KNOWN/seed1/checkpoint.json",
                    "pendulum_windy/KNOWN/seed0/history.jsonl"):
            assert sha(tmp_path / rel) == sha(out / rel)

    def test_parallel_jobs_match(self, pipeline, tmp_path):
        root, out = pipeline
        for cmd in ("train", "eval"):
            assert main([cmd, "--config", str(root / "cfg.json"), "--out", str(tmp_path), "--jobs", "2"]) == 0
        assert sha(tmp_path / "pendulum_windy/KNOWN/metrics.csv") == sha(out / "pendulum_windy/KNOWN/metrics.csv")


class TestControlCommand:
    def test_grid(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", CONTROL)
        assert main(["control", "--config", cfg, "--out", str(tmp_path)]) == 0
        trials = io.read_jsonl(tmp_path / "control" / "control_trials.jsonl")
        summary = io.read_csv(tmp_path / "control" / "control_summary.csv")
        assert len(trials) == 2 * 3 * 10
        assert len({t["config_hash"] for t in trials}) == 1
        for row in summary:
            recs = [t for t in trials if t["method"] == row["method"] and t["sigma"] == float(row["sigma"])]
            assert float(row["effort"]) == pytest.approx(np.mean([t["effort"] for t in recs]), rel=1e-15)
            assert float(row["success"]) == np.mean([t["success"] for t in recs])
        oracle = [r for r in summary if r["method"] == "oracle" and float(r["sigma"]) == 0.0]
        assert float(oracle[0]["velocity_error"]) == 0.0
        # same initial states for every method
        starts = {(t["regime"], t["trial"]): t["q0"] for t in trials}
        assert all(starts[(t["regime"], t["trial"])] == t["q0"] for t in trials)
        assert main(["control", "--config", cfg, "--out", str(tmp_path)]) == 2


class TestReport:
    def test_merge_and_order(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir()
        b.mkdir()
        io.write_csv(a / "metrics.csv", [{"env": "rlc", "regime": "UNKNOWN", "seed": 1, "mse": 0.5},
                                         {"env": "rlc", "regime": "UNKNOWN", "seed": "mean", "mse": 0.5}],
                     ["env", "regime", "seed", "mse"])
        io.write_csv(b / "metrics.csv", [{"env": "heat", "regime": "UNKNOWN", "seed": 0, "damping_r2": 0.2}],
                     ["env", "regime", "seed", "damping_r2"])
        assert main(["report", str(b), str(a), "--out", str(tmp_path / "rep")]) == 0
        rows = io.read_csv(tmp_path / "rep" / "report.csv")
        assert len(rows) == 2
        assert [r["env"] for r in rows] == ["heat", "rlc"]
        assert rows[0]["mse"] == "" and rows[1]["damping_r2"] == ""

    def test_nothing_to_merge(self, tmp_path):
        assert main(["report", str(tmp_path), "--out", str(tmp_path / "rep")]) == 2


class TestConfig:
    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            from_dict({"learning_rate": 1e-3})
        with pytest.raises(ConfigError):
            from_dict({"train": {"lr": 1e-3, "warmup": 5}})

    def test_unknown_key_exit_code(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"env": "pendulum_windy", "colour": "blue"})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert not (tmp_path / "data").exists()

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            from_dict({"env": "robot_arm"})
        with pytest.raises(ConfigError):
            from_dict({"regime": "SOMETIMES"})

    def test_flags_override_file(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {**TINY, "env": "rlc", "seeds": [3]})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path), "--env", "heat"]) == 0
        assert (tmp_path / "data" / "heat").exists() and not (tmp_path / "data" / "rlc").exists()

    def test_round_trip(self):
        cfg = from_dict(TINY)
        assert from_dict(to_dict(cfg)) == cfg
        assert from_dict({}) == ExperimentConfig()

    def test_effective_config_written(self, pipeline):
        _, out = pipeline
        saved = io.read_json(out / "pendulum_windy" / "KNOWN" / "config.json")
        assert from_dict(saved) == from_dict(TINY)
