import os

import numpy as np
import pytest

from genhmm import cli
from genhmm.data import SequenceDataset, make_synthetic, save_dataset
from genhmm.gmm import GmmHmm
from genhmm.hmm import HmmCore, uniform_mixture


def two_class_truth():
    """Two well-separated Gaussian-emission chains."""
    models = []
    for label, center in (("lo", -6.0), ("hi", 6.0)):
        core = HmmCore(np.array([1.0, 0.0]),
                       np.array([[0.7, 0.3], [0.0, 1.0]]))
        means = np.array([[[center, 0.0]], [[center, 3.0]]])
        models.append(GmmHmm(label, core, uniform_mixture(2, 1),
                             means, np.ones((2, 1, 2))))
    return models


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    truth = two_class_truth()
    train = make_synthetic(truth, 12, (6, 10), seed=1)
    test = make_synthetic(truth, 6, (6, 10), seed=2)
    train_path = os.path.join(root, "train.txt")
    test_path = os.path.join(root, "test.txt")
    save_dataset(train, train_path)
    save_dataset(test, test_path)
    return str(train_path), str(test_path)


FAST = ["--model", "gmmhmm", "--k", "1", "--max-em", "5", "--seed", "3"]
FAST_GEN = ["--model", "genhmm", "--k", "1", "--blocks", "1", "--hidden", "4",
            "--max-em", "2", "--inner-batches", "1", "--seed", "3"]


class TestTrain:
    def test_writes_one_checkpoint_per_class_and_log(self, toy_files, tmp_path):
        train_path, _ = toy_files
        out = str(tmp_path / "run")
        code = cli.main(["train", "--data", train_path, "--out", out] + FAST)
        assert code == 0
        assert sorted(f for f in os.listdir(out) if f.endswith(".model.json")) \
            == ["hi.model.json", "lo.model.json"]
        log = open(os.path.join(out, "train.log")).read()
        assert "loglik_frame=" in log
        assert os.path.exists(os.path.join(out, "run.kv"))

    def test_same_seed_reruns_are_byte_identical(self, toy_files, tmp_path):
        train_path, _ = toy_files
        out_a = str(tmp_path / "a")
        out_b = str(tmp_path / "b")
        for out in (out_a, out_b):
            assert cli.main(["train", "--data", train_path, "--out", out]
                            + FAST_GEN) == 0
        for name in ("hi.model.json", "lo.model.json"):
            a = open(os.path.join(out_a, name), "rb").read()
            b = open(os.path.join(out_b, name), "rb").read()
            assert a == b

    def test_interrupted_run_resumes_with_matching_history(self, toy_files,
                                                           tmp_path):
        train_path, _ = toy_files
        straight = str(tmp_path / "straight")
        resumed = str(tmp_path / "resumed")
        full = ["--model", "genhmm", "--k", "1", "--blocks", "1",
                "--hidden", "4", "--inner-batches", "1", "--seed", "5",
                "--tol", "1e-12"]
        assert cli.main(["train", "--data", train_path, "--out", straight,
                         "--max-em", "4"] + full) == 0
        # "interrupt" after two iterations, then continue to four
        assert cli.main(["train", "--data", train_path, "--out", resumed,
                         "--max-em", "2"] + full) == 0
        assert cli.main(["train", "--data", train_path, "--out", resumed,
                         "--max-em", "4"] + full) == 0
        for name in ("hi.model.json", "lo.model.json"):
            a = open(os.path.join(straight, name), "rb").read()
            b = open(os.path.join(resumed, name), "rb").read()
            assert a == b
        import json
        for name in ("hi.train.json", "lo.train.json"):
            hist_a = json.load(open(os.path.join(straight, name)))["history_frame"]
            hist_b = json.load(open(os.path.join(resumed, name)))["history_frame"]
            assert hist_a == hist_b
        # the log proves it resumed: iterations 0..3 once per class, no restart
        log = open(os.path.join(resumed, "train.log")).read()
        for label in ("hi", "lo"):
            iters = [int(line.split("iter=")[1].split()[0])
                     for line in log.splitlines()
                     if line.startswith(f"class={label} ")]
            assert iters == [0, 1, 2, 3]

    def test_threads_flag_trains_all_classes(self, toy_files, tmp_path):
        train_path, _ = toy_files
        out = str(tmp_path / "par")
        code = cli.main(["train", "--data", train_path, "--out", out,
                         "--threads", "2"] + FAST)
        assert code == 0
        assert len([f for f in os.listdir(out) if f.endswith(".model.json")]) == 2


class TestEval:
    def test_separable_set_scores_perfectly(self, toy_files, tmp_path):
        train_path, test_path = toy_files
        models_dir = str(tmp_path / "m")
        report_dir = str(tmp_path / "r")
        assert cli.main(["train", "--data", train_path, "--out", models_dir]
                        + FAST) == 0
        assert cli.main(["eval", "--models-dir", models_dir, "--data",
                         test_path, "--out", report_dir, "--seed", "3"]) == 0
        kv = dict(line.split(" = ", 1) for line in
                  open(os.path.join(report_dir, "report.kv")).read()
                  .strip().splitlines())
        assert float(kv["accuracy"]) == 1.0
        assert kv["confusion.hi"] == "6,0"
        assert kv["confusion.lo"] == "0,6"
        assert os.path.exists(os.path.join(report_dir, "report.txt"))

    def test_noise_flags_change_the_data(self, toy_files, tmp_path):
        train_path, test_path = toy_files
        models_dir = str(tmp_path / "m")
        assert cli.main(["train", "--data", train_path, "--out", models_dir]
                        + FAST) == 0
        clean_dir = str(tmp_path / "clean")
        noisy_dir = str(tmp_path / "noisy")
        assert cli.main(["eval", "--models-dir", models_dir, "--data", test_path,
                         "--out", clean_dir, "--seed", "3"]) == 0
        assert cli.main(["eval", "--models-dir", models_dir, "--data", test_path,
                         "--out", noisy_dir, "--seed", "3",
                         "--noise", "white", "--snr-db", "-10"]) == 0
        clean = open(os.path.join(clean_dir, "report.kv")).read()
        noisy = open(os.path.join(noisy_dir, "report.kv")).read()
        assert "snr_db" in noisy
        assert clean != noisy


class TestBench:
    def test_grid_of_one_produces_single_cell(self, toy_files, tmp_path):
        train_path, test_path = toy_files
        out = str(tmp_path / "bench")
        code = cli.main(["bench", "--data", train_path, "--test", test_path,
                         "--out", out, "--k-grid", "1", "--models", "gmmhmm",
                         "--max-em", "5", "--seed", "3"])
        assert code == 0
        assert os.path.isdir(os.path.join(out, "gmmhmm_k1"))
        kv = open(os.path.join(out, "bench.kv")).read()
        assert "accuracy.gmmhmm.k1.clean" in kv
        assert os.path.exists(os.path.join(out, "bench.txt"))

    def test_snr_grid_adds_variants(self, toy_files, tmp_path):
        train_path, test_path = toy_files
        out = str(tmp_path / "bench2")
        code = cli.main(["bench", "--data", train_path, "--test", test_path,
                         "--out", out, "--k-grid", "1", "--models", "gmmhmm",
                         "--snr-grid", "0,20", "--max-em", "4", "--seed", "3"])
        assert code == 0
        kv = open(os.path.join(out, "bench.kv")).read()
        assert "accuracy.gmmhmm.k1.snr0" in kv
        assert "accuracy.gmmhmm.k1.snr20" in kv


class TestConfigFile:
    def test_file_values_used_and_flags_override(self, toy_files, tmp_path):
        train_path, _ = toy_files
        conf = tmp_path / "run.conf"
        conf.write_text("model = gmmhmm\nmax-em = 3\nseed = 11  # comment\n")
        out = str(tmp_path / "out")
        code = cli.main(["train", "--config", str(conf), "--data", train_path,
                         "--out", out, "--seed", "12"])
        assert code == 0
        run_kv = open(os.path.join(out, "run.kv")).read()
        assert "model = gmmhmm" in run_kv
        assert "seed = 12" in run_kv  # flag wins
        assert "max_em = 3" in run_kv

    def test_unknown_key_rejected(self, toy_files, tmp_path):
        train_path, _ = toy_files
        conf = tmp_path / "bad.conf"
        conf.write_text("nonsense = 1\n")
        code = cli.main(["train", "--config", str(conf), "--data", train_path,
                         "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_CONFIG


class TestExitCodes:
    def test_config_error(self, toy_files, tmp_path):
        train_path, _ = toy_files
        code = cli.main(["train", "--data", train_path,
                         "--out", str(tmp_path / "o"), "--k", "-1"])
        assert code == cli.EXIT_CONFIG

    def test_data_error(self, tmp_path):
        code = cli.main(["train", "--data", str(tmp_path / "missing.txt"),
                         "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_DATA

    def test_numerical_error(self, toy_files, tmp_path, monkeypatch):
        from genhmm.model import TrainingError

        def boom(*args, **kwargs):
            raise TrainingError("synthetic failure")

        monkeypatch.setattr(cli, "train_one_class", boom)
        train_path, _ = toy_files
        code = cli.main(["train", "--data", train_path,
                         "--out", str(tmp_path / "o")] + FAST)
        assert code == cli.EXIT_NUMERIC

    def test_eval_width_mismatch_is_data_error(self, toy_files, tmp_path):
        train_path, _ = toy_files
        models_dir = str(tmp_path / "m")
        assert cli.main(["train", "--data", train_path, "--out", models_dir]
                        + FAST) == 0
        wide = SequenceDataset([("lo", np.zeros((2, 5)))])
        wide_path = str(tmp_path / "wide.txt")
        save_dataset(wide, wide_path)
        code = cli.main(["eval", "--models-dir", models_dir, "--data",
                         wide_path, "--out", str(tmp_path / "r")])
        assert code == cli.EXIT_DATA
