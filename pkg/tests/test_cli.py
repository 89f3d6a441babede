import contextlib
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from icpexplain.cli import BENCH_COMPONENTS, main
from icpexplain.geometry import RigidTransform, apply_transform
from icpexplain.persistence import load_dataset, load_model, write_ply
from icpexplain.shapes import bunny


def run(*argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main([str(a) for a in argv])
    return code, out.getvalue()


SYNTH = ("synth", "--bases", "sphere", "box", "bunny", "--points", "300", "--per-concept", "12", "--seed", "3")
TRAIN = ("--num-inducing", "6", "--iters", "40", "--mc-samples", "200", "--seed", "1")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    code, out = run(*SYNTH, "--out", root / "ds")
    assert code == 0
    code, out = run("train", "--dataset", root / "ds", "--model-out", root / "model.json",
                    "--embeddings-out", root / "emb.csv", *TRAIN)
    assert code == 0
    return root, json.loads(out)


class TestSynth:
    def test_report_and_determinism(self, workspace, tmp_path):
        root, _ = workspace
        code, out = run(*SYNTH, "--out", tmp_path / "again")
        report = json.loads(out)
        assert report["pairs"] == 36 and report["per_concept"] == {"noise": 12, "pose": 12, "overlap": 12}
        assert load_dataset(tmp_path / "again").manifest_hash == load_dataset(root / "ds").manifest_hash
        assert (tmp_path / "again" / "manifest.json").read_bytes() == (root / "ds" / "manifest.json").read_bytes()

    def test_seed_changes_dataset(self, workspace, tmp_path):
        root, _ = workspace
        args = list(SYNTH)
        args[args.index("--seed") + 1] = "4"
        run(*args, "--out", tmp_path / "other")
        assert load_dataset(tmp_path / "other").manifest_hash != load_dataset(root / "ds").manifest_hash


class TestTrain:
    def test_report(self, workspace):
        root, report = workspace
        assert report["num_train"] + report["num_validation"] == 36
        assert report["kernel"] == "rbf" and report["iterations"] == 40
        assert load_model(root / "model.json").vocabulary.names == ["noise", "pose", "overlap"]
        assert (root / "model.json.manifest.json").is_file()

    def test_byte_identical_rerun(self, workspace, tmp_path):
        root, report = workspace
        code, out = run("train", "--dataset", root / "ds", "--model-out", tmp_path / "m.json", *TRAIN)
        again = json.loads(out)
        assert again["model_hash"] == report["model_hash"]
        assert (tmp_path / "m.json").read_bytes() == (root / "model.json").read_bytes()

    def test_matern_kernel_flag(self, workspace, tmp_path):
        root, _ = workspace
        code, out = run("train", "--dataset", root / "ds", "--kernel", "matern32", "--lr", "0.01",
                        "--iters", "5", "--num-inducing", "4")
        assert code == 0 and json.loads(out)["kernel"] == "matern32"


class TestExplain:
    def pair_files(self, root, label):
        ds = load_dataset(root / "ds")
        for s in ds.manifest["samples"]:
            if s["label"] == label:
                return root / "ds" / s["source"], root / "ds" / s["target"]

    def test_output_contract_and_exit_code(self, workspace):
        root, _ = workspace
        src, tgt = self.pair_files(root, "overlap")
        code, out = run("explain", "--model", root / "model.json", "--source", src, "--target", tgt)
        doc = json.loads(out)
        assert code in (0, 2) and (code == 2) == doc["defer"]
        assert set(doc["scores"]) == {"noise", "pose", "overlap"}
        assert abs(sum(doc["scores"].values()) - 1.0) < 1e-12
        assert doc["action"] in ("AbstainAndQuery", "ReinitializeIcp", "ChangeViewpoint", "FilterCalibrate")
        assert {"transform", "rmse", "uncertainty"} <= set(doc["registration"])
        assert run("explain", "--model", root / "model.json", "--source", src, "--target", tgt)[1] == out

    def test_divergence_exit_code(self, workspace, tmp_path):
        root, _ = workspace
        c = bunny(200)
        write_ply(tmp_path / "a.ply", c)
        write_ply(tmp_path / "b.ply", apply_transform(c, RigidTransform(np.eye(3), [50.0, 0, 0])))
        code, out = run("explain", "--model", root / "model.json", "--source", tmp_path / "a.ply",
                        "--target", tmp_path / "b.ply", "--icp-max-corr-dist", "0.1")
        assert code == 3 and json.loads(out)["error"] == "registration diverged"


class TestAlSimAndDiag:
    def split_csv(self, root):
        lines = (root / "emb.csv").read_text().splitlines()
        header, rows = lines[0], lines[1:]
        for name, part in (("lab.csv", rows[:12]), ("pool.csv", rows[12:28]), ("val.csv", rows[28:])):
            (root / name).write_text("\n".join([header] + part) + "\n")

    def test_target_zero_gives_zero_rounds(self, workspace):
        root, _ = workspace
        self.split_csv(root)
        code, out = run("al-sim", "--model", root / "model.json", "--labeled", root / "lab.csv",
                        "--pool", root / "pool.csv", "--validation", root / "val.csv", "--target", "0")
        assert code == 0
        assert out.splitlines()[0] == "round,cumulative_labels,val_accuracy,mean_bald"
        assert len(out.splitlines()) == 2 and out.splitlines()[1].startswith("0,0,")

    @pytest.mark.parametrize("strategy", ["bald", "random"])
    def test_history_deterministic(self, workspace, strategy):
        root, _ = workspace
        self.split_csv(root)
        args = ("al-sim", "--model", root / "model.json", "--labeled", root / "lab.csv", "--pool",
                root / "pool.csv", "--validation", root / "val.csv", "--target", "1.01", "--rounds-max", "2",
                "--mc-samples", "100", "--retrain-iters", "5", "--strategy", strategy, "--seed", "2")
        first, second = run(*args), run(*args)
        assert first == second and len(first[1].splitlines()) == 4

    def test_diag_from_model(self, workspace):
        root, _ = workspace
        self.split_csv(root)
        args = ("diag", "--model", root / "model.json", "--eval", root / "val.csv", "--train", root / "lab.csv",
                "--uncertainty", "bald", "--seed", "1")
        code, out = run(*args)
        doc = json.loads(out)
        assert code == 0 and set(doc) == {"rho", "auc", "ece", "n"} and doc["n"] == 8
        assert run(*args)[1] == out

    def test_diag_from_records(self, tmp_path):
        (tmp_path / "r.csv").write_text("confidence,uncertainty,correct,distance_to_train\n"
                                        "0.9,0.1,1,0.0\n0.8,0.2,1,1.0\n0.7,0.3,0,2.0\n0.6,0.4,1,3.0\n")
        code, out = run("diag", "--records", tmp_path / "r.csv")
        doc = json.loads(out)
        assert doc["rho"] == 1.0 and doc["auc"] == pytest.approx(11 / 96) and doc["n"] == 4


class TestBench:
    def test_keys_and_values(self, workspace):
        root, _ = workspace
        code, out = run("bench", "--model", root / "model.json", "--dataset", root / "ds", "--repeats", "2",
                        "--pool-size", "12", "--retrain-labels", "36", "--mc-samples", "50", "--iters", "3")
        doc = json.loads(out)
        assert code == 0 and set(doc["mean_seconds"]) == set(BENCH_COMPONENTS)
        assert all(v > 0 for v in doc["mean_seconds"].values())


class TestUsage:
    def test_unknown_command(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with pytest.raises(SystemExit) as err:
                main(["frobnicate"])
        assert err.value.code == 1

    def test_missing_inputs(self, tmp_path):
        with contextlib.redirect_stderr(io.StringIO()):
            assert run("al-sim")[0] == 1
            assert run("train", "--dataset", tmp_path)[0] == 1

    def test_help_lists_commands(self):
        out = subprocess.run([sys.executable, "-m", "icpexplain", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for cmd in ("synth", "train", "explain", "al-sim", "diag", "bench"):
            assert cmd in out.stdout
