import json

import numpy as np
import pytest

from protofuse.cli import main
from protofuse.data import load_embeddings
from protofuse.knowledge import load_knowledge
from protofuse.neural import load_checkpoint
from protofuse.patnet import PartAttributeTransferNet


def run(*argv):
    return main(list(argv))


GEN_ARGS = [
    "--n-base", "6", "--n-novel", "5", "--n-attributes", "10",
    "--attrs-per-class", "3", "--dim", "8", "--samples-per-class", "20",
]


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliworld")
    emb = root / "emb.bin"
    kbp = root / "kb.json"
    assert run("gen-synthetic", "--out-embeddings", str(emb),
               "--out-knowledge", str(kbp), *GEN_ARGS, "--seed", "5") == 0
    return root, emb, kbp


@pytest.fixture(scope="module")
def trained(world):
    root, emb, kbp = world
    out = root / "run"
    common = ["--embeddings", str(emb), "--knowledge", str(kbp),
              "--output-dir", str(out), "--seed", "5"]
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "patnet": {"embed_units": 24, "head_hidden": 24, "epochs": 120},
        "protocom": {"encoder_units": 16, "aggregator_hidden": 8,
                     "decoder_hidden": 16, "episodes": 250},
        "finetune": {"episodes": 8, "n_way": 3, "m_query": 5, "lr": 0.001},
    }))
    assert run("train", "patnet", "--config", str(cfg), *common) == 0
    assert run("train", "protocom", "--config", str(cfg), *common) == 0
    assert run("train", "finetune", "--config", str(cfg), *common,
               "--protocom-checkpoint", str(out / "protocom.ckpt"),
               "--fusion", "improved_em", "--setting", "transductive") == 0
    return root, emb, kbp, out


class TestGenSynthetic:
    def test_files_load_round_trip(self, world):
        _, emb, kbp = world
        kb = load_knowledge(kbp)
        store = load_embeddings(emb, kb=kb)
        assert store.dim == 8
        assert len(kb.classes) == 11

    def test_same_seed_byte_identical(self, tmp_path):
        pairs = []
        for name in ("a", "b"):
            emb = tmp_path / f"{name}.bin"
            kbp = tmp_path / f"{name}.json"
            assert run("gen-synthetic", "--out-embeddings", str(emb),
                       "--out-knowledge", str(kbp), *GEN_ARGS, "--seed", "7") == 0
            pairs.append((emb.read_bytes(), kbp.read_bytes()))
        assert pairs[0] == pairs[1]

    def test_zero_dim_is_usage_error(self, tmp_path):
        code = run("gen-synthetic", "--out-embeddings", str(tmp_path / "e"),
                   "--out-knowledge", str(tmp_path / "k"), "--dim", "0")
        assert code == 1


class TestTrain:
    def test_patnet_report_shows_improvement(self, trained):
        _, _, _, out = trained
        report = json.loads((out / "patnet_report.json").read_text())
        assert report["losses"][-1] < report["losses"][0]

    def test_finetune_without_protocom_is_error(self, world, tmp_path, capsys):
        root, emb, kbp = world
        code = run("train", "finetune", "--embeddings", str(emb),
                   "--knowledge", str(kbp), "--output-dir", str(tmp_path),
                   "--patnet-checkpoint", str(tmp_path / "nope.ckpt"))
        assert code == 2
        assert "missing prerequisite" in capsys.readouterr().err

    def test_zero_epochs_checkpoint_equals_initialization(self, world, tmp_path):
        root, emb, kbp = world
        out = tmp_path / "zero"
        assert run("train", "patnet", "--embeddings", str(emb),
                   "--knowledge", str(kbp), "--output-dir", str(out),
                   "--epochs", "0", "--seed", "11") == 0
        loaded = PartAttributeTransferNet.load(out / "patnet.ckpt")
        kb = load_knowledge(kbp)
        fresh = PartAttributeTransferNet(seed=11).build(kb.embedding_dim, 8)
        np.testing.assert_array_equal(loaded.params_flat(), fresh.params_flat())


class TestEval:
    def test_inductive_mean_runs(self, trained, tmp_path):
        root, emb, kbp, out = trained
        rpt = tmp_path / "report.json"
        code = run("eval", "--embeddings", str(emb), "--knowledge", str(kbp),
                   "--patnet-checkpoint", str(out / "patnet.ckpt"),
                   "--protocom-checkpoint", str(out / "finetune.ckpt"),
                   "--fusion", "mean", "--setting", "inductive",
                   "--n-way", "3", "--m-query", "5", "--n-episodes", "15",
                   "--seed", "3", "--out", str(rpt))
        assert code == 0
        payload = json.loads(rpt.read_text())
        assert 0.0 <= payload["mean_accuracy"] <= 1.0
        assert payload["fusion"]["method"] == "mean"

    def test_transductive_method_in_inductive_setting_is_error(self, trained, capsys):
        root, emb, kbp, out = trained
        code = run("eval", "--embeddings", str(emb), "--knowledge", str(kbp),
                   "--patnet-checkpoint", str(out / "patnet.ckpt"),
                   "--protocom-checkpoint", str(out / "finetune.ckpt"),
                   "--fusion", "improved_em", "--setting", "inductive",
                   "--n-episodes", "5")
        assert code == 2
        assert "inductive" in capsys.readouterr().err

    def test_fidelity_triple_in_report(self, trained, tmp_path):
        root, emb, kbp, out = trained
        rpt = tmp_path / "fid.json"
        code = run("fidelity", "--embeddings", str(emb), "--knowledge", str(kbp),
                   "--patnet-checkpoint", str(out / "patnet.ckpt"),
                   "--protocom-checkpoint", str(out / "finetune.ckpt"),
                   "--fusion", "improved_em", "--setting", "transductive",
                   "--n-way", "3", "--m-query", "5", "--n-episodes", "10",
                   "--seed", "4", "--out", str(rpt))
        assert code == 0
        payload = json.loads(rpt.read_text())
        assert set(payload["fidelity"]) == {"mean_based", "completed", "fused"}

    def test_config_file_supplies_episode_shape_and_fusion(self, trained, tmp_path):
        root, emb, kbp, out = trained
        cfg = tmp_path / "ev.json"
        cfg.write_text(json.dumps({
            "episode": {"n_way": 3, "k_shot": 1, "m_query": 5, "n_episodes": 7},
            "fusion": {"method": "two_step", "setting": "transductive", "lambda": 5.0},
            "seed": 19,
        }))
        rpt = tmp_path / "cfgrun.json"
        code = run("eval", "--config", str(cfg), "--embeddings", str(emb),
                   "--knowledge", str(kbp),
                   "--patnet-checkpoint", str(out / "patnet.ckpt"),
                   "--protocom-checkpoint", str(out / "finetune.ckpt"),
                   "--out", str(rpt))
        assert code == 0
        payload = json.loads(rpt.read_text())
        assert payload["episode"] == {"n_way": 3, "k_shot": 1, "m_query": 5, "n_episodes": 7}
        assert payload["fusion"]["method"] == "two_step"
        assert payload["fusion"]["lambda"] == 5.0
        assert payload["seed"] == 19

    def test_rerun_byte_identical(self, trained, tmp_path):
        root, emb, kbp, out = trained
        blobs = []
        for name in ("r1.json", "r2.json"):
            rpt = tmp_path / name
            assert run("eval", "--embeddings", str(emb), "--knowledge", str(kbp),
                       "--patnet-checkpoint", str(out / "patnet.ckpt"),
                       "--protocom-checkpoint", str(out / "finetune.ckpt"),
                       "--fusion", "improved_em", "--setting", "transductive",
                       "--n-way", "3", "--m-query", "5", "--n-episodes", "12",
                       "--seed", "9", "--out", str(rpt)) == 0
            blobs.append(rpt.read_bytes())
        assert blobs[0] == blobs[1]


class TestNoiseSweep:
    def test_zero_gamma_matches_eval(self, trained, tmp_path):
        root, emb, kbp, out = trained
        sweep = tmp_path / "sweep.json"
        evalr = tmp_path / "eval.json"
        base = ["--embeddings", str(emb), "--knowledge", str(kbp),
                "--patnet-checkpoint", str(out / "patnet.ckpt"),
                "--protocom-checkpoint", str(out / "finetune.ckpt"),
                "--n-way", "3", "--m-query", "5", "--n-episodes", "10",
                "--seed", "21"]
        assert run("noise-sweep", *base, "--gammas", "0,0.3", "--out", str(sweep)) == 0
        assert run("eval", *base, "--fusion", "improved_em",
                   "--setting", "transductive", "--out", str(evalr)) == 0
        sweep_payload = json.loads(sweep.read_text())
        eval_payload = json.loads(evalr.read_text())
        assert sweep_payload["accuracy"]["gauss"][0] == eval_payload["mean_accuracy"]

    def test_empty_gamma_list_is_usage_error(self, trained):
        root, emb, kbp, out = trained
        code = run("noise-sweep", "--embeddings", str(emb), "--knowledge", str(kbp),
                   "--patnet-checkpoint", str(out / "patnet.ckpt"),
                   "--protocom-checkpoint", str(out / "finetune.ckpt"),
                   "--gammas", "")
        assert code == 1


class TestNumericalFailure:
    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergent_training_exits_three(self, world, tmp_path, capsys):
        root, emb, kbp = world
        cfg = tmp_path / "hot.json"
        cfg.write_text(json.dumps({
            "patnet": {"embed_units": 8, "head_hidden": 8, "epochs": 5},
            "protocom": {"encoder_units": 16, "aggregator_hidden": 8,
                         "decoder_hidden": 16, "episodes": 400, "lr": 50.0},
        }))
        out = tmp_path / "hot"
        common = ["--embeddings", str(emb), "--knowledge", str(kbp),
                  "--output-dir", str(out), "--seed", "5", "--config", str(cfg)]
        assert run("train", "patnet", *common) == 0
        code = run("train", "protocom", *common)
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err


class TestEnvSeed:
    def test_env_seed_used_when_no_flag(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PROTOFUSE_SEED", "7")
        emb_env = tmp_path / "env.bin"
        assert run("gen-synthetic", "--out-embeddings", str(emb_env),
                   "--out-knowledge", str(tmp_path / "env.json"), *GEN_ARGS) == 0
        emb_flag = tmp_path / "flag.bin"
        monkeypatch.delenv("PROTOFUSE_SEED")
        assert run("gen-synthetic", "--out-embeddings", str(emb_flag),
                   "--out-knowledge", str(tmp_path / "flag.json"), *GEN_ARGS,
                   "--seed", "7") == 0
        assert emb_env.read_bytes() == emb_flag.read_bytes()

    def test_checkpoint_format_manifest(self, trained):
        _, _, _, out = trained
        tag, networks, extras = load_checkpoint(out / "finetune.ckpt")
        assert tag == "protocomnet"
        assert "gamma" in extras
        assert set(networks) == {"encoder", "aggregator", "decoder"}
