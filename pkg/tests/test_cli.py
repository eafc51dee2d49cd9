import pytest

from voicedat.cli import main
from voicedat.config import ExperimentConfig, write_config


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = ExperimentConfig(seed=2, repeats=1, folds=5, epochs=1,
                              batch_source=4, batch_target=2,
                              per_class_source=5, per_class_target=2,
                              duration=2.0, variants=("sepconv", "dat"))
    path = root / "config.txt"
    write_config(path, config)
    return root, path


@pytest.fixture(scope="module")
def trained(smoke):
    root, config = smoke
    run = root / "run"
    assert main(["train", str(config), "--variant", "dat",
                 "--out", str(run)]) == 0
    return run


class TestResources:
    def test_prints_tables_and_reduction(self, tmp_path, capsys):
        assert main(["resources", "--out-dir", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "sepconv" in out and "stdconv" in out
        assert "parameter reduction: 73.90%" in out
        for arch in ("sepconv", "stdconv"):
            csv = tmp_path / f"resources_{arch}.csv"
            assert csv.read_text().splitlines()[0] == "layer,kind,params,macs"

    def test_single_arch_skips_comparison(self, capsys):
        assert main(["resources", "--arch", "sepconv"]) == 0
        out = capsys.readouterr().out
        assert "stdconv" not in out
        assert "reduction" not in out


class TestTrain:
    def test_writes_checkpoint_and_log(self, trained):
        assert (trained / "model.ckpt").exists()
        log = (trained / "training_log.csv").read_text().splitlines()
        assert log[0] == "epoch,label_loss,domain_loss,source_uar,target_uar"
        assert len(log) == 2  # one epoch

    def test_ft_requires_base(self, smoke, capsys):
        root, config = smoke
        assert main(["train", str(config), "--variant", "ft",
                     "--out", str(root / "ft")]) == 2
        assert "pass --base" in capsys.readouterr().err

    def test_ft_resumes_from_checkpoint(self, smoke, trained):
        root, config = smoke
        out = root / "ft_run"
        assert main(["train", str(config), "--variant", "ft",
                     "--base", str(trained / "model.ckpt"),
                     "--out", str(out)]) == 0
        assert (out / "model.ckpt").exists()


class TestExportAndEmbed:
    def test_export_features(self, smoke, trained, capsys):
        root, config = smoke
        feats = root / "features.csv"
        assert main(["export-features", str(trained / "model.ckpt"),
                     str(config), "--out", str(feats)]) == 0
        assert "3 samples x 2 domain conditions" in capsys.readouterr().out
        lines = feats.read_text().splitlines()
        assert lines[0].startswith("id,domain,disease,f000")
        assert len(lines) == 7  # header + 3 samples x 2 conditions

    def test_embed_pca(self, smoke, trained, capsys):
        root, config = smoke
        out = root / "pca.csv"
        assert main(["embed", str(root / "features.csv"), "--method", "pca",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "id,x,y,domain,disease"
        assert len(lines) == 7

    def test_embed_tsne(self, smoke, capsys):
        root, _ = smoke
        out = root / "tsne.csv"
        assert main(["embed", str(root / "features.csv"), "--method", "tsne",
                     "--perplexity", "1.5", "--iterations", "40",
                     "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "t-SNE KL:" in stdout
        assert len(out.read_text().splitlines()) == 7

    def test_missing_feature_csv_fails_cleanly(self, tmp_path, capsys):
        assert main(["embed", str(tmp_path / "nope.csv")]) == 2
        assert "error:" in capsys.readouterr().err


class TestEvaluateAndAblate:
    def test_evaluate_writes_tables(self, smoke, capsys):
        root, config = smoke
        out = root / "eval"
        assert main(["evaluate", str(config), "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "variant" in stdout
        assert "vs dat: p_source=" in stdout
        table = (out / "table1.csv").read_text().splitlines()
        assert table[0] == "variant,domain,health,neoplasm,structural,uar"
        assert len(table) == 1 + 2 * 2  # two variants x two domains
        assert (out / "significance.csv").exists()

    def test_ablate_lambda_writes_box(self, smoke, capsys):
        root, config = smoke
        out = root / "ablate"
        assert main(["ablate-lambda", str(config), "--values", "0,0.5",
                     "--trials", "2", "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "lambda=0.5: median" in stdout
        box = (out / "lambda_box.csv").read_text().splitlines()
        assert box[0] == "lambda,domain,min,q1,median,q3,max"
        assert len(box) == 1 + 2 * 2  # two lambdas x two domains

    def test_missing_config_fails_cleanly(self, tmp_path, capsys):
        assert main(["evaluate", str(tmp_path / "absent.cfg")]) == 2
        assert "error:" in capsys.readouterr().err
