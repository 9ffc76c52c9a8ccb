import csv
import json

import pytest

from hiercap import cli

TINY_FLAGS = [
    "--d", "8", "--hidden", "8", "--attn", "8", "--out-hidden", "8",
    "--epochs", "2",
]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus") / "data"
    assert cli.main(["gen-data", "--out", str(out), "--count", "12", "--seed", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    ckpt = tmp_path_factory.mktemp("run") / "model.ckpt"
    code = cli.main(
        ["train", "--data", str(data_dir), "--out", str(ckpt), *TINY_FLAGS]
    )
    assert code == 0
    return ckpt


def test_gen_data_refuses_nonempty_dir(tmp_path, capsys):
    out = tmp_path / "data"
    out.mkdir()
    (out / "junk.txt").write_text("x")
    assert cli.main(["gen-data", "--out", str(out), "--count", "12"]) == 2
    assert "--force" in capsys.readouterr().err


def test_gen_data_force_regenerates_identically(tmp_path, data_dir):
    fresh = tmp_path / "again"
    assert cli.main(["gen-data", "--out", str(fresh), "--count", "12", "--seed", "1"]) == 0
    assert cli.main(
        ["gen-data", "--out", str(fresh), "--count", "12", "--seed", "1", "--force"]
    ) == 0
    for name in ("manifest.json", "train.jsonl", "val.jsonl", "test.jsonl"):
        assert (fresh / name).read_bytes() == (data_dir / name).read_bytes()


def test_gen_data_too_small_exits_two(tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path / "tiny"), "--count", "5"]) == 2
    assert "error" in capsys.readouterr().err


def test_train_echoes_paper_defaults(tmp_path, data_dir, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert cli.main(["train", "--data", str(data_dir), "--out", str(ckpt), *TINY_FLAGS]) == 0
    out = capsys.readouterr().out
    assert "patch_scale = 2.0" in out
    assert "n_objects = 5" in out
    assert "lr = 0.0001" in out
    assert "beam = 2" in out


def test_train_writes_csv_log(trained):
    log = trained.with_name(trained.name + ".csv")
    with open(log, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_loss", "val_bleu4"]
    assert len(rows) == 3  # header + 2 epochs


def test_train_deterministic_csv(tmp_path, data_dir):
    out_a = tmp_path / "a.ckpt"
    out_b = tmp_path / "b.ckpt"
    for out in (out_a, out_b):
        assert cli.main(
            ["train", "--data", str(data_dir), "--out", str(out), *TINY_FLAGS,
             "--seed", "3"]
        ) == 0
    csv_a = out_a.with_name(out_a.name + ".csv").read_bytes()
    csv_b = out_b.with_name(out_b.name + ".csv").read_bytes()
    assert csv_a == csv_b


def test_config_file_sets_values_and_flags_win(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 7\nlr = 0.01  # comment\nhidden_dim = 16\n")
    values = cli.parse_config_file(cfg)
    assert values == {"epochs": 7, "lr": 0.01, "hidden_dim": 16}

    parser = cli.build_parser()
    args = parser.parse_args(
        ["train", "--data", "x", "--out", "y", "--config", str(cfg), "--epochs", "9"]
    )
    config = cli.effective_config(args)
    assert config.epochs == 9  # flag beats file
    assert config.lr == 0.01
    assert config.hidden_dim == 16


def test_config_file_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config_file(cfg)


def test_config_file_rejects_bad_value(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epochs = soon\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config_file(cfg)


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("CHA_THREADS", raising=False)
    assert cli.worker_count() == 1
    monkeypatch.setenv("CHA_THREADS", "4")
    assert cli.worker_count() == 4
    monkeypatch.setenv("CHA_THREADS", "zero")
    with pytest.raises(cli.ConfigError):
        cli.worker_count()


def test_caption_beam_one_matches_greedy(tmp_path, data_dir, trained, capsys):
    import json as _json

    with open(data_dir / "train.jsonl") as fh:
        image_id = _json.loads(fh.readline())["image_id"]
    assert cli.main(
        ["caption", "--ckpt", str(trained), "--data", str(data_dir),
         "--image", image_id, "--beam", "1"]
    ) == 0
    greedy_line = capsys.readouterr().out.strip()

    from hiercap.decoder import greedy_decode
    from hiercap.features import compute_raw_features, project_features
    from hiercap.training import load_checkpoint

    ckpt = load_checkpoint(trained)
    params = ckpt.build_model()
    from hiercap.dataset import load_split

    sample = next(s for s in load_split(data_dir, "train") if s.image_id == image_id)
    raw = compute_raw_features(sample, ckpt.config.n_objects, ckpt.config.patch_scale)
    stack = project_features(raw, params)
    expected = " ".join(
        ckpt.vocab.decode(greedy_decode(stack, params, ckpt.config.max_len))
    )
    assert greedy_line == expected


def test_caption_dump_attention(tmp_path, data_dir, trained):
    with open(data_dir / "train.jsonl") as fh:
        image_id = json.loads(fh.readline())["image_id"]
    dump = tmp_path / "attn.jsonl"
    assert cli.main(
        ["caption", "--ckpt", str(trained), "--data", str(data_dir),
         "--image", image_id, "--dump-attention", str(dump)]
    ) == 0
    records = [json.loads(line) for line in dump.read_text().splitlines()]
    assert records
    for rec in records:
        assert len(rec["alpha"]) == 11  # 2n+1 at n=5
        assert abs(sum(rec["alpha"]) - 1.0) < 1e-9


def test_caption_unknown_image_exits_two(data_dir, trained, capsys):
    assert cli.main(
        ["caption", "--ckpt", str(trained), "--data", str(data_dir),
         "--image", "img99999"]
    ) == 2
    assert "not found" in capsys.readouterr().err


def test_eval_prints_table_and_json(tmp_path, data_dir, trained, capsys):
    report_path = tmp_path / "report.json"
    assert cli.main(
        ["eval", "--ckpt", str(trained), "--data", str(data_dir),
         "--split", "test", "--json", str(report_path)]
    ) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split() == ["B-1", "B-2", "B-3", "B-4", "C", "R"]
    report = json.loads(report_path.read_text())
    assert set(report) == {"bleu", "cider", "rouge_l", "per_image"}
    assert len(report["bleu"]) == 4
    for image in report["per_image"]:
        assert set(image) == {"image_id", "candidate", "bleu", "rouge_l", "cider"}


def test_gradcheck_passes_and_reports(capsys):
    assert cli.main(["gradcheck", "--trials", "5"]) == 0
    out = capsys.readouterr().out
    assert "max rel error" in out
    assert "FAIL" not in out


def test_gradcheck_detects_wrong_backward(monkeypatch, capsys):
    from hiercap import gradcheck as gc

    def broken(build, tensors, **kwargs):
        return 1.0  # far above tolerance

    monkeypatch.setattr(gc, "check_gradients", broken)
    assert cli.main(["gradcheck", "--trials", "2"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_missing_checkpoint_exits_two(data_dir, capsys):
    assert cli.main(
        ["eval", "--ckpt", "/nonexistent.ckpt", "--data", str(data_dir)]
    ) == 2
    assert "error" in capsys.readouterr().err
