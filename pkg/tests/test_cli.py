import json

import pytest

from airmask.cli import main
from airmask.config import load_config, parse_set_override
from airmask.errors import ConfigError


SMALL = [
    "--set", "corpus.count=120",
    "--set", "corpus.len_max=3",
    "--set", "asr.epochs=6",
    "--set", "rooms.count=4",
    "--set", "rooms.rir_seconds=0.08",
    "--set", "rooms.max_order=3",
    "--set", "augment.pad_max=200",
    "--set", "attack.generation_rooms=3",
    "--set", "attack.max_iterations=250",
    "--set", "attack.lambda_max=0.05",
    "--set", "eval.trials=3",
]


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    summary = None
    for line in out.out.strip().splitlines():
        summary = json.loads(line)
    return code, summary, out.err


class TestConfig:
    def test_defaults_validate(self):
        cfg = load_config(None, [])
        assert cfg["attack"]["lambda_step"] == 0.05

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"attack": {"lambda_stepp": 0.1}}))
        with pytest.raises(ConfigError):
            load_config(path, [])

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"attacks": {}}))
        with pytest.raises(ConfigError):
            load_config(path, [])

    def test_set_override_parses_json_values(self):
        doc = parse_set_override("attack.lambda_max=0.3")
        assert doc == {"attack": {"lambda_max": 0.3}}
        doc = parse_set_override("augment.room_batch=all")
        assert doc == {"augment": {"room_batch": "all"}}

    def test_set_requires_equals(self):
        with pytest.raises(ConfigError):
            parse_set_override("attack.lambda_max")

    def test_seed_override(self):
        cfg = load_config(None, [], seed=777)
        assert cfg["seed"] == 777


class TestExitCodes:
    def test_unknown_config_key_exits_2_without_outputs(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code, _, err = run(
            ["synth-corpus", "--set", "corpus.countt=5", "--out", str(out_dir)], capsys
        )
        assert code == 2
        assert "config error" in err
        assert not out_dir.exists()

    def test_missing_input_exits_3(self, tmp_path, capsys):
        code, _, err = run(
            [
                "train-asr",
                "--corpus", str(tmp_path / "nope"),
                "--out", str(tmp_path / "out"),
            ],
            capsys,
        )
        assert code == 3
        assert "input error" in err

    def test_corrupt_wav_exits_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"not a wav at all")
        code, _, err = run(
            ["inspect-mask", str(bad), "--out", str(tmp_path / "out")], capsys
        )
        assert code == 3


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Run the full reduced-scale pipeline once for the CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus"
    rooms = root / "rooms"
    model = root / "model"
    code = main(["synth-corpus", *SMALL, "--out", str(corpus)])
    assert code == 0
    code = main(["train-asr", *SMALL, "--corpus", str(corpus), "--out", str(model)])
    assert code == 0
    code = main(["make-rooms", *SMALL, "--rir-wav", "0", "--out", str(rooms)])
    assert code == 0
    return root


class TestPipeline:
    def test_corpus_layout(self, pipeline_dir):
        corpus = pipeline_dir / "corpus"
        manifest = json.loads((corpus / "manifest.json").read_text())
        assert len(manifest) == 120
        name, text = sorted(manifest.items())[0]
        assert (corpus / name).exists()
        assert set(text) <= set("abcdef")

    def test_rooms_and_rir_outputs(self, pipeline_dir):
        rooms = pipeline_dir / "rooms"
        doc = json.loads((rooms / "rooms.json").read_text())
        assert len(doc["variants"]) == 4
        assert (rooms / "rir_0000.wav").exists()

    def test_channel_command(self, pipeline_dir, capsys):
        corpus = pipeline_dir / "corpus"
        wav = sorted(corpus.glob("utt_*.wav"))[0]
        out_wav = pipeline_dir / "channel.wav"
        code, summary, _ = run(
            [
                "channel", *SMALL,
                "--rooms", str(pipeline_dir / "rooms" / "rooms.json"),
                str(wav), str(out_wav),
            ],
            capsys,
        )
        assert code == 0
        assert out_wav.exists()
        assert summary["command"] == "channel"

    def test_inspect_mask_csv(self, pipeline_dir, capsys):
        corpus = pipeline_dir / "corpus"
        wav = sorted(corpus.glob("utt_*.wav"))[0]
        out = pipeline_dir / "mask"
        code, summary, _ = run(["inspect-mask", *SMALL, str(wav), "--out", str(out)], capsys)
        assert code == 0
        rows = (out / "mpam.csv").read_text().strip().splitlines()
        assert len(rows) == summary["frames"]
        first = rows[0].split(",")
        assert len(first) == summary["bins"]
        assert all("." in cell and len(cell.split(".")[1]) == 3 for cell in first[:5])

    def test_attack_and_evaluate(self, pipeline_dir, capsys):
        corpus = pipeline_dir / "corpus"
        manifest = json.loads((corpus / "manifest.json").read_text())
        name, text = sorted(manifest.items())[0]
        target = "ba" if text != "ba" else "ab"
        atk = pipeline_dir / "attack"
        code, summary, _ = run(
            [
                "attack", *SMALL,
                "--model", str(pipeline_dir / "model" / "model.asrt"),
                "--rooms", str(pipeline_dir / "rooms" / "rooms.json"),
                "--carrier", str(corpus / name),
                "--target", target,
                "--out", str(atk),
            ],
            capsys,
        )
        assert code == 0
        assert (atk / "attack.wav").exists()
        assert (atk / "delta.wav").exists()
        history = (atk / "history.csv").read_text().splitlines()
        assert history[0] == "iteration,lambda,ctc_sum,f_pam,matches,total_rooms"
        assert len(history) > 1
        meta = json.loads((atk / "attack_meta.json").read_text())
        assert meta["target"] == target

        ev = pipeline_dir / "eval"
        code, summary, _ = run(
            [
                "evaluate", *SMALL,
                "--model", str(pipeline_dir / "model" / "model.asrt"),
                "--rooms", str(pipeline_dir / "rooms" / "rooms.json"),
                "--attack", str(atk / "attack.wav"),
                "--target", target,
                "--meta", str(atk / "attack_meta.json"),
                "--out", str(ev),
            ],
            capsys,
        )
        assert code == 0
        report = json.loads((ev / "report.json").read_text())
        assert report["trials"] == 3
        csv_lines = (ev / "report.csv").read_text().splitlines()
        assert csv_lines[0].startswith("fr,rs,ts,lambda")

    def test_summary_lines_are_json(self, pipeline_dir, capsys):
        code, summary, _ = run(
            ["make-rooms", *SMALL, "--out", str(pipeline_dir / "rooms2")], capsys
        )
        assert code == 0
        assert summary["count"] == 4
