import json

import numpy as np
import pytest

from latentuap import cli
from latentuap.audio_io import AudioClip, save_clip


@pytest.fixture
def wav_dir(tmp_path):
    d = tmp_path / "wavs"
    rng = np.random.default_rng(0)
    for i in range(4):
        t = np.arange(8000) / 16000
        save_clip(AudioClip(0.3 * np.sin(2 * np.pi * (200 + 50 * i) * t) + 0.01 * rng.standard_normal(8000), 16000), d / f"c{i}.wav")
    return d


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["bogus"])
    assert info.value.code != 0


def test_missing_models_is_config_error(tmp_path, capsys):
    code = cli.main(["evaluate", "--models", str(tmp_path / "none"), "--dataset", str(tmp_path), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG
    rec = _err(capsys)
    assert rec["error"] == "config" and rec["exit_code"] == 2


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["report", "--config", str(cfg), "--inputs", str(tmp_path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "bogus" in _err(capsys)["message"]


def test_unreadable_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert cli.main(["report", "--config", str(cfg), "--inputs", str(tmp_path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_bad_defence_is_config_error(tmp_path, wav_dir, capsys):
    d = tmp_path / "d.json"
    d.write_text(json.dumps([{"kind": "smooth", "h": 0}]))
    assert cli.main(["defend", "--input", str(wav_dir), "--defenses", str(d), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_defend_writes_outputs_manifest(tmp_path, wav_dir):
    d = tmp_path / "d.json"
    d.write_text(json.dumps([{"kind": "smooth", "h": 2}, {"kind": "downsample", "dr": 12000}]))
    out = tmp_path / "o"
    assert cli.main(["defend", "--input", str(wav_dir), "--defenses", str(d), "--out", str(out)]) == 0
    manifest = json.loads((out / "outputs.json").read_text())
    paths = {f["path"] for f in manifest["files"]}
    assert "smooth-h2/c0.wav" in paths and "downsample-12k/c3.wav" in paths
    assert len(manifest["config_digest"]) == 16
    assert all(len(f["sha256"]) == 64 for f in manifest["files"])


def test_required_options_from_config(tmp_path, wav_dir):
    d = tmp_path / "d.json"
    d.write_text(json.dumps([{"kind": "smooth", "h": 1}]))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"input": str(wav_dir), "defenses": str(d), "out": str(tmp_path / "o")}))
    assert cli.main(["defend", "--config", str(cfg)]) == 0
    # explicit flags win over the file
    assert cli.main(["defend", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "outputs.json").exists()


def test_distribution_report_and_determinism(tmp_path, wav_dir):
    args = ["distribution-report", "--original", str(wav_dir), "--protected", str(wav_dir)]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "kde_curves.csv").read_bytes()
    assert a == (tmp_path / "b" / "kde_curves.csv").read_bytes()
    assert a.splitlines()[0] == b"mfcc_mean,original,protected"
    ov = (tmp_path / "a" / "overlap.csv").read_text().splitlines()
    assert float(ov[2].split(",")[1]) == pytest.approx(1.0, abs=1e-5)


def test_noise_baseline_needs_models(tmp_path, wav_dir):
    code = cli.main(["distribution-report", "--original", str(wav_dir), "--protected", str(wav_dir), "--noise-baseline", "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG


def test_report_merges_summaries(tmp_path):
    for run in ("r1", "r2"):
        (tmp_path / run).mkdir()
        (tmp_path / run / "summary.csv").write_text("condition,psr\nclean,0\n")
    out = tmp_path / "rep"
    assert cli.main(["report", "--inputs", str(tmp_path / "r1"), str(tmp_path / "r2"), "--out", str(out)]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "source,run,condition,psr" and len(lines) == 3
    assert cli.main(["report", "--inputs", str(tmp_path / "rep" / "nothing"), "--out", str(out)]) == cli.EXIT_CONFIG
