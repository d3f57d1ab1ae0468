import csv
import io
import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from phonoscope.audio import Waveform, read_wav, write_wav
from phonoscope.cli import EXIT_INPUT, EXIT_USAGE, main
from phonoscope.pipeline import evaluate_corpus, read_corpus_manifest, trend_check
from phonoscope.report import RECORD_COLUMNS, load_records
from phonoscope.synth import synth_utterance


@pytest.fixture(scope="module")
def speech_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("speech")
    for g in "MF":
        os.makedirs(root / g)
        for i in range(6):
            wave, _ = synth_utterance(f"{g}{i}", g, seed=100 + 10 * i + (g == "F"))
            write_wav(root / g / f"{g}{i}.wav", wave)
    return root


@pytest.fixture(scope="module")
def records_csv(demo_manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval") / "records.csv"
    assert main(["eval", "--manifest", demo_manifest, "--out", str(out)]) == 0
    return out


class TestSsn:
    def test_provenance_and_determinism(self, speech_dir, tmp_path):
        args = ["ssn", "--speech", str(speech_dir), "--length", "2", "--seed", "3"]
        assert main(args + ["--out", str(tmp_path / "a.wav")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.wav")]) == 0
        prov = json.loads((tmp_path / "a.json").read_text())
        assert len(prov["sources"]) == 10
        assert sorted(s["gender"] for s in prov["sources"]) == ["F"] * 5 + ["M"] * 5
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()
        assert len(read_wav(tmp_path / "a.wav")) == 32000

    def test_empty_dir(self, tmp_path):
        os.makedirs(tmp_path / "M")
        assert main(["ssn", "--speech", str(tmp_path), "--out", str(tmp_path / "x.wav")]) == EXIT_INPUT
        assert not (tmp_path / "x.wav").exists()

    def test_int16_level(self, speech_dir, tmp_path):
        out = tmp_path / "n.wav"
        assert main(["ssn", "--speech", str(speech_dir), "--length", "1", "--format", "int16",
                     "--level", "0.5", "--out", str(out)]) == 0
        assert abs(np.abs(read_wav(out).samples).max() - 0.5) < 1e-4


class TestEval:
    def test_records_schema(self, records_csv):
        recs = load_records(records_csv)
        header = records_csv.read_text().splitlines()[0].split(",")
        assert header == list(RECORD_COLUMNS)
        assert {r["algorithm_id"] for r in recs} == {"passthrough", "oracle"}
        utt = [r for r in recs if r["level"] == "utterance"]
        assert len(utt) == 8 and all(r["stoi_out"] is not None for r in utt)
        for r in recs:
            if r["algorithm_id"] == "passthrough":
                assert abs(r["sir_out"] - r["sir_in"]) < 1e-6

    def test_jobs_equivalence(self, demo_manifest, records_csv, tmp_path):
        out = tmp_path / "r8.csv"
        assert main(["eval", "--manifest", demo_manifest, "--jobs", "3", "--out", str(out)]) == 0
        assert out.read_bytes() == records_csv.read_bytes()

    def test_env_jobs(self, demo_manifest, monkeypatch):
        rows = read_corpus_manifest(demo_manifest)[:2]
        monkeypatch.setenv("PHONOSCOPE_JOBS", "2")
        assert evaluate_corpus(rows) == evaluate_corpus(rows, jobs=1)

    def test_manifest_errors_listed(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text(
            "utterance_id,gender,clean_path,alignment_path,snr_db,seed,enhanced:x\n"
            "u1,X,missing.wav,missing.TextGrid,zero,1,@passthrough\n"
            "u1,M,missing.wav,missing.TextGrid,0,1,@nope\n", encoding="utf-8")
        assert main(["eval", "--manifest", str(tmp_path / "m.csv")]) == EXIT_USAGE
        text = capsys.readouterr().err
        for needle in ("gender must be M or F", "bad snr_db", "duplicate utterance_id",
                       "unknown built-in", "not found"):
            assert needle in text

    def test_wrong_rate(self, demo_manifest, tmp_path):
        root = tmp_path / "c"
        shutil.copytree(os.path.dirname(demo_manifest), root)
        write_wav(root / "clean" / "utt000.wav", Waveform(np.zeros(800), 8000))
        assert main(["eval", "--manifest", str(root / "manifest.csv"), "--no-stoi",
                     "--out", str(tmp_path / "r.csv")]) == EXIT_INPUT

    def test_log_format(self, demo_manifest, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "phonoscope.cli", "eval", "--manifest", demo_manifest,
             "--no-stoi", "--out", str(tmp_path / "r.csv")],
            capture_output=True, text=True, check=True)
        lines = [l for l in proc.stderr.splitlines() if l]
        assert lines and all(l.startswith("level=") and " utt=" in l and " msg=" in l for l in lines)


class TestStatsReport:
    def test_stats_rows_per_stratum(self, records_csv, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["stats", "--records", str(records_csv), "--metric", "sir_out",
                     "--group", "algorithm", "--groups", "oracle,passthrough",
                     "--strata", "category,snr", "--level", "phoneme", "--out", str(out)]) == 0
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        recs = [r for r in load_records(records_csv) if r["level"] == "phoneme"]
        assert len(rows) == len({(r["category"], r["snr_db"]) for r in recs})
        assert all(r["stratum"].startswith("category=") for r in rows)

    def test_stats_gender_needs_pair(self, records_csv):
        assert main(["stats", "--records", str(records_csv), "--metric", "sir_in",
                     "--group", "category"]) != 0

    def test_report_table(self, records_csv, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["report", "--records", str(records_csv), "--table", "sir_in", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "sir_in,-5 dB M,-5 dB F,0 dB M,0 dB F"
        assert [l.split(",")[0] for l in lines[1:]] == ["Consonants", "Vowels"]

    def test_report_violin_and_perceptual(self, records_csv, tmp_path):
        ext = tmp_path / "ext.csv"
        ext.write_text("utterance_id,metric_name,value\nutt000,wer,31.62\nghost,wer,1\n")
        out = tmp_path / "p.csv"
        assert main(["report", "--records", str(records_csv), "--external", str(ext),
                     "--table", "perceptual", "--out", str(out)]) == 0
        rows = {l.split(",")[0]: l.split(",")[1:] for l in out.read_text().splitlines()}
        assert rows["wer"][0] == "31.62"
        vout = tmp_path / "v.json"
        assert main(["report", "--records", str(records_csv), "--violin", "sar_out",
                     "--group-by", "category", "--out", str(vout)]) == 0
        assert json.loads(vout.read_text())["metric"] == "sar_out"

    def test_report_missing_records(self, tmp_path):
        assert main(["report", "--records", str(tmp_path / "none.csv"), "--table", "sir_in"]) == EXIT_INPUT


def test_mix_command(demo_manifest, tmp_path):
    assert main(["mix", "--manifest", demo_manifest, "--out-dir", str(tmp_path)]) == 0
    mix = read_wav(tmp_path / "utt000" / "mixture.wav")
    s = read_wav(tmp_path / "utt000" / "speech_image.wav")
    n = read_wav(tmp_path / "utt000" / "noise_image.wav")
    assert mix.channels == 4
    assert np.allclose(mix.samples, s.samples + n.samples, atol=1e-6)


def test_trend_check_synthetic(records_csv):
    out = trend_check(load_records(records_csv))
    assert set(out["tests"]) == {"M", "F"}
    for cons, vowel in out["means"].values():
        assert np.isfinite(cons) and np.isfinite(vowel)
