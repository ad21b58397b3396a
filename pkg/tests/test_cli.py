import csv
import json

import numpy as np
import pytest

from meshsmile.cli import build_parser, main
from meshsmile.landmark_io import read_landmark_file

MICRO = ["--set", "model.d=8", "--set", "model.tokens=4", "--set", "model.heads=2",
         "--set", "model.curves=2", "--set", "model.curve_len=2", "--set", "model.knn=3",
         "--set", "model.spatial_blocks=1", "--set", "model.temporal_blocks=1",
         "--set", "train.batch_size=4", "--fps", "5", "--clip-len", "8", "--epochs", "1"]

SMALL_SYNTH = ["--set", "synth.n_landmarks=12", "--set", "synth.fps=10", "--set", "synth.duration_s=2"]


def _header(L):
    return ",".join(f"f{l}_{a}" for l in range(L) for a in "xyz")


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-synthetic", "--subjects", "4", "--seed", "3", "--out", str(out)] + SMALL_SYNTH) == 0
    return out / "manifest.json"


class TestImport:
    def test_round_trip(self, tmp_path, capsys):
        rows = np.arange(24, dtype=np.float32).reshape(2, 12) / 7
        (tmp_path / "a.csv").write_text(_header(4) + "\n" + "\n".join(",".join(repr(float(v)) for v in r)
                                                                    for r in rows) + "\n")
        assert main(["import", str(tmp_path / "a.csv"), "--fps", "30", "--out", str(tmp_path / "a.mslm")]) == 0
        seq = read_landmark_file(tmp_path / "a.mslm")
        assert seq.coords.shape == (2, 4, 3) and seq.fps == 30.0
        np.testing.assert_array_equal(seq.coords.reshape(2, 12), rows)

    def test_ragged_row(self, tmp_path, capsys):
        (tmp_path / "r.csv").write_text(_header(4) + "\n" + ",".join(["1"] * 12) + "\n" + ",".join(["1"] * 9) + "\n")
        assert main(["import", str(tmp_path / "r.csv"), "--fps", "30", "--out", str(tmp_path / "r.mslm")]) == 2
        assert "row 3" in capsys.readouterr().err
        assert not (tmp_path / "r.mslm").exists()

    def test_header_only(self, tmp_path, capsys):
        (tmp_path / "h.csv").write_text(_header(4) + "\n")
        assert main(["import", str(tmp_path / "h.csv"), "--fps", "30", "--out", str(tmp_path / "h.mslm")]) == 2
        assert "empty" in capsys.readouterr().err


class TestGenSynthetic:
    def test_counts_and_repeatability(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["gen-synthetic", "--subjects", "40", "--per-class", "1", "--seed", "7",
                         "--out", str(tmp_path / name)]) == 0
        printed = capsys.readouterr().out
        assert "manifest.json" in printed
        files = sorted(p.name for p in (tmp_path / "a" / "videos").iterdir())
        assert len(files) == 80
        for f in files:
            assert (tmp_path / "a" / "videos" / f).read_bytes() == (tmp_path / "b" / "videos" / f).read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()

    def test_too_few_subjects_downstream(self, tmp_path, capsys):
        assert main(["gen-synthetic", "--subjects", "2", "--out", str(tmp_path / "d")] + SMALL_SYNTH) == 0
        code = main(["cross-validate", "--manifest", str(tmp_path / "d" / "manifest.json"), "--folds", "5",
                     "--out", str(tmp_path / "cv")] + MICRO)
        assert code == 2
        assert "subjects" in capsys.readouterr().err


class TestTrainEvalSaliency:
    def test_pipeline(self, small_data, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", "--manifest", str(small_data), "--out", str(out)] + MICRO) == 0
        assert (out / "model.mswt").is_file() and (out / "loss.svg").is_file()
        rows = list(csv.reader(open(out / "loss.csv")))
        assert rows[0] == ["epoch", "mean_loss"] and len(rows) == 2

        capsys.readouterr()
        assert main(["eval", "--manifest", str(small_data), "--checkpoint", str(out / "model.mswt"),
                     "--fps", "5"]) == 0
        res = json.loads(capsys.readouterr().out)
        assert res["n_videos"] == 8 and 0.0 <= res["accuracy"] <= 1.0

        assert main(["saliency", "--manifest", str(small_data), "--checkpoint", str(out / "model.mswt"),
                     "--fps", "5", "--out", str(tmp_path / "sal")]) == 0
        rows = list(csv.reader(open(tmp_path / "sal" / "saliency.csv")))
        assert rows[0] == ["landmark_index", "importance"] and len(rows) == 13
        assert max(float(r[1]) for r in rows[1:]) == 1.0
        assert (tmp_path / "sal" / "saliency.svg").read_text().lstrip().startswith("<?xml")

    def test_missing_checkpoint(self, small_data, tmp_path, capsys):
        code = main(["eval", "--manifest", str(small_data), "--checkpoint", str(tmp_path / "nope.mswt")])
        assert code == 2
        assert "checkpoint" in capsys.readouterr().err

    def test_bad_override(self, small_data, tmp_path, capsys):
        assert main(["train", "--manifest", str(small_data), "--out", str(tmp_path),
                     "--set", "model.nonsense=1"]) == 2


class TestCrossValidate:
    def test_fold_entries_and_determinism(self, small_data, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["cross-validate", "--manifest", str(small_data), "--folds", "2",
                         "--out", str(tmp_path / name)] + MICRO) == 0
        a = (tmp_path / "a" / "results.json").read_bytes()
        assert a == (tmp_path / "b" / "results.json").read_bytes()
        doc = json.loads(a)
        assert len(doc["folds"]) == 2
        assert doc["mean"] == pytest.approx(np.mean([f["accuracy"] for f in doc["folds"]]))
        assert (tmp_path / "a" / "accuracy.svg").is_file()
        assert (tmp_path / "a" / "loss_trial0_fold1.csv").is_file()


class TestHelp:
    @pytest.mark.parametrize("cmd", ["import", "gen-synthetic", "train", "cross-validate", "eval",
                                     "saliency", "gradcheck"])
    def test_help_lists_defaults(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices[cmd]
        for action in sub._actions:
            if action.option_strings and action.dest != "help":
                assert action.option_strings[-1] in text
        assert "default" in text

    def test_top_level_lists_config_keys(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        text = capsys.readouterr().out
        assert "train.lr" in text and "synth.noise_sd" in text
