"""Tests for the ``regx`` command line."""

import json
from pathlib import Path

import numpy as np
import pytest

from regx.cli import BatchCase, build_parser, main, parse_batch_file
from regx.exceptions import ConfigError
from regx.io import load_displacement, load_features, load_volume, save_volume
from regx.volume import DisplacementField, LabelVolume

CONFIG = """\
capture_mm = 2
[instance]
iterations = 2
learning_rate = 0.02
"""


@pytest.fixture
def pair(tmp_path: Path, textured) -> tuple[Path, Path, Path]:
    """Fixed and moving NIfTI volumes plus a quick TOML config."""
    fixed, moving = tmp_path / "fixed.nii.gz", tmp_path / "moving.nii.gz"
    save_volume(textured((10, 10, 10)), fixed)
    save_volume(textured((10, 10, 10)), moving)
    config = tmp_path / "quick.toml"
    config.write_text(CONFIG)
    return fixed, moving, config


def read_report(path: Path) -> dict:
    return json.loads(path.read_text())


class TestParser:
    """Argument parsing."""

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_defaults(self):
        args = build_parser().parse_args(["presets"])
        assert args.threads == 1
        assert args.verbose == 0

    def test_unknown_preset_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["register", "--preset", "task7"])


class TestPresetsCommand:
    """``regx presets``."""

    def test_table(self, capsys: pytest.CaptureFixture[str]):
        assert main(["presets"]) == 0
        out = capsys.readouterr().out
        for name in ("task1", "task2", "task3", "synthetic"):
            assert name in out
        assert out.count("4913") == 3
        assert "1331" in out
        assert "64x64x64" in out
        assert "42x30x42" in out


class TestRegisterCommand:
    """``regx register`` for single pairs."""

    def test_writes_field_and_report(self, tmp_path: Path, pair):
        fixed, moving, config = pair
        out, report = tmp_path / "field.nii.gz", tmp_path / "report.json"
        code = main(
            ["register", "--fixed", str(fixed), "--moving", str(moving),
             "--config", str(config), "--out", str(out), "--report", str(report)]
        )
        assert code == 0
        field = load_displacement(out)
        assert field.grid_dims == (10, 10, 10)
        flat = read_report(report)
        assert "sdlogj" in flat
        assert "jacobian.folding" in flat
        assert not any(key.startswith("timing.") for key in flat)
        assert "adam.loss" not in flat

    def test_verbose_report_has_timing(self, tmp_path: Path, pair):
        fixed, moving, config = pair
        report = tmp_path / "report.json"
        code = main(
            ["register", "-v", "--fixed", str(fixed), "--moving", str(moving),
             "--config", str(config), "--report", str(report)]
        )
        assert code == 0
        flat = read_report(report)
        assert {"timing.features", "timing.correlation", "timing.convex", "timing.instance"} <= set(flat)
        assert len(flat["adam.loss"]) == 2

    def test_with_labels_and_warped_output(self, tmp_path: Path, pair, sphere_labels):
        fixed, moving, config = pair
        seg = tmp_path / "seg.nii.gz"
        save_volume(sphere_labels((10, 10, 10), (5, 5, 5), 3), seg)
        warped, report = tmp_path / "warped.nii.gz", tmp_path / "report.json"
        code = main(
            ["register", "--fixed", str(fixed), "--moving", str(moving), "--config", str(config),
             "--fixed-seg", str(seg), "--moving-seg", str(seg),
             "--warped", str(warped), "--report", str(report)]
        )
        assert code == 0
        assert load_volume(warped).dims == (10, 10, 10)
        assert "dice.mean" in read_report(report)

    def test_missing_inputs(self, capsys: pytest.CaptureFixture[str]):
        assert main(["register"]) == 2
        assert capsys.readouterr().err.startswith("regx: error[config]:")

    def test_missing_file(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        code = main(
            ["register", "--fixed", str(tmp_path / "nope.nii"), "--moving", str(tmp_path / "nope.nii")]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("regx: error[io]:")
        assert err.count("\n") == 1

    def test_budget_error_category(self, pair, capsys: pytest.CaptureFixture[str], tmp_path: Path):
        fixed, moving, _ = pair
        config = tmp_path / "big.toml"
        config.write_text("capture_mm = 40\nquantisation = 1\n")
        assert main(["register", "--fixed", str(fixed), "--moving", str(moving), "--config", str(config)]) == 2
        assert "error[budget]" in capsys.readouterr().err


class TestBatch:
    """Case lists and cohort reports."""

    def test_parse(self, tmp_path: Path):
        batch = tmp_path / "cases.txt"
        batch.write_text("# cohort\n\nfixed=a.nii moving=b.nii out=u.nii.gz\nfixed=c.nii moving=d.nii fixed_seg=s.nii\n")
        cases = parse_batch_file(batch)
        assert cases == [
            BatchCase(tmp_path / "a.nii", tmp_path / "b.nii", out=tmp_path / "u.nii.gz"),
            BatchCase(tmp_path / "c.nii", tmp_path / "d.nii", fixed_seg=tmp_path / "s.nii"),
        ]

    @pytest.mark.parametrize(
        "text",
        ["fixed=a.nii\n", "fixed=a.nii moving=b.nii colour=red\n", "fixed a.nii moving=b.nii\n", "# nothing\n"],
    )
    def test_parse_errors(self, tmp_path: Path, text: str):
        batch = tmp_path / "cases.txt"
        batch.write_text(text)
        with pytest.raises(ConfigError):
            parse_batch_file(batch)

    def test_run(self, tmp_path: Path, pair):
        fixed, moving, config = pair
        batch = tmp_path / "cases.txt"
        batch.write_text(
            f"fixed={fixed.name} moving={moving.name} out=u0.nii.gz\n"
            f"fixed={moving.name} moving={fixed.name}\n"
        )
        report = tmp_path / "cohort.json"
        code = main(["register", "--batch", str(batch), "--config", str(config), "--report", str(report)])
        assert code == 0
        flat = read_report(report)
        assert flat["cohort.n"] == 2
        assert "cases.0.sdlogj" in flat
        assert "cases.1.sdlogj" in flat
        assert flat["cohort.sdlogj.mean"] is not None
        assert (tmp_path / "u0.nii.gz").exists()


class TestWarpAndEvaluate:
    """``regx warp`` and ``regx evaluate`` with stored fields."""

    def test_warp_labels_with_identity(self, tmp_path: Path, sphere_labels):
        labels = sphere_labels((8, 8, 8), (4, 4, 4), 2.5, value=3)
        seg, field, out = tmp_path / "seg.nii.gz", tmp_path / "u.nii.gz", tmp_path / "warped.nii.gz"
        save_volume(labels, seg)
        save_volume(DisplacementField.zeros(labels.dims), field)
        assert main(["warp", "--moving", str(seg), "--field", str(field), "--out", str(out), "--labels"]) == 0
        np.testing.assert_array_equal(load_volume(out, labels=True).data, labels.data)

    def test_warp_coarse_field(self, tmp_path: Path, textured):
        vol, field, out = tmp_path / "v.nii.gz", tmp_path / "u.nii.gz", tmp_path / "w.nii.gz"
        save_volume(textured((8, 8, 8)), vol)
        save_volume(DisplacementField.zeros((4, 4, 4), stride=2), field)
        assert main(["warp", "--moving", str(vol), "--field", str(field), "--out", str(out)]) == 0
        assert load_volume(out).dims == (8, 8, 8)

    def test_evaluate_to_stdout(self, tmp_path: Path, sphere_labels, capsys: pytest.CaptureFixture[str]):
        labels = sphere_labels((8, 8, 8), (4, 4, 4), 2.5)
        seg, field = tmp_path / "seg.nii.gz", tmp_path / "u.nii.gz"
        save_volume(labels, seg)
        save_volume(DisplacementField.zeros(labels.dims), field)
        code = main(["evaluate", "--field", str(field), "--fixed-seg", str(seg), "--moving-seg", str(seg)])
        assert code == 0
        flat = json.loads(capsys.readouterr().out)
        assert flat["dice.mean"] == 1.0
        assert flat["hd95.mean"] == 0.0
        assert flat["sdlogj"] == 0.0

    def test_evaluate_landmarks(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        field = tmp_path / "u.nii.gz"
        save_volume(DisplacementField.zeros((6, 6, 6)), field)
        (tmp_path / "f.csv").write_text("# x,y,z\n1,1,1\n2,2,2\n")
        (tmp_path / "m.csv").write_text("# x,y,z\n1,1,1\n2,2,4\n")
        code = main(
            ["evaluate", "--field", str(field), "--landmarks-fixed", str(tmp_path / "f.csv"),
             "--landmarks-moving", str(tmp_path / "m.csv")]
        )
        assert code == 0
        flat = json.loads(capsys.readouterr().out)
        assert flat["tre.per_landmark"] == [0.0, 2.0]

    @pytest.mark.parametrize("reference", [None, 7])
    def test_evaluate_landmarks_coarse_field(
        self, tmp_path: Path, textured, capsys: pytest.CaptureFixture[str], reference: int | None
    ):
        field = tmp_path / "u.nii.gz"
        vectors = np.zeros((3, 3, 3, 3), dtype=np.float32)
        vectors[0] = 1.0
        save_volume(DisplacementField(vectors, stride=2), field)
        (tmp_path / "f.csv").write_text("# x,y,z\n1,1,1\n2,3,4\n")
        (tmp_path / "m.csv").write_text("# x,y,z\n2,1,1\n3,3,4\n")
        argv = ["evaluate", "--field", str(field), "--landmarks-fixed", str(tmp_path / "f.csv"),
                "--landmarks-moving", str(tmp_path / "m.csv")]
        if reference is not None:
            save_volume(textured((reference,) * 3), tmp_path / "ref.nii.gz")
            argv += ["--fixed", str(tmp_path / "ref.nii.gz")]
        assert main(argv) == 0
        flat = json.loads(capsys.readouterr().out)
        assert flat["tre.per_landmark"] == pytest.approx([0.0, 0.0], abs=1e-6)
        assert flat["sdlogj"] == pytest.approx(0.0, abs=1e-6)
        assert flat["jacobian.folding"] == 0.0

    def test_evaluate_nothing(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        field = tmp_path / "u.nii.gz"
        save_volume(DisplacementField.zeros((6, 6, 6)), field)
        assert main(["evaluate", "--field", str(field)]) == 2
        assert capsys.readouterr().err.startswith("regx: error[evaluation]:")


class TestFeaturesCommand:
    """``regx features``."""

    def test_mind_dump(self, tmp_path: Path, textured):
        vol = tmp_path / "v.nii.gz"
        save_volume(textured((9, 9, 9)), vol)
        assert main(["features", "--fixed", str(vol), "--out", str(tmp_path / "feat")]) == 0
        features = load_features(tmp_path / "feat")
        assert features.channels == 12
        assert features.dims == (9, 9, 9)

    def test_segmentation_pair(self, tmp_path: Path, textured):
        vol, seg = tmp_path / "v.nii.gz", tmp_path / "s.nii.gz"
        save_volume(textured((9, 9, 9)), vol)
        data = np.zeros((9, 9, 9), dtype=np.uint8)
        data[2:5, 2:5, 2:5] = 1
        save_volume(LabelVolume(data), seg)
        code = main(
            ["features", "--fixed", str(vol), "--moving", str(vol), "--fixed-seg", str(seg),
             "--moving-seg", str(seg), "--preset", "task3",
             "--out", str(tmp_path / "ff"), "--out-moving", str(tmp_path / "fm")]
        )
        assert code == 0
        assert load_features(tmp_path / "ff").channels == 2
        assert load_features(tmp_path / "fm").channels == 2

    @pytest.mark.parametrize(("file_preset", "flag", "code"), [("task3", "task1", 0), ("task1", "task3", 2)])
    def test_flag_preset_beats_file_preset(
        self, tmp_path: Path, textured, file_preset: str, flag: str, code: int
    ):
        vol, config = tmp_path / "v.nii.gz", tmp_path / "c.toml"
        save_volume(textured((9, 9, 9)), vol)
        config.write_text(f'preset = "{file_preset}"\n')
        argv = ["features", "--fixed", str(vol), "--config", str(config), "--preset", flag,
                "--out", str(tmp_path / "f")]
        assert main(argv) == code

    def test_label_mode_needs_pair(self, tmp_path: Path, textured, capsys: pytest.CaptureFixture[str]):
        vol = tmp_path / "v.nii.gz"
        save_volume(textured((9, 9, 9)), vol)
        assert main(["features", "--fixed", str(vol), "--preset", "task3", "--out", str(tmp_path / "f")]) == 2
        assert "error[config]" in capsys.readouterr().err
