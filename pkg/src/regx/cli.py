"""Command-line interface: ``regx register | warp | evaluate | features | presets``.

Failures print one line ``regx: error[<category>]: <message>`` to stderr and
exit with status 2 (1 for unexpected exceptions).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import __version__
from .config import RegistrationConfig
from .exceptions import ConfigError, RegxError, VolumeIOError
from .features import extract_features, mind_ssc
from .io import load_displacement, load_landmarks, load_volume, save_volume
from .logging import configure_logging, logger
from .metrics import MetricReport, cohort_stats
from .parallel import worker_scope
from .pipeline import RegistrationResult, evaluate, register
from .presets import PRESETS, load_config, preset
from .transform import Interpolation, folding_fraction, sdlogj, upsample, warp
from .types import Dims3
from .volume import DisplacementField, LabelVolume, LandmarkSet

__all__ = ["main", "build_parser", "parse_batch_file", "BatchCase"]

_BATCH_KEYS = (
    "fixed",
    "moving",
    "fixed_seg",
    "moving_seg",
    "landmarks_fixed",
    "landmarks_moving",
    "out",
)


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="INFO with -v, DEBUG with -vv"
    )
    common.add_argument(
        "--threads", type=int, default=1, help="worker threads (0 = one per CPU)"
    )
    return common


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=PRESETS.names(), help="start from a task preset")
    parser.add_argument("--config", type=Path, help="TOML config file")


def _add_eval_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fixed-seg", type=Path, help="fixed label volume")
    parser.add_argument("--moving-seg", type=Path, help="moving label volume")
    parser.add_argument("--fixed-extra-seg", type=Path, help="extra fixed labels (Dice only)")
    parser.add_argument("--moving-extra-seg", type=Path, help="extra moving labels (Dice only)")
    parser.add_argument("--landmarks-fixed", type=Path, help="fixed landmark CSV")
    parser.add_argument("--landmarks-moving", type=Path, help="moving landmark CSV")
    parser.add_argument("--report", help="JSON report path ('-' for stdout)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="regx", description="Learning-free 3D deformable image registration."
    )
    parser.add_argument("--version", action="version", version=f"regx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", parents=[common], help="register a pair or a batch")
    reg.add_argument("--fixed", type=Path, help="fixed volume")
    reg.add_argument("--moving", type=Path, help="moving volume")
    reg.add_argument("--out", type=Path, help="output displacement field")
    reg.add_argument("--warped", type=Path, help="also write the warped moving volume")
    reg.add_argument("--interp", choices=["linear", "nearest"], help="interpolation for --warped")
    reg.add_argument("--batch", type=Path, help="case list with key=path tokens per line")
    _add_config_flags(reg)
    _add_eval_flags(reg)

    wrp = sub.add_parser("warp", parents=[common], help="apply a displacement field")
    wrp.add_argument("--moving", type=Path, required=True, help="volume to warp")
    wrp.add_argument("--field", type=Path, required=True, help="displacement field")
    wrp.add_argument("--out", type=Path, required=True, help="output volume")
    wrp.add_argument("--labels", action="store_true", help="treat the input as labels")
    wrp.add_argument("--interp", choices=["linear", "nearest"], help="interpolation scheme")

    ev = sub.add_parser("evaluate", parents=[common], help="metrics for a displacement field")
    ev.add_argument("--field", type=Path, required=True, help="displacement field")
    ev.add_argument("--fixed", type=Path, help="reference volume for a coarse field's grid")
    _add_eval_flags(ev)

    feat = sub.add_parser("features", parents=[common], help="dump feature volumes")
    feat.add_argument("--fixed", type=Path, required=True, help="fixed volume")
    feat.add_argument("--moving", type=Path, help="moving volume")
    feat.add_argument("--fixed-seg", type=Path, help="fixed label volume")
    feat.add_argument("--moving-seg", type=Path, help="moving label volume")
    feat.add_argument("--out", type=Path, required=True, help="fixed features (raw+JSON)")
    feat.add_argument("--out-moving", type=Path, help="moving features (raw+JSON)")
    _add_config_flags(feat)

    sub.add_parser("presets", parents=[common], help="print the preset table")
    return parser


def _resolve_config(args: argparse.Namespace) -> RegistrationConfig:
    # Precedence: file preset < --preset < file values < other flags.
    if args.config:
        config = load_config(args.config, preset_name=args.preset)
    else:
        config = preset(args.preset) if args.preset else RegistrationConfig()
    interp = getattr(args, "interp", None)
    return config.with_interpolation(interp) if interp else config


def _labels(path: Path | None) -> LabelVolume | None:
    return load_volume(path, labels=True) if path else None


def _landmarks(args: argparse.Namespace, dims: Dims3) -> tuple[LandmarkSet, LandmarkSet] | None:
    if args.landmarks_fixed is None and args.landmarks_moving is None:
        return None
    if args.landmarks_fixed is None or args.landmarks_moving is None:
        raise ConfigError("landmarks", "pass both --landmarks-fixed and --landmarks-moving")
    return load_landmarks(args.landmarks_fixed, dims), load_landmarks(args.landmarks_moving, dims)


def _extra_labels(args: argparse.Namespace) -> tuple[LabelVolume, LabelVolume] | None:
    fixed, moving = _labels(args.fixed_extra_seg), _labels(args.moving_extra_seg)
    if (fixed is None) != (moving is None):
        raise ConfigError("extra labels", "pass both --fixed-extra-seg and --moving-extra-seg")
    return (fixed, moving) if fixed is not None and moving is not None else None


def _write_report(flat: dict[str, Any], target: str | None) -> None:
    if target is None:
        return
    text = json.dumps(flat, indent=2)
    if target == "-":
        print(text)
        return
    try:
        Path(target).write_text(text + "\n")
    except OSError as e:
        raise VolumeIOError(target, e.strerror or str(e)) from e
    logger.info(f"Wrote report to {target}")


def _case_report(
    result: RegistrationResult,
    fixed_labels: LabelVolume | None,
    moving_labels: LabelVolume | None,
    landmarks: tuple[LandmarkSet, LandmarkSet] | None,
    extra: tuple[LabelVolume, LabelVolume] | None,
    *,
    verbose: bool,
) -> MetricReport:
    # timing.* keys are verbose-only
    timing = result.diagnostics.timing if verbose else {}
    if (fixed_labels is None or moving_labels is None) and landmarks is None:
        field = result.field
        return MetricReport(sdlogj=sdlogj(field), folding=folding_fraction(field), timing=timing)
    return evaluate(
        result.field,
        fixed_labels=fixed_labels,
        moving_labels=moving_labels,
        landmarks=landmarks,
        extra_labels=extra,
        timing=timing,
    )


def _register_one(
    config: RegistrationConfig,
    fixed_path: Path,
    moving_path: Path,
    fixed_seg: Path | None,
    moving_seg: Path | None,
) -> tuple[RegistrationResult, LabelVolume | None, LabelVolume | None]:
    fixed = load_volume(fixed_path)
    moving = load_volume(moving_path)
    fixed_labels, moving_labels = _labels(fixed_seg), _labels(moving_seg)
    result = register(
        fixed, moving, config, fixed_labels=fixed_labels, moving_labels=moving_labels
    )
    return result, fixed_labels, moving_labels


def _cmd_register(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.batch:
        return _run_batch(args.batch, config, args.report, verbose=args.verbose > 0)
    if args.fixed is None or args.moving is None:
        raise ConfigError("register", "pass --fixed and --moving, or --batch")

    result, fixed_labels, moving_labels = _register_one(
        config, args.fixed, args.moving, args.fixed_seg, args.moving_seg
    )
    if args.out:
        save_volume(result.field, args.out)
    if args.warped:
        moving = load_volume(args.moving)
        save_volume(warp(moving, result.field, config.interpolation), args.warped)

    report = _case_report(
        result,
        fixed_labels,
        moving_labels,
        _landmarks(args, result.field.grid_dims),
        _extra_labels(args),
        verbose=args.verbose > 0,
    )
    flat: dict[str, Any] = dict(report.to_flat())
    if args.verbose:
        flat["adam.loss"] = list(result.diagnostics.adam_losses)
    _write_report(flat, args.report)
    return 0


@dataclass(frozen=True, slots=True)
class BatchCase:
    """One line of a batch file."""

    fixed: Path
    moving: Path
    fixed_seg: Path | None = None
    moving_seg: Path | None = None
    landmarks_fixed: Path | None = None
    landmarks_moving: Path | None = None
    out: Path | None = None


def parse_batch_file(path: str | Path) -> list[BatchCase]:
    """Read ``key=path`` tokens per line; blank and ``#`` lines are skipped.

    Relative paths are resolved against the batch file's directory.

    Raises:
        ConfigError: Unknown keys, malformed tokens or missing volumes.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise VolumeIOError(path, e.strerror or str(e)) from e
    cases: list[BatchCase] = []
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entries: dict[str, Path] = {}
        for token in line.split():
            key, sep, value = token.partition("=")
            if not sep or key not in _BATCH_KEYS:
                raise ConfigError(f"batch line {number}", f"bad token '{token}'")
            entries[key] = path.parent / value
        if "fixed" not in entries or "moving" not in entries:
            raise ConfigError(f"batch line {number}", "needs fixed= and moving=")
        cases.append(BatchCase(**entries))
    if not cases:
        raise ConfigError(str(path), "batch file lists no cases")
    return cases


def _run_batch(
    batch: Path, config: RegistrationConfig, report: str | None, *, verbose: bool
) -> int:
    cases = parse_batch_file(batch)
    flat: dict[str, Any] = {}
    reports: list[MetricReport] = []
    for i, case in enumerate(cases):
        logger.info(f"Batch case {i + 1}/{len(cases)}: {case.fixed.name} <- {case.moving.name}")
        result, fixed_labels, moving_labels = _register_one(
            config, case.fixed, case.moving, case.fixed_seg, case.moving_seg
        )
        if case.out:
            save_volume(result.field, case.out)
        landmarks = None
        if case.landmarks_fixed and case.landmarks_moving:
            dims = result.field.grid_dims
            landmarks = (
                load_landmarks(case.landmarks_fixed, dims),
                load_landmarks(case.landmarks_moving, dims),
            )
        case_report = _case_report(
            result, fixed_labels, moving_labels, landmarks, None, verbose=verbose
        )
        reports.append(case_report)
        for key, value in case_report.to_flat().items():
            flat[f"cases.{i}.{key}"] = value
        if verbose:
            flat[f"cases.{i}.adam.loss"] = list(result.diagnostics.adam_losses)
    flat.update(cohort_stats(reports).to_flat())
    _write_report(flat, report)
    return 0


def _cmd_warp(args: argparse.Namespace) -> int:
    vol = load_volume(args.moving, labels=True) if args.labels else load_volume(args.moving)
    field: DisplacementField = upsample(load_displacement(args.field), vol.dims)
    interp = Interpolation.parse(args.interp) if args.interp else None
    save_volume(warp(vol, field, interp), args.out)
    return 0


def _evaluation_dims(
    args: argparse.Namespace, field: DisplacementField, fixed_labels: LabelVolume | None
) -> Dims3:
    """Full-resolution grid: fixed labels, then --fixed, then the field itself."""
    if fixed_labels is not None:
        return fixed_labels.dims
    if args.fixed is not None:
        return load_volume(args.fixed).dims
    if field.is_full_resolution:
        return field.grid_dims
    gx, gy, gz = field.grid_dims
    s = field.stride
    logger.info(f"No reference grid given; upsampling stride-{s} field to {gx * s}x{gy * s}x{gz * s}")
    return (gx * s, gy * s, gz * s)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    field = load_displacement(args.field)
    fixed_labels, moving_labels = _labels(args.fixed_seg), _labels(args.moving_seg)
    field = upsample(field, _evaluation_dims(args, field, fixed_labels))
    report = evaluate(
        field,
        fixed_labels=fixed_labels,
        moving_labels=moving_labels,
        landmarks=_landmarks(args, field.grid_dims),
        extra_labels=_extra_labels(args),
    )
    _write_report(report.to_flat(), args.report or "-")
    return 0


def _cmd_features(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    fixed = load_volume(args.fixed)
    if args.moving is None:
        if config.features.needs_labels:
            raise ConfigError("features", "label-based features need --moving and both segs")
        save_volume(mind_ssc(fixed, config.mind), args.out)
        return 0
    f_fixed, f_moving = extract_features(
        fixed,
        load_volume(args.moving),
        config.features,
        config.mind,
        _labels(args.fixed_seg),
        _labels(args.moving_seg),
    )
    save_volume(f_fixed, args.out)
    if args.out_moving:
        save_volume(f_moving, args.out_moving)
    return 0


def _cmd_presets(_: argparse.Namespace) -> int:
    header = f"{'name':<9} {'features':<13} {'capture mm':<20} {'IC':<4} {'stride':<7} {'q':<3} {'extent':<12} count"
    print(header)
    for entry in PRESETS:
        cfg = entry.factory()
        space = cfg.search_space(entry.native_spacing)
        capture = "x".join(f"{c:g}" for c in cfg.capture_mm)
        extent = ",".join(str(v) for v in space.extent)
        print(
            f"{entry.name:<9} {cfg.features.value:<13} {capture:<20} "
            f"{'on' if cfg.inverse_consistency else 'off':<4} {cfg.grid_stride:<7} "
            f"{space.quantisation:<3} {extent:<12} {space.count}"
        )
        print(f"          {entry.description} (validated at {entry.native_spacing} mm)")
    return 0


_COMMANDS = {
    "register": _cmd_register,
    "warp": _cmd_warp,
    "evaluate": _cmd_evaluate,
    "features": _cmd_features,
    "presets": _cmd_presets,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    configure_logging(level, perf=args.verbose > 0)
    try:
        with worker_scope(args.threads):
            return _COMMANDS[args.command](args)
    except RegxError as e:
        message = " ".join(str(e).split())
        print(f"regx: error[{e.category}]: {message}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"regx: error[internal]: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
