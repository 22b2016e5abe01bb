"""Command-line front end: track, eval, synth, and verify-theory.

Exit codes: 0 on success, 1 on validation errors (bad arguments, malformed
files), 2 on I/O errors.  CSV outputs are byte-stable for fixed inputs and
seed; SVG plots are presentational only.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .geometry import BoundingBox
from .metrics import ope_metrics
from .sequences import (
    SequenceFormatError,
    SynthSpec,
    load_sequence,
    synth_sequence,
    write_sequence,
)
from .theory import (
    GaussianSpec,
    mc_estimate,
    quadrature_expectation,
    verify_lemma3,
    verify_theorem1,
)
from .tracker import Tracker, TrackerConfig

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract reserves 2 for I/O
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_scalar(text: str, target_type):
    text = text.strip()
    if target_type is bool:
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if text.lower() in ("none", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _read_kv_file(path: Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SequenceFormatError(f"{path}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _build_config(config_path: str | None, seed: int | None) -> TrackerConfig:
    kwargs = {}
    if config_path:
        raw = _read_kv_file(Path(config_path))
        valid = {f.name for f in fields(TrackerConfig)}
        for key, value in raw.items():
            if key not in valid:
                raise SequenceFormatError(f"unknown tracker config key: {key}")
            field_type = bool if key.startswith("enable_") else None
            kwargs[key] = _parse_scalar(value, field_type)
    if seed is not None:
        kwargs["seed"] = seed
    return TrackerConfig(**kwargs)


def _format_float(value: float) -> str:
    return repr(float(value))


def _cmd_track(args) -> int:
    config = _build_config(args.config, args.seed)
    bundle = load_sequence(args.seq_dir)
    init_box = bundle.groundtruth[0]
    tracker = Tracker(bundle.frame(0), init_box, config)

    rows = [
        (
            1,
            _format_float(init_box.x),
            _format_float(init_box.y),
            _format_float(init_box.w),
            _format_float(init_box.h),
            _format_float(1.0),
            "init",
        )
    ]
    for k in range(1, len(bundle)):
        result = tracker.track(bundle.frame(k))
        box = result.box
        rows.append(
            (
                k + 1,
                _format_float(box.x),
                _format_float(box.y),
                _format_float(box.w),
                _format_float(box.h),
                _format_float(result.confidence),
                result.cue_origin,
            )
        )
    out = Path(args.out)
    with out.open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "x", "y", "w", "h", "confidence", "cue"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} frames to {out}")
    return 0


def _read_results(path: Path) -> list[BoundingBox]:
    boxes = []
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:5] != ["frame", "x", "y", "w", "h"]:
            raise SequenceFormatError(f"{path}: unrecognized results header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                boxes.append(BoundingBox(*(float(v) for v in row[1:5])))
            except (ValueError, TypeError) as exc:
                raise SequenceFormatError(f"{path}: line {lineno}: {exc}") from None
    return boxes


def _cmd_eval(args) -> int:
    results = _read_results(Path(args.results))
    bundle = load_sequence(args.seq_dir)
    if len(results) != len(bundle.groundtruth):
        raise SequenceFormatError(
            f"{len(results)} result rows vs {len(bundle.groundtruth)} groundtruth boxes"
        )
    report = ope_metrics(results, bundle.groundtruth)
    out = Path(args.out)
    with out.open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "threshold", "value"])
        for kind, thr, value in report.to_rows():
            writer.writerow([kind, thr, _format_float(value)])
    print(f"auc={report.auc:.4f} precision@20={report.precision_at_20:.4f} -> {out}")
    if args.plot:
        _plot_curves(report, Path(args.plot))
        print(f"curves plotted to {args.plot}")
    return 0


def _plot_curves(report, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(SUCCESS_THRESHOLDS, report.success_curve)
    ax1.set_xlabel("overlap threshold")
    ax1.set_ylabel("success rate")
    ax1.set_title(f"success (AUC {report.auc:.3f})")
    ax2.plot(PRECISION_THRESHOLDS, report.precision_curve)
    ax2.set_xlabel("center error threshold [px]")
    ax2.set_ylabel("precision")
    ax2.set_title(f"precision (@20 {report.precision_at_20:.3f})")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _cmd_synth(args) -> int:
    raw = _read_kv_file(Path(args.spec))
    kwargs = {}
    valid = {f.name for f in fields(SynthSpec)}
    for key, value in raw.items():
        if key not in valid:
            raise SequenceFormatError(f"unknown synth spec key: {key}")
        if key == "occlusion_windows":
            windows = []
            for chunk in value.split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                start, end, coverage = chunk.split(":")
                windows.append((int(start), int(end), float(coverage)))
            kwargs[key] = windows
        elif key == "name":
            kwargs[key] = value
        else:
            kwargs[key] = _parse_scalar(value, None)
    if args.seed is not None:
        kwargs["seed"] = args.seed
    bundle = synth_sequence(SynthSpec(**kwargs))
    write_sequence(bundle, args.out)
    print(f"wrote {len(bundle)} frames to {args.out}")
    return 0


def _cmd_verify_theory(args) -> int:
    spec = GaussianSpec(0.0, 1.0)
    report = mc_estimate(
        spec,
        spec,
        n=args.n,
        m=args.m,
        sigma1=args.sigma1,
        trials=args.trials,
        seed=args.seed if args.seed is not None else 0,
    )
    quad = quadrature_expectation(spec, spec, n=args.n, m=args.m, sigma1=args.sigma1)
    lemma3 = verify_lemma3(report, quad)
    theorem1 = verify_theorem1(report)

    payload: dict[str, object] = {}
    payload.update({f"mc_{k}": v for k, v in report.to_dict().items()})
    payload.update({f"quad_{k}": v for k, v in quad.to_dict().items()})
    payload.update(
        {
            "lemma3_passed": lemma3.passed,
            "lemma3_positive_beyond_3se": lemma3.positive_beyond_3se,
            "lemma3_identity_ok": lemma3.identity_ok,
            "theorem1_passed": theorem1.passed,
            "theorem1_identity_ok": theorem1.identity_ok,
            "theorem1_positive_beyond_3se": theorem1.positive_beyond_3se,
        }
    )
    out = Path(args.out)
    if out.suffix.lower() == ".json":
        out.write_text(json.dumps(payload, indent=2, default=float) + "\n")
    else:
        with out.open("w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["key", "value"])
            for key, value in payload.items():
                writer.writerow([key, value])
    status = "PASS" if (lemma3.passed and theorem1.passed) else "FAIL"
    print(
        f"lemma3 margin={report.lemma3_margin:.6g} (+/-{report.se_lemma3_margin:.3g}) "
        f"theorem1 margin={report.theorem1_margin:.6g} -> {status}; report at {out}"
    )
    return 0 if status == "PASS" else 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="buddytrack", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    p_track = sub.add_parser("track", help="run the tracker over a sequence directory")
    p_track.add_argument("seq_dir")
    p_track.add_argument("--config", default=None, help="key=value tracker config file")
    p_track.add_argument("--out", default="results.csv")
    p_track.set_defaults(func=_cmd_track)

    p_eval = sub.add_parser("eval", help="score tracking results against groundtruth")
    p_eval.add_argument("results")
    p_eval.add_argument("seq_dir")
    p_eval.add_argument("--out", default="metrics.csv")
    p_eval.add_argument("--plot", default=None, help="optional SVG curve plot path")
    p_eval.set_defaults(func=_cmd_eval)

    p_synth = sub.add_parser("synth", help="render a synthetic sequence to disk")
    p_synth.add_argument("spec", help="key=value synthetic sequence spec file")
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=_cmd_synth)

    p_theory = sub.add_parser(
        "verify-theory", help="Monte Carlo + quadrature checks of the score statistics"
    )
    p_theory.add_argument("--trials", type=int, default=100_000)
    p_theory.add_argument("--n", type=int, default=20)
    p_theory.add_argument("--m", type=int, default=20)
    p_theory.add_argument("--sigma1", type=float, default=0.5)
    p_theory.add_argument("--out", default="report.csv")
    p_theory.set_defaults(func=_cmd_verify_theory)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except (SequenceFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
