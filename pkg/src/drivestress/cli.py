"""Command-line entry points for fixture generation, campaigns, and reports.

Exit codes: 0 success, 2 configuration or usage error, 3 backend error,
4 analysis error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import shlex
import sys
from pathlib import Path

from .analysis import analyze, severity_conditioned_defense
from .campaign import (
    ENDPOINT_ENV_VAR,
    AnalysisError,
    CampaignConfig,
    ConfigError,
    run_campaign,
)
from .defend import DefenseSpec, apply_defense
from .fixtures import generate_fixture_clips
from .images import load_image, save_image
from .manifest import ManifestError, load_manifest
from .modelio import BackendError, HttpTransport, StdioTransport
from .monitor import monitor_report
from .perturb import SeedDerivation, apply_perturbation, perturbation_energy
from .protocol_suite import run_suite, write_replay_fixture
from .records import RecordError, read_records
from .report import (
    _ablation_rows,
    _defense_rows,
    _monitor_rows,
    _severity_rows,
    _text_table,
    write_report,
)
from .stats import StatsError
from .types import (
    BRIGHT_FACTOR,
    DARK_FACTOR,
    FOG_HEAVY_ALPHA,
    FOG_LIGHT_ALPHA,
    PerturbationSpec,
    ValidationError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_ANALYSIS = 4


def spec_from_label(label: str) -> PerturbationSpec:
    """Parse a condition label like noise_30, dark, bright, fog_heavy."""
    if label == "clean":
        return PerturbationSpec(kind="clean")
    if label.startswith("noise_"):
        try:
            sigma = float(label.split("_", 1)[1])
        except ValueError:
            raise ConfigError(f"bad noise label {label!r}; expected noise_<sigma>") from None
        return PerturbationSpec(kind="noise", sigma=sigma)
    if label == "dark":
        return PerturbationSpec(kind="dark", brightness_factor=DARK_FACTOR)
    if label == "bright":
        return PerturbationSpec(kind="bright", brightness_factor=BRIGHT_FACTOR)
    if label == "fog_light":
        return PerturbationSpec(kind="fog_light", alpha=FOG_LIGHT_ALPHA)
    if label == "fog_heavy":
        return PerturbationSpec(kind="fog_heavy", alpha=FOG_HEAVY_ALPHA)
    raise ConfigError(f"unknown perturbation label {label!r}")


def _cmd_fixtures(args: argparse.Namespace) -> int:
    manifest = generate_fixture_clips(
        args.out, args.clips, seed=args.seed, views=args.views,
        width=args.width, height=args.height,
    )
    print(f"wrote {args.clips} clips under {args.out}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def _cmd_perturb(args: argparse.Namespace) -> int:
    spec = spec_from_label(args.perturbation)
    clips = load_manifest(args.manifest)
    if args.clip is not None:
        clips = [c for c in clips if c.clip_id == args.clip]
        if not clips:
            raise ConfigError(f"clip {args.clip!r} not in manifest")
    defense = DefenseSpec(kind=args.defense) if args.defense else None
    out_root = Path(args.out)
    frames_base = Path(args.manifest).parent
    for clip in clips:
        out_dir = out_root / clip.clip_id / spec.label
        out_dir.mkdir(parents=True, exist_ok=True)
        for idx, frame_path in enumerate(clip.frames):
            img = load_image(frames_base / frame_path)
            derivation = SeedDerivation(args.seed, clip.clip_id, idx, spec.label)
            out = apply_perturbation(
                img, spec, derivation, vertical_gradient=args.fog_vertical_gradient
            )
            if defense is not None:
                out = apply_defense(out, defense)
            dest = out_dir / f"frame_{idx:02d}.png"
            save_image(out, dest)
            energy = perturbation_energy(img, out)
            print(f"{clip.clip_id} frame {idx}: {dest} energy={energy:.3f}")
    return EXIT_OK


def _config_from_args(args: argparse.Namespace, require_manifest: bool = True) -> CampaignConfig:
    if args.config is not None:
        config = CampaignConfig.from_file(args.config)
        overrides = {}
        for name in ("manifest", "out_dir", "seed", "parallelism", "ablation", "backend_mode"):
            value = getattr(args, name, None)
            if value is not None:
                overrides[name] = value
        if getattr(args, "endpoint", None) is not None:
            overrides["endpoint"] = args.endpoint
        if getattr(args, "command", None):
            overrides["command"] = tuple(shlex.split(args.command))
        if getattr(args, "defense", None):
            overrides["defenses"] = tuple(DefenseSpec(kind=d) for d in args.defense)
        if overrides:
            config = dataclasses.replace(config, **overrides)
        return config
    if require_manifest and args.manifest is None:
        raise ConfigError("either --config or --manifest is required")
    return CampaignConfig(
        manifest=args.manifest,
        out_dir=args.out_dir if args.out_dir is not None else "campaign_out",
        backend_mode=args.backend_mode or "mock",
        endpoint=getattr(args, "endpoint", None),
        command=tuple(shlex.split(args.command)) if getattr(args, "command", None) else None,
        defenses=tuple(DefenseSpec(kind=d) for d in (args.defense or ())),
        ablation=bool(args.ablation),
        seed=args.seed if args.seed is not None else 42,
        parallelism=args.parallelism if args.parallelism is not None else 4,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    result = run_campaign(config)
    print(f"records: {result.records_written} new, file {result.records_path}")
    print(f"inferences executed: {result.inferences}")
    if result.failures:
        print(f"failures: {result.failures}, file {result.failures_path}")
        for failure in result.failure_rows[:10]:
            print(f"  {failure.clip_id}/{failure.condition}: [{failure.error}] {failure.message}")
        if result.failures > 10:
            print(f"  ... {result.failures - 10} more")
    return EXIT_OK


def _load_records(args: argparse.Namespace) -> list:
    records = read_records(args.records, strict=not args.skip_bad)
    if not records:
        raise AnalysisError(f"no records in {args.records}")
    return records


def _cmd_analyze(args: argparse.Namespace, render: bool) -> int:
    config = _config_from_args(args)
    records = _load_records(args)
    summary = analyze(records, config)
    out_dir = Path(args.out_dir) if args.out_dir is not None else Path(config.out_dir)
    if render:
        written = write_report(summary, out_dir)
        print(f"summary: {written['summary']}")
        print(f"tables: {out_dir / 'tables'}")
        print(f"figures: {out_dir / 'figures'}")
        print(f"text digest: {written['tables_txt']}")
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "summary.json"
        from .report import _json_default

        with open(path, "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        print(f"summary: {path}")
    return EXIT_OK


def _cmd_monitor_eval(args: argparse.Namespace) -> int:
    records = _load_records(args)
    attacked = [r for r in records if r.with_coc and r.defense == "none" and r.kind != "clean"]
    if not attacked:
        raise AnalysisError("no perturbed undefended with-CoC records to evaluate")
    reports = monitor_report(attacked, threshold_m=args.threshold)
    fake = _FakeSummary(monitor=reports)
    header, rows = _monitor_rows(fake)
    print(_text_table("CoC-flip monitor", header, rows))
    return EXIT_OK


def _cmd_defense_eval(args: argparse.Namespace) -> int:
    records = _load_records(args)
    from .analysis import _defense_table

    table = _defense_table(records)
    if not table:
        raise AnalysisError("records contain no defended rows")
    severity = severity_conditioned_defense(records, args.mild_max, args.severe_min)
    fake = _FakeSummary(defense_table=table, severity_defense=severity)
    header, rows = _defense_rows(fake)
    print(_text_table("Mean L2 by defense", header, rows))
    header, rows = _severity_rows(fake)
    print(_text_table("Severity-conditioned delta", header, rows))
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace) -> int:
    records = _load_records(args)
    from .analysis import _ablation

    rows, averages = _ablation(records)
    if not rows:
        raise AnalysisError("records contain no ablation arm (run with --ablation)")
    fake = _FakeSummary(ablation=rows, ablation_averages=averages)
    header, table = _ablation_rows(fake)
    print(_text_table("CoC ablation", header, table))
    return EXIT_OK


def _cmd_protocol_suite(args: argparse.Namespace) -> int:
    if args.replay_fixture_out is not None:
        path = write_replay_fixture(args.replay_fixture_out)
        print(f"replay fixture: {path}")
        if args.command is None and args.endpoint is None:
            return EXIT_OK
    if (args.command is None) == (args.endpoint is None):
        raise ConfigError("exactly one of --command or --endpoint is required")
    if args.command is not None:
        transport = StdioTransport(shlex.split(args.command), timeout_s=args.timeout)
    else:
        transport = HttpTransport(args.endpoint, timeout_s=args.timeout)
    try:
        results = run_suite(
            transport, stub=args.stub, replay=args.replay, frames_dir=args.frames_dir
        )
    finally:
        close = getattr(transport, "close", None)
        if close is not None:
            close()
    for result in results:
        print(result)
    if all(r.passed for r in results):
        print(f"all {len(results)} checks passed")
        return EXIT_OK
    failed = sum(1 for r in results if not r.passed)
    print(f"{failed} of {len(results)} checks failed")
    return EXIT_BACKEND


class _FakeSummary:
    """Duck-typed stand-in so the table renderers run on partial results."""

    def __init__(self, **fields) -> None:
        self.monitor = fields.get("monitor", {})
        self.defense_table = fields.get("defense_table", ())
        self.severity_defense = fields.get("severity_defense", {})
        self.ablation = fields.get("ablation", ())
        self.ablation_averages = fields.get("ablation_averages")


def _add_records_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--records", required=True, help="records.jsonl from a campaign run")
    p.add_argument("--skip-bad", action="store_true", help="skip malformed record lines")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="campaign config JSON")
    p.add_argument("--manifest", help="clip manifest path")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--backend", dest="backend_mode", choices=("mock", "http", "stdio"))
    p.add_argument("--endpoint", help=f"HTTP endpoint (overrides {ENDPOINT_ENV_VAR} and config)")
    p.add_argument("--command", help="stdio backend command, one shell-quoted string")
    p.add_argument("--defense", action="append", help="defense kind, repeatable")
    p.add_argument("--ablation", action="store_true", default=None,
                   help="also run the without-CoC arm")
    p.add_argument("--seed", type=int, help="campaign seed")
    p.add_argument("--parallelism", type=int, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivestress",
        description="Stress-test trajectory models under sensor corruptions "
        "and evaluate CoC-flip as a safety monitor.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("fixtures", help="generate synthetic clips and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=120)
    p.set_defaults(fn=_cmd_fixtures)

    p = sub.add_parser("perturb", help="write perturbed frames for inspection")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--perturbation", required=True, help="e.g. noise_30, dark, fog_heavy")
    p.add_argument("--clip", help="restrict to one clip id")
    p.add_argument("--defense", help="defense kind to apply after the perturbation")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--fog-vertical-gradient", action="store_true")
    p.set_defaults(fn=_cmd_perturb)

    p = sub.add_parser("run", help="run an evaluation campaign")
    _add_config_args(p)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("analyze", help="compute summary.json from records")
    _add_config_args(p)
    _add_records_arg(p)
    p.set_defaults(fn=lambda a: _cmd_analyze(a, render=False))

    p = sub.add_parser("report", help="render summary, tables, and figures")
    _add_config_args(p)
    _add_records_arg(p)
    p.set_defaults(fn=lambda a: _cmd_analyze(a, render=True))

    p = sub.add_parser("monitor-eval", help="confusion metrics for the CoC-flip monitor")
    _add_records_arg(p)
    p.add_argument("--threshold", type=float, default=5.0, help="unsafe L2 threshold in meters")
    p.set_defaults(fn=_cmd_monitor_eval)

    p = sub.add_parser("defense-eval", help="defense deltas, severity-conditioned")
    _add_records_arg(p)
    p.add_argument("--mild-max", type=float, default=10.0)
    p.add_argument("--severe-min", type=float, default=30.0)
    p.set_defaults(fn=_cmd_defense_eval)

    p = sub.add_parser("ablate", help="with- vs without-CoC table from ablation records")
    _add_records_arg(p)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("protocol-suite", help="run wire-protocol conformance checks")
    p.add_argument("--command", help="stdio backend command, one shell-quoted string")
    p.add_argument("--endpoint", help="HTTP endpoint")
    p.add_argument("--stub", action="store_true", help="check constant-velocity stub kinematics")
    p.add_argument("--replay", action="store_true", help="check replay-driven rejections")
    p.add_argument("--frames-dir", help="also exercise path-typed frames from this directory")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--replay-fixture-out", help="write the canned replay responses here")
    p.set_defaults(fn=_cmd_protocol_suite)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (AnalysisError, StatsError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, ManifestError, RecordError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
