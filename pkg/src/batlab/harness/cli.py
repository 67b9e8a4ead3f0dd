"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import BatlabError, ConfigError
from .config import RunConfig, load_config


def _add_common(parser):
    parser.add_argument("--config", type=str, default=None, help="run-config JSON")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    parser.add_argument("--out", type=str, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batlab",
                                     description="desk-scale audio SSL laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus + manifest")
    _add_common(p)

    p = sub.add_parser("ingest", help="featurize a manifest into the cache")
    _add_common(p)
    p.add_argument("--manifest", type=str, required=True)

    p = sub.add_parser("pretrain", help="masked latent regression training")
    _add_common(p)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--checkpoint-every", type=int, default=500,
                   help="periodic checkpoint interval in steps (0 = final only)")

    p = sub.add_parser("embed", help="write frozen LayerStacks for a manifest")
    _add_common(p)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True,
                   help="checkpoint prefix (without .batl/.json)")
    p.add_argument("--tap", type=str, default="eob", choices=("eob", "mlp"))

    p = sub.add_parser("probe", help="train probes on cached LayerStacks")
    _add_common(p)
    p.add_argument("--stacks", type=str, required=True, help="stacks_index.json path")

    p = sub.add_parser("report", help="emit CSV/SVG artifacts from run directories")
    _add_common(p)
    p.add_argument("runs", nargs="+", help="run directories to scan")

    p = sub.add_parser("selftest", help="run gradient-check and oracle suites")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None)

    return parser


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def _cmd_synth(args) -> int:
    from .synth import synth_dataset

    config = _resolve_config(args)
    manifest = synth_dataset(config.synth, config.frontend, config.seed, args.out)
    config.save(Path(args.out) / "config_echo.json")
    print(f"wrote {len(manifest['records'])} clips and manifest.json to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    from .ingest import cache_root, ingest_manifest
    from .runs import load_manifest

    config = _resolve_config(args)
    manifest, manifest_dir = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = ingest_manifest(manifest, manifest_dir, config.frontend, cache_root(out),
                             target_frames=config.target_frames)
    print(f"featurized {result['featurized']}, cached {result['cached']}, "
          f"errors {len(result['errors'])}")
    for err in result["errors"]:
        print(f"  error: {err}", file=sys.stderr)
    return 1 if result["errors"] else 0


def _cmd_pretrain(args) -> int:
    from .runs import run_pretrain

    config = _resolve_config(args)
    trainer = run_pretrain(config, config.seed, args.manifest, args.out,
                           checkpoint_every=args.checkpoint_every)
    last = trainer.history[-1] if trainer.history else {}
    print(f"finished {trainer.step_idx} steps; final loss {last.get('loss', float('nan')):.6f}")
    print(f"checkpoint: {Path(args.out) / 'checkpoint_final'}")
    return 0


def _cmd_embed(args) -> int:
    from .ingest import cache_root, ingest_manifest
    from .runs import load_manifest
    from .stacks import embed_manifest

    config = _resolve_config(args)
    manifest, manifest_dir = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = ingest_manifest(manifest, manifest_dir, config.frontend, cache_root(out),
                             target_frames=config.target_frames)
    if result["errors"]:
        for err in result["errors"]:
            print(f"  error: {err}", file=sys.stderr)
        return 1
    index = embed_manifest(manifest, result["prefixes"], args.checkpoint, out, tap=args.tap)
    print(f"wrote {len(index['records'])} stacks and stacks_index.json to {args.out}")
    return 0


def _cmd_probe(args) -> int:
    from .runs import run_probe

    config = _resolve_config(args)
    summary = run_probe(config, config.seed, args.stacks, args.out)
    keys = [k for k in ("val_metric", "test_metric", "gate_argmax") if k in summary]
    print("probe summary: " + ", ".join(f"{k}={summary[k]}" for k in keys))
    return 0


def _cmd_report(args) -> int:
    from .reports import emit_probe_report, emit_prototype_sweep, emit_training_report

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for run in args.runs:
        written += emit_training_report(run, out)
        written += emit_probe_report(run, out)
    written += emit_prototype_sweep(args.runs, out)
    if not written:
        print("no recognizable run artifacts found", file=sys.stderr)
        return 1
    print("wrote: " + ", ".join(sorted(set(written))))
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest()
    return 0 if failures == 0 else 1


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "pretrain": _cmd_pretrain,
    "embed": _cmd_embed,
    "probe": _cmd_probe,
    "report": _cmd_report,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BatlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
