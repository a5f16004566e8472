"""Command line entry point: ``semfuse <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import STRATEGIES, RunConfig, config_from_dict, load_config
from .dataset import write_synthetic
from .errors import ConfigError, DataError, SemfuseError
from .evaluation import format_metrics

EXIT_CONFIG = 2
EXIT_DATA = 3


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({}, base_dir=".")
    over = {}
    if getattr(args, "strategy", None):
        over["strategy"] = args.strategy
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "data", None):
        over["data"] = str(Path(args.data).resolve())
    if getattr(args, "max_scans", None) is not None:
        over["max_scans"] = args.max_scans
    return cfg.with_(**over) if over else cfg


def cmd_generate(args) -> int:
    from .synthetic import scene_from_dict

    cfg = _config(args)
    scene = dict(cfg.scene or {"fixture": "urban"})
    if args.fixture:
        scene = {"fixture": args.fixture}
    if args.scans is not None:
        scene["scans"] = args.scans
    spec = scene_from_dict(scene)
    root = write_synthetic(spec, args.out, cfg.seed)
    print(f"wrote {spec.scans} scans to {root}")
    return 0


def cmd_correct(args) -> int:
    from .pipeline import write_corrected

    files = write_corrected(_config(args), args.out)
    print(f"wrote {len(files)} files under {Path(args.out) / 'corrected'}")
    return 0


def cmd_fuse(args) -> int:
    from .formats import write_labeled
    from .pipeline import Pipeline

    pipe = Pipeline(_config(args))
    out = Path(args.out) / "labeled"
    out.mkdir(parents=True, exist_ok=True)
    for r in pipe.label_all(args.workers):
        write_labeled(r.labeled, out / f"{r.frame.stem}.lpts")
    print(f"labelled {len(pipe.data.frames)} scans into {out}")
    return 0


def cmd_map(args) -> int:
    from .formats import write_map
    from .pipeline import Pipeline, load_labeled

    cfg = _config(args)
    tree = Pipeline(cfg).build_map(load_labeled(cfg, args.out))
    write_map(tree, Path(args.out) / "map.soct")
    print(f"map with {len(tree.occupied_keys())} occupied voxels")
    return 0


def cmd_eval(args) -> int:
    from .pipeline import Pipeline, load_labeled, load_map, write_metrics_csv, write_report_files
    from .classes import EVAL_ABBREVIATIONS

    cfg = _config(args)
    pipe = Pipeline(cfg)
    out = Path(args.out)
    reports = {"points": pipe.evaluate_points(load_labeled(cfg, out))}
    if (out / "map.soct").exists():
        reports["map"] = pipe.evaluate_map(load_map(cfg, out))
    if all(r is None for r in reports.values()):
        raise DataError("no ground truth available for evaluation")
    write_metrics_csv(reports, out / "metrics.csv")
    for scope, rep in reports.items():
        if rep is not None:
            write_report_files(rep, out, scope, EVAL_ABBREVIATIONS)
            print(f"[{scope}]\n{format_metrics(rep)}")
    return 0


def cmd_plot(args) -> int:
    from .pipeline import load_map, write_map_rasters

    cfg = _config(args)
    files = write_map_rasters(load_map(cfg, args.out), Path(args.out), cfg.classes)
    print(f"wrote {len(files)} rasters")
    return 0


def cmd_run(args) -> int:
    from .pipeline import emit_artifacts, run_pipeline

    cfg = _config(args)
    result = run_pipeline(cfg, workers=args.workers)
    emit_artifacts(result, args.out)
    if result.point_report is not None:
        print(format_metrics(result.point_report))
    print(f"artifacts in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semfuse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, strategy=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--data", help="dataset root (overrides the config)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--max-scans", type=int, default=None, dest="max_scans")
        if strategy:
            sp.add_argument("--strategy", choices=STRATEGIES, default=None)
        sp.add_argument("--workers", type=int, default=1, help="threads for per-scan labelling (outputs unaffected)")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common(g, strategy=False)
    g.add_argument("--fixture", choices=("urban", "two_wall", "single_wall"), default=None)
    g.add_argument("--scans", type=int, default=None)
    g.set_defaults(func=cmd_generate)
    for name, func, text in (("correct", cmd_correct, "motion-correct scans (means + covariances)"),
                             ("fuse", cmd_fuse, "label scans from the camera scores"),
                             ("map", cmd_map, "build the semantic map from labelled scans"),
                             ("eval", cmd_eval, "evaluate labelled scans and map against ground truth"),
                             ("plot", cmd_plot, "render map rasters"),
                             ("run", cmd_run, "full pipeline with all artifacts")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SemfuseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
