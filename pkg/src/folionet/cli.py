"""Command-line entry point: ``folionet <stage> [options]``.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
stage fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import cohort, pipeline, report, synth
from .pipeline import ConfigError, PipelineConfig, StageError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("folionet")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value pipeline config file")
    p.add_argument("--threads", type=int, help="worker threads for clustering trials")
    p.add_argument("--seed", type=int, help="master seed for all stochastic stages")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="folionet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic market")
    _common(p)
    p.add_argument("--spec", type=Path, help="market spec file (default: built-in market)")
    p.add_argument("--out-dir", type=Path)

    p = sub.add_parser("ingest", help="parse snapshots and build the clean universe")
    _common(p)
    p.add_argument("--t1", type=Path, help="first-date snapshot TSV")
    p.add_argument("--t2", type=Path, help="second-date snapshot TSV")
    p.add_argument("--prices-t1", type=Path)
    p.add_argument("--prices-t2", type=Path)
    p.add_argument("--max-share-change", type=float)
    p.add_argument("--out", type=Path, help="universe file (its directory becomes the run dir)")

    for name, text in (("vectors", "portfolio and trading vectors"),
                       ("network", "reduced similarity graph"),
                       ("cluster", "hierarchical map-equation clustering"),
                       ("cohort", "group statistics and significant set sizes")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--dir", type=Path, help="run directory (default: config out_dir)")

    p = sub.add_parser("report", help="similarity curves, distributions and group scatter as CSV")
    _common(p)
    p.add_argument("product", nargs="?", choices=("curve", "dist", "scatter"),
                   help="single product; omit to write all report files into the run dir")
    p.add_argument("--in", dest="in_dir", type=Path, help="run directory with upstream artifacts")
    p.add_argument("--out", type=Path, help="output CSV for a single product")
    p.add_argument("--bin-width", type=float)
    p.add_argument("--variant", choices=("all", "new"), default="all")

    p = sub.add_parser("run", help="all stages in order")
    _common(p)
    p.add_argument("--out-dir", type=Path)
    return parser


def _config(args) -> PipelineConfig:
    cfg = pipeline.load_config(args.config)
    changes = {}
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.seed is not None:
        changes["seed"] = args.seed
    run_dir = getattr(args, "out_dir", None) or getattr(args, "dir", None) or getattr(args, "in_dir", None)
    if run_dir is not None:
        changes["out_dir"] = run_dir
    if args.command == "ingest":
        files = {"snapshot_t1": args.t1, "snapshot_t2": args.t2,
                 "prices_t1": args.prices_t1, "prices_t2": args.prices_t2}
        changes.update({k: v for k, v in files.items() if v is not None})
        if args.max_share_change is not None:
            changes["max_share_change"] = args.max_share_change
        if args.out is not None:
            changes["out_dir"] = args.out.parent
    if args.command == "synth" and args.spec is not None:
        changes["synth_spec"] = args.spec
    if args.command == "report" and args.bin_width is not None:
        changes["bin_width"] = args.bin_width
    cfg = cfg.replace(**changes)
    cfg.validate()
    return cfg


def _ingest(cfg: PipelineConfig, out: Path | None) -> None:
    files = pipeline.run_stage(cfg, "ingest")
    if out is not None and files[0].resolve() != out.resolve():
        files[0].replace(out)


def _report_product(cfg: PipelineConfig, args) -> None:
    """Write one report product to ``--out``."""
    if args.out is None:
        raise ConfigError("--out is required with a report product")
    try:
        if args.product == "scatter":
            reports = cohort.read_reports(pipeline._need(cfg.out_dir / pipeline.GROUP_REPORT, "report"))
            report.write_scatter(args.out, report.group_scatter(reports))
            return
        _, port, trade = pipeline._load_vectors(cfg, "report")
        population = pipeline._population(port)
        if args.product == "curve":
            pairs = population[report.sample_pairs(len(population), cfg.sample_pairs, cfg.seed)]
            curve = report.similarity_curve(pairs, trade, port, cfg.bin_width, cfg.boot_reps,
                                            args.variant, cfg.seed)
            report.write_curves(args.out, [curve])
        else:
            tables = report.random_group_distributions(port, trade, cfg.dist_sizes,
                                                       cfg.dist_samples, cfg.seed,
                                                       investors=population)
            report.write_distributions(args.out, tables)
    except StageError:
        raise
    except (ValueError, OSError, KeyError) as exc:
        raise StageError("report", str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        cfg = _config(args)
        if args.command == "run":
            manifest = pipeline.run_pipeline(cfg)
            log.info("run complete stages=%d manifest=%s", len(manifest["stages"]),
                     cfg.out_dir / pipeline.MANIFEST)
        elif args.command == "ingest":
            _ingest(cfg, args.out)
        elif args.command == "report" and args.product:
            _report_product(cfg, args)
        else:
            pipeline.run_stage(cfg, args.command)
    except (ConfigError, synth.SpecError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except StageError as exc:
        log.error("%s", exc)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
