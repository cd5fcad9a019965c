"""End-to-end pipeline with plain-file artifacts and a hashed manifest.

Every stage reads its inputs from the run directory and writes its outputs
there, so any stage can be rerun on its own once the upstream files exist.
``manifest.json`` lists each completed stage with the SHA-256 of its files.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import cohort, ingest, report, simnet, synth, vectors
from .mapeq import optimize_hierarchical, project, read_tree, write_tree

log = logging.getLogger("folionet")

STAGES = ("synth", "ingest", "vectors", "network", "cluster", "cohort", "report")

MARKET_DIR = "market"
UNIVERSE = "universe.bin"
PORTFOLIOS = "portfolios.csv"
TRADING = "trading.csv"
GRAPH = "graph.txt"
CLASSES = "classes.csv"
TREE = "tree.txt"
GROUPS = "groups.csv"
GROUP_REPORT = "groups_report.csv"
CURVE = "curve.csv"
PAIRS = "pairs.csv"
DISTRIBUTIONS = "distributions.csv"
SCATTER = "scatter.csv"
SUMMARY = "summary.txt"
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    """All pipeline settings; each field is a key in the config file.

    When none of the four input files is given, the synth stage builds a
    market from ``synth_spec`` (or the built-in default market).
    """

    out_dir: Path = Path("folionet-run")
    synth_spec: Path | None = None
    snapshot_t1: Path | None = None
    snapshot_t2: Path | None = None
    prices_t1: Path | None = None
    prices_t2: Path | None = None
    t1: dt.date = dt.date(2009, 6, 30)
    t2: dt.date = dt.date(2011, 12, 30)
    max_share_change: float = 0.05
    round_to: int = 2
    threshold: float = 0.9
    seed: int = 0
    trials: int = 10
    min_split_size: int = 3
    max_depth: int = 16
    bootstrap_iterations: int = 1000
    alpha: float = 0.95
    n_max: int = 100
    report_groups: int = 10
    sample_pairs: int = 200_000
    bin_width: float = 0.05
    boot_reps: int = 1000
    dist_samples: int = 2000
    dist_sizes: tuple[int, ...] = (1, 10, 100)
    threads: int = 1

    @property
    def synthetic(self) -> bool:
        return all(getattr(self, k) is None for k in _INPUTS)

    def validate(self) -> None:
        given = [k for k in _INPUTS if getattr(self, k) is not None]
        if given and len(given) != len(_INPUTS):
            missing = sorted(set(_INPUTS) - set(given))
            raise ConfigError(f"input files incomplete; missing {', '.join(missing)}")
        if self.synth_spec is not None and given:
            raise ConfigError("synth_spec and input files are mutually exclusive")
        if self.synth_spec is not None and not Path(self.synth_spec).is_file():
            raise ConfigError(f"synth_spec not found: {self.synth_spec}")
        if self.synth_spec is not None:
            try:
                synth.load_spec(self.synth_spec)
            except (synth.SpecError, ValueError) as exc:
                raise ConfigError(f"synth_spec {self.synth_spec}: {exc}") from None
        if not 0 < self.threshold <= 1:
            raise ConfigError(f"threshold must lie in (0, 1], got {self.threshold}")
        if not self.t1 < self.t2:
            raise ConfigError("t1 must precede t2")
        if not 0 <= self.max_share_change:
            raise ConfigError("max_share_change must be non-negative")
        if not 0 <= self.round_to <= 9:
            raise ConfigError("round_to must lie in 0..9")
        for key in ("trials", "bootstrap_iterations", "n_max", "report_groups", "sample_pairs",
                    "boot_reps", "dist_samples", "threads", "min_split_size", "max_depth"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.bin_width <= 1:
            raise ConfigError("bin_width must lie in (0, 1]")
        if not self.dist_sizes or min(self.dist_sizes) < 1:
            raise ConfigError("dist_sizes must be positive integers")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


_INPUTS = ("snapshot_t1", "snapshot_t2", "prices_t1", "prices_t2")


def _cast(name: str, kind, text: str, base: Path):
    if name in ("out_dir", "synth_spec") or name in _INPUTS:
        p = Path(text).expanduser()
        return p if p.is_absolute() else base / p
    if name in ("t1", "t2"):
        return dt.date.fromisoformat(text)
    if name == "dist_sizes":
        return tuple(int(v) for v in text.replace(",", " ").split())
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    raise AssertionError(name)


def parse_config(text: str, base: Path = Path(".")) -> PipelineConfig:
    """Read ``key = value`` lines (``#`` starts a comment) into a validated config."""
    kinds = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _cast(key, kinds[key], value, base)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        cfg = PipelineConfig()
        cfg.validate()
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


# --- manifest -------------------------------------------------------------------------


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_manifest(out_dir: Path) -> dict:
    path = Path(out_dir) / MANIFEST
    if not path.is_file():
        return {"stages": []}
    return json.loads(path.read_text(encoding="utf-8"))


def _record(out_dir: Path, stage: str, files: list[Path]) -> None:
    manifest = read_manifest(out_dir)
    entry = {
        "stage": stage,
        "artifacts": {str(p.relative_to(out_dir)): sha256(p) for p in files},
    }
    stages = [s for s in manifest["stages"] if s["stage"] != stage] + [entry]
    stages.sort(key=lambda s: STAGES.index(s["stage"]))
    text = json.dumps({"stages": stages}, indent=2, sort_keys=True) + "\n"
    (Path(out_dir) / MANIFEST).write_text(text, encoding="utf-8")


# --- stages ---------------------------------------------------------------------------


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageError(stage, f"missing input {path}")
    return path


def stage_synth(cfg: PipelineConfig) -> list[Path]:
    spec = synth.load_spec(cfg.synth_spec) if cfg.synth_spec else synth.default_market()
    pair, truth = synth.generate(spec)
    paths = synth.write_market(cfg.out_dir / MARKET_DIR, pair, truth)
    log.info("synth investors=%d stocks=%d", len(truth.labels), len(pair.prices_t1))
    return [paths[name] for name in synth.MARKET_FILES]


def _input_paths(cfg: PipelineConfig) -> tuple[Path, Path, Path, Path]:
    if cfg.synthetic:
        market = cfg.out_dir / MARKET_DIR
        return (market / "snapshot_t1.tsv", market / "snapshot_t2.tsv",
                market / "prices_t1.csv", market / "prices_t2.csv")
    return cfg.snapshot_t1, cfg.snapshot_t2, cfg.prices_t1, cfg.prices_t2


def stage_ingest(cfg: PipelineConfig) -> list[Path]:
    s1, s2, p1, p2 = (_need(Path(p), "ingest") for p in _input_paths(cfg))
    t1, t2 = cfg.t1, cfg.t2
    if cfg.synthetic:
        spec = synth.load_spec(cfg.synth_spec) if cfg.synth_spec else synth.default_market()
        t1, t2 = spec.t1, spec.t2
    pair = ingest.load_pair(s1, s2, p1, p2, t1=t1, t2=t2)
    universe = ingest.clean_universe(pair, max_share_change=cfg.max_share_change)
    out = cfg.out_dir / UNIVERSE
    universe.save(out)
    log.info("ingest investors=%d stocks=%d", universe.n_investors, universe.n_stocks)
    return [out]


def _universe(cfg: PipelineConfig, stage: str) -> ingest.CleanUniverse:
    return ingest.CleanUniverse.load(_need(cfg.out_dir / UNIVERSE, stage))


def stage_vectors(cfg: PipelineConfig) -> list[Path]:
    u = _universe(cfg, "vectors")
    port = vectors.portfolio_matrix(u.shares_t1, u.price_t1, cfg.round_to)
    trade = vectors.trading_matrix(u.shares_t1, u.shares_t2, u.price_t1)
    paths = [cfg.out_dir / PORTFOLIOS, cfg.out_dir / TRADING]
    vectors.write_vectors(paths[0], u.investors, port, decimals=cfg.round_to)
    vectors.write_vectors(paths[1], u.investors, trade)
    log.info("vectors portfolios=%d trading=%d", int(np.count_nonzero(np.diff(port.indptr))),
             int(np.count_nonzero(np.diff(trade.indptr))))
    return paths


def _load_vectors(cfg: PipelineConfig, stage: str):
    u = _universe(cfg, stage)
    port = vectors.read_vectors(_need(cfg.out_dir / PORTFOLIOS, stage), u.investors, u.n_stocks)
    trade = vectors.read_vectors(_need(cfg.out_dir / TRADING, stage), u.investors, u.n_stocks)
    return u, port, trade


def _units(port: sp.csr_matrix, round_to: int) -> sp.csr_matrix:
    units = port.copy()
    units.data = np.rint(units.data * 10 ** round_to)
    return units.astype(np.int64)


def stage_network(cfg: PipelineConfig) -> list[Path]:
    u, port, _ = _load_vectors(cfg, "network")
    classes = simnet.dedupe(_units(port, cfg.round_to), u.investors, cfg.round_to)
    if not classes:
        raise StageError("network", "no investor has a portfolio at the first date")
    graph = simnet.build_graph(classes, cfg.threshold, u.n_stocks)
    paths = [cfg.out_dir / GRAPH, cfg.out_dir / CLASSES]
    simnet.write_graph(paths[0], graph)
    simnet.write_membership(paths[1], classes)
    log.info("network classes=%d edges=%d", graph.n_nodes, graph.n_edges)
    return paths


def stage_cluster(cfg: PipelineConfig) -> list[Path]:
    members = simnet.read_membership(_need(cfg.out_dir / CLASSES, "cluster"))
    sizes = np.array([len(m) for m in members], dtype=np.int64)
    graph = simnet.read_graph(_need(cfg.out_dir / GRAPH, "cluster"), sizes)
    tree = optimize_hierarchical(graph, seed=cfg.seed, trials=cfg.trials, threads=cfg.threads,
                                 min_split_size=cfg.min_split_size, max_depth=cfg.max_depth)
    groups = project(tree, members)
    paths = [cfg.out_dir / TREE, cfg.out_dir / GROUPS]
    write_tree(paths[0], tree, graph)
    write_groups(paths[1], groups.groups)
    log.info("cluster codelength=%.6f groups=%d depth=%d", tree.codelength, len(groups),
             tree.root.depth())
    return paths


def write_groups(path: Path, groups) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group_id,investor_id\n")
        for g, members in enumerate(groups, start=1):
            for inv in sorted(members):
                fh.write(f"{g},{inv}\n")


def read_groups(path: Path) -> list[list[str]]:
    groups: dict[int, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            g, inv = line.rstrip("\n").split(",", 1)
            groups.setdefault(int(g), []).append(inv)
    return [groups[g] for g in sorted(groups)]


def _population(port: sp.csr_matrix) -> np.ndarray:
    """Rows of investors with a first-date portfolio (the clustered investors)."""
    return np.flatnonzero(np.diff(port.indptr) > 0)


def stage_cohort(cfg: PipelineConfig) -> list[Path]:
    u, port, trade = _load_vectors(cfg, "cohort")
    groups = read_groups(_need(cfg.out_dir / GROUPS, "cohort"))
    row = {inv: r for r, inv in enumerate(u.investors)}
    population = _population(port)
    reports = []
    for gid, members in enumerate(groups[: cfg.report_groups], start=1):
        rows = np.array(sorted(row[m] for m in members), dtype=np.int64)
        outside = len(population) - len(rows)
        sss = None
        if len(rows) >= 2 and outside >= 1:
            sss = cohort.significant_set_size(rows, population, trade, N=cfg.bootstrap_iterations,
                                              alpha=cfg.alpha, n_max=cfg.n_max,
                                              seed=cfg.seed + gid)
        reports.append(cohort.group_stats(rows, port, trade, stock_names=u.stocks,
                                          sample_pairs=cfg.sample_pairs, seed=cfg.seed,
                                          group_id=gid, significant=sss))
        log.info("cohort %s", reports[-1].table_row())
    out = cfg.out_dir / GROUP_REPORT
    cohort.write_reports(out, reports)
    return [out]


def stage_report(cfg: PipelineConfig) -> list[Path]:
    u, port, trade = _load_vectors(cfg, "report")
    reports = cohort.read_reports(_need(cfg.out_dir / GROUP_REPORT, "report"))
    population = _population(port)
    pairs = population[report.sample_pairs(len(population), cfg.sample_pairs, cfg.seed)]
    curves = [report.similarity_curve(pairs, trade, port, cfg.bin_width, cfg.boot_reps,
                                      variant, cfg.seed) for variant in ("all", "new")]
    tables = report.random_group_distributions(port, trade, cfg.dist_sizes, cfg.dist_samples,
                                               cfg.seed, investors=population)
    out = cfg.out_dir
    report.write_curves(out / CURVE, curves)
    report.write_pair_sample(out / PAIRS, pairs, u.investors, curves[0])
    report.write_distributions(out / DISTRIBUTIONS, tables)
    report.write_scatter(out / SCATTER, report.group_scatter(reports))
    write_summary(out / SUMMARY, cfg, u, port, reports, curves, tables)
    return [out / n for n in (CURVE, PAIRS, DISTRIBUTIONS, SCATTER, SUMMARY)]


def write_summary(path, cfg, u, port, reports, curves, tables) -> None:
    members = simnet.read_membership(cfg.out_dir / CLASSES)
    tree = read_tree(cfg.out_dir / TREE)
    lines = [
        f"investors {u.n_investors}",
        f"stocks {u.n_stocks}",
        f"investors with portfolios {len(_population(port))}",
        f"portfolio classes {len(members)}",
        f"threshold {cfg.threshold}",
        f"codelength {tree.codelength:.6f} bits",
        f"top-level groups {len(tree.top_modules)}",
        "",
        "largest groups:",
        *(r.table_row() for r in reports),
        "",
    ]
    for c in curves:
        lines.append(f"curve[{c.variant}] bins={len(c.bins)} global_mean_trading_sim={c.global_mean:.6f}")
    for t in tables:
        lines.append(f"cdf[{t.kind}, size {t.group_size}] mass_at_zero={t.mass_at_zero:.4f} "
                     f"variance={float(np.var(t.values)):.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_RUNNERS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "vectors": stage_vectors,
    "network": stage_network,
    "cluster": stage_cluster,
    "cohort": stage_cohort,
    "report": stage_report,
}


def run_stage(cfg: PipelineConfig, stage: str) -> list[Path]:
    """Run one stage, record it in the manifest and return its files.

    Any failure is re-raised as StageError carrying the stage name.
    """
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    log.info("stage %s start", stage)
    try:
        files = _RUNNERS[stage](cfg)
    except StageError:
        raise
    except (ValueError, OSError, KeyError) as exc:
        raise StageError(stage, str(exc)) from exc
    _record(cfg.out_dir, stage, files)
    log.info("stage %s done files=%d", stage, len(files))
    return files


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage in order; returns the manifest."""
    cfg.validate()
    stages = STAGES if cfg.synthetic else STAGES[1:]
    (cfg.out_dir / MANIFEST).unlink(missing_ok=True)
    for stage in stages:
        run_stage(cfg, stage)
    return read_manifest(cfg.out_dir)
