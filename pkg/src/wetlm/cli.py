"""Batch command line: build-index, embed-prep, search, sweep, eval, compare.

Settings come from an optional YAML file (``--config``); command-line flags
override it. Exit codes: 0 success, 1 unexpected failure, 2 configuration
error, 3 malformed input, 4 evaluation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import yaml

from .embeddings import (NeighborIndex, build_neighbor_index, cache_key, coverage_stats,
                         file_digest, load_embeddings)
from .errors import ConfigError, EvaluationError, WetlmError
from .evaluation import Qrels, RunResult, evaluate, read_qrels, read_run, write_run
from .index import DirectIndex, ingest_trec
from .models import ModelKind, ModelParams, Query
from .ranking import Scorer, run_queries, translation_for
from .significance import paired_t_test
from .text import StopList
from .topics import read_queries

logger = logging.getLogger("wetlm")

DEFAULT_MU_GRID = tuple(range(12, 89, 4))


@dataclass
class ExperimentConfig:
    collection: Path | None = None
    queries: Path | None = None
    qrels: Path | None = None
    embeddings: Path | None = None
    stoplist: Path | None = None
    cache_dir: Path = Path("cache")
    index: Path | None = None
    neighbors: Path | None = None
    output: Path | None = None
    table: Path | None = None
    kind: ModelKind = ModelKind.DIRICHLET
    mu: float = 44.0
    mu_grid: tuple[float, ...] = DEFAULT_MU_GRID
    threshold: float = 0.7
    alpha: float = 0.45
    top_k: int = 1000
    fallback: bool = True
    workers: int = 1
    run_tag: str | None = None
    level: float = 0.01

    @property
    def index_path(self) -> Path:
        return self.index or self.cache_dir / "index.ltix"

    def params(self, mu: float | None = None) -> ModelParams:
        return ModelParams(self.kind, self.mu if mu is None else mu, self.threshold,
                           self.alpha, self.top_k, self.fallback)

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing required setting: {name}")
            if isinstance(value, Path) and not value.exists():
                raise ConfigError(f"{name}: no such file {value}")

    def load_stoplist(self) -> StopList:
        if self.stoplist is None:
            return StopList.default()
        self.require("stoplist")
        return StopList.from_file(self.stoplist)

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = str(v)
            elif isinstance(v, ModelKind):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


_PATH_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)
                if "Path" in str(f.type)}


def parse_mu_grid(grid) -> tuple[float, ...]:
    """``"12:88:4"`` (inclusive range), ``"12,24,36"`` or a list of numbers."""
    if isinstance(grid, (list, tuple)):
        values = [float(v) for v in grid]
    elif ":" in str(grid):
        parts = [float(x) for x in str(grid).split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError(f"bad mu grid {grid!r}; expected start:stop:step")
        start, stop, step = parts
        values = []
        v = start
        while v <= stop + 1e-9:
            values.append(round(v, 10))
            v += step
    else:
        values = [float(x) for x in str(grid).split(",") if x.strip()]
    if not values or any(v <= 0 for v in values):
        raise ConfigError(f"mu grid must be non-empty and strictly positive: {grid!r}")
    return tuple(values)


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
        raw.update(raw.pop("model", {}) or {})
    for key, value in vars(args).items():
        if key in ("config", "command", "func", "verbose") or value is None:
            continue
        raw[key] = value
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown settings: {', '.join(sorted(unknown))}")
    for key in _PATH_FIELDS & set(raw):
        if raw[key] is not None:
            raw[key] = Path(raw[key])
    if "kind" in raw:
        try:
            raw["kind"] = ModelKind(raw["kind"])
        except ValueError:
            raise ConfigError(f"unknown model kind {raw['kind']!r}") from None
    if "mu_grid" in raw:
        raw["mu_grid"] = parse_mu_grid(raw["mu_grid"])
    cfg = ExperimentConfig(**raw)
    cfg.params()  # validates the hyper-parameters
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


# -- shared loading -----------------------------------------------------------

def load_index(cfg: ExperimentConfig) -> DirectIndex:
    path = cfg.index_path
    if not path.exists():
        raise ConfigError(f"index snapshot {path} not found; run build-index first")
    with open(path, "rb") as fh:
        return DirectIndex.load(fh)


def load_queries(cfg: ExperimentConfig) -> list[Query]:
    cfg.require("queries")
    with open(cfg.queries, encoding="utf-8") as fh:
        return read_queries(fh, cfg.load_stoplist())


def load_qrels(cfg: ExperimentConfig) -> Qrels:
    cfg.require("qrels")
    with open(cfg.qrels, encoding="utf-8") as fh:
        return read_qrels(fh)


def neighbor_cache_path(cfg: ExperimentConfig, index: DirectIndex, queries: Sequence[Query]) -> tuple[Path, bytes]:
    cfg.require("embeddings")
    vocab = embedding_vocab(index, queries)
    key = cache_key(file_digest(cfg.embeddings), vocab, cfg.threshold)
    return cfg.cache_dir / f"neighbors-{key.hex()[:16]}.ltnb", key


def embedding_vocab(index: DirectIndex, queries: Sequence[Query]) -> set[str]:
    # query-only terms get vectors too so they can translate from document terms
    vocab = set(index.vocab)
    for q in queries:
        vocab.update(q.terms)
    return vocab


def load_neighbors(cfg: ExperimentConfig, index: DirectIndex, queries: Sequence[Query]) -> NeighborIndex | None:
    if not cfg.kind.uses_embeddings:
        return None
    path = cfg.neighbors
    if path is None:
        path, _ = neighbor_cache_path(cfg, index, queries)
    if not path.exists():
        raise ConfigError(f"neighbour cache {path} not found; run embed-prep first")
    with open(path, "rb") as fh:
        nbr = NeighborIndex.load(fh)
    if abs(nbr.threshold - cfg.threshold) > 0:
        raise ConfigError(f"neighbour cache threshold {nbr.threshold} != configured {cfg.threshold}")
    return nbr


def run_tag(cfg: ExperimentConfig, mu: float) -> str:
    return cfg.run_tag or f"{cfg.kind.value}-mu{mu:g}"


# -- commands -----------------------------------------------------------------

def cmd_build_index(cfg: ExperimentConfig, out=None) -> DirectIndex:
    out = out or sys.stdout
    cfg.require("collection")
    with open(cfg.collection, "rb") as fh:
        index = ingest_trec(fh, cfg.load_stoplist())
    path = cfg.index_path
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        index.save(fh)
    stats = index.stats
    print(f"documents\t{stats.doc_count}", file=out)
    print(f"avdl\t{stats.avdl:.2f}", file=out)
    print(f"vocabulary\t{stats.vocab_size}", file=out)
    print(f"tokens\t{stats.total_tokens}", file=out)
    print(f"snapshot\t{path}", file=out)
    return index


def cmd_embed_prep(cfg: ExperimentConfig, out=None) -> Path:
    out = out or sys.stdout
    cfg.require("embeddings")
    index = load_index(cfg)
    queries = load_queries(cfg) if cfg.queries else []
    path, key = neighbor_cache_path(cfg, index, queries)
    vocab = embedding_vocab(index, queries)
    with open(cfg.embeddings, "rb") as fh:
        table = load_embeddings(fh, vocab)
    if table.zero_vectors:
        logger.warning("%d zero vectors rejected", table.zero_vectors)
    report = coverage_stats(table, index.stats, queries)
    for line in report.lines():
        print(line, file=out)
    if path.exists():
        logger.info("neighbour cache hit: %s", path)
        print(f"cache\t{path}\t(hit)", file=out)
        return path
    start = time.perf_counter()
    nbr = build_neighbor_index(table, vocab, cfg.threshold, workers=cfg.workers, key=key)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        nbr.save(fh)
    tmp.replace(path)
    logger.info("neighbour index built in %.1fs", time.perf_counter() - start)
    print(f"cache\t{path}", file=out)
    return path


def _write_run_file(run: RunResult, path: Path, cfg: ExperimentConfig, mu: float) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        write_run(run, fh)
    # trec_eval rejects comment lines, so the resolved config goes to a sidecar file
    meta = cfg.as_dict() | {"mu": mu}
    with open(path.with_name(path.name + ".config.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_search(cfg: ExperimentConfig, out=None) -> RunResult:
    out = out or sys.stdout
    index = load_index(cfg)
    queries = load_queries(cfg)
    nbr = load_neighbors(cfg, index, queries)
    params = cfg.params()
    scorer = Scorer(index, translation_for(params, index, nbr))
    run = RunResult(run_tag(cfg, params.mu), run_queries(scorer, queries, params, cfg.workers))
    if cfg.output:
        _write_run_file(run, cfg.output, cfg, params.mu)
    else:
        write_run(run, out)
    return run


@dataclass
class SweepRow:
    mu: float
    map: float
    p10: float


def cmd_sweep(cfg: ExperimentConfig, out=None) -> list[SweepRow]:
    out = out or sys.stdout
    index = load_index(cfg)
    queries = load_queries(cfg)
    qrels = load_qrels(cfg)
    nbr = load_neighbors(cfg, index, queries)
    scorer = Scorer(index, translation_for(cfg.params(), index, nbr))
    rows = []
    for mu in cfg.mu_grid:
        params = cfg.params(mu)
        run = RunResult(run_tag(cfg, mu), run_queries(scorer, queries, params, cfg.workers))
        if cfg.output:
            _write_run_file(run, cfg.output / f"{run.tag}.run", cfg, mu)
        ev = evaluate(run, qrels)
        rows.append(SweepRow(mu, ev.map, ev.mean_p10))
        logger.info("mu=%g MAP=%.4f P@10=%.4f", mu, ev.map, ev.mean_p10)
    best = max(rows, key=lambda r: r.map)
    print(f"{'mu':>8}  {'MAP(%)':>8}  {'P@10(%)':>8}", file=out)
    for r in rows:
        mark = "  <- best MAP" if r is best else ""
        print(f"{r.mu:>8g}  {100 * r.map:8.2f}  {100 * r.p10:8.2f}{mark}", file=out)
    if cfg.table:
        cfg.table.parent.mkdir(parents=True, exist_ok=True)
        with open(cfg.table, "w", encoding="utf-8") as fh:
            fh.write("mu\tmap\tp10\n")
            for r in rows:
                fh.write(f"{r.mu:g}\t{r.map:.6f}\t{r.p10:.6f}\n")
    return rows


def _read_run_path(path: Path) -> RunResult:
    if not path.exists():
        raise ConfigError(f"run file {path} not found")
    with open(path, encoding="utf-8") as fh:
        return read_run(fh)


def cmd_eval(cfg: ExperimentConfig, run_path: Path, order: str = "rank", complete: bool = False,
             out=None):
    out = out or sys.stdout
    qrels = load_qrels(cfg)
    ev = evaluate(_read_run_path(run_path), qrels, complete=complete, order=order)
    print("qid\tAP\tP@10", file=out)
    for qid in ev.ap:
        print(f"{qid}\t{ev.ap[qid]:.4f}\t{ev.p10[qid]:.4f}", file=out)
    print(f"all\t{ev.map:.4f}\t{ev.mean_p10:.4f}", file=out)
    if ev.excluded:
        print(f"# excluded (no relevant documents): {' '.join(ev.excluded)}", file=out)
    return ev


@dataclass
class Comparison:
    ap_a: dict[str, float]
    ap_b: dict[str, float]
    map_delta: float
    t: float
    p: float
    significant: bool
    level: float = 0.01
    extra: dict = field(default_factory=dict)


def compare_runs(run_a: RunResult, run_b: RunResult, qrels: Qrels, level: float = 0.01) -> Comparison:
    only_a = sorted(set(run_a.rankings) - set(run_b.rankings))
    only_b = sorted(set(run_b.rankings) - set(run_a.rankings))
    if only_a or only_b:
        raise EvaluationError(f"runs cover different queries; only in A: {only_a}, only in B: {only_b}")
    ev_a = evaluate(run_a, qrels)
    ev_b = evaluate(run_b, qrels)
    qids = sorted(ev_a.ap)
    a = [ev_a.ap[q] for q in qids]
    b = [ev_b.ap[q] for q in qids]
    test = paired_t_test(a, b)
    return Comparison(ev_a.ap, ev_b.ap, ev_a.map - ev_b.map, test.t, test.p,
                      test.significant(level), level, {"degenerate": test.degenerate, "n": len(qids)})


def cmd_compare(cfg: ExperimentConfig, path_a: Path, path_b: Path, out=None) -> Comparison:
    out = out or sys.stdout
    qrels = load_qrels(cfg)
    cmp = compare_runs(_read_run_path(path_a), _read_run_path(path_b), qrels, cfg.level)
    print("qid\tAP_A\tAP_B", file=out)
    for qid in cmp.ap_a:
        print(f"{qid}\t{cmp.ap_a[qid]:.4f}\t{cmp.ap_b[qid]:.4f}", file=out)
    verdict = "significant" if cmp.significant else "not significant"
    print(f"MAP delta (A - B)\t{cmp.map_delta:+.4f}", file=out)
    print(f"t\t{cmp.t:.4f}", file=out)
    print(f"p\t{cmp.p:.5g}", file=out)
    print(f"verdict\t{verdict} at {cmp.level:g}", file=out)
    return cmp


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wetlm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *groups):
        p.add_argument("--config", help="YAML settings file")
        p.add_argument("--cache-dir", dest="cache_dir")
        p.add_argument("--index", help="index snapshot path (default CACHE_DIR/index.ltix)")
        p.add_argument("--stoplist")
        if "queries" in groups:
            p.add_argument("--queries")
        if "qrels" in groups:
            p.add_argument("--qrels")
        if "model" in groups:
            p.add_argument("--kind", choices=[k.value for k in ModelKind])
            p.add_argument("--mu", type=float)
            p.add_argument("--threshold", type=float)
            p.add_argument("--alpha", type=float)
            p.add_argument("--top-k", dest="top_k", type=int)
            p.add_argument("--no-fallback", dest="fallback", action="store_false", default=None,
                           help="use the plain mixture for translation models")
            p.add_argument("--embeddings")
            p.add_argument("--neighbors", help="explicit neighbour cache file")
            p.add_argument("--workers", type=int)
            p.add_argument("--run-tag", dest="run_tag")

    p = sub.add_parser("build-index", help="ingest a TREC collection into a snapshot")
    common(p)
    p.add_argument("--collection")

    p = sub.add_parser("embed-prep", help="filter embeddings and cache neighbour lists")
    common(p, "queries")
    p.add_argument("--embeddings")
    p.add_argument("--threshold", type=float)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("search", help="write a TREC run for all queries")
    common(p, "queries", "model")
    p.add_argument("--output", "-o")

    p = sub.add_parser("sweep", help="evaluate a grid of mu values")
    common(p, "queries", "qrels", "model")
    p.add_argument("--mu-grid", dest="mu_grid", help="start:stop:step or comma list")
    p.add_argument("--output", "-o", help="directory for per-mu run files")
    p.add_argument("--table", help="write a tab-separated results table here")

    p = sub.add_parser("eval", help="MAP and P@10 of a run file")
    common(p, "qrels")
    p.add_argument("run")
    p.add_argument("--order", choices=["rank", "trec_eval"], default="rank")
    p.add_argument("--complete", action="store_true", help="count judged queries missing from the run")

    p = sub.add_parser("compare", help="paired t-test between two runs")
    common(p, "qrels")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--level", type=float, help="significance level (default 0.01)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            run, order, complete = args.run, args.order, args.complete
            del args.run, args.order, args.complete
            cmd_eval(resolve_config(args), Path(run), order, complete)
        elif args.command == "compare":
            a, b = args.run_a, args.run_b
            del args.run_a, args.run_b
            cmd_compare(resolve_config(args), Path(a), Path(b))
        else:
            cfg = resolve_config(args)
            {
                "build-index": cmd_build_index,
                "embed-prep": cmd_embed_prep,
                "search": cmd_search,
                "sweep": cmd_sweep,
            }[args.command](cfg)
    except WetlmError as exc:
        print(f"wetlm {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"wetlm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
