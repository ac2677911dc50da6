"""``llmnas`` command line.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .archspace.spaces import SPACE_NAMES, Nb201Space, get_space
from .backends import Backend, OracleBackend, RemoteBackend, SamplingParams, ScriptedBackend, TranscriptLog
from .baselines import EaConfig, RlConfig, evolutionary_search, random_search, rl_search
from .bench import BenchTable, DatasetId, load_benchmark, synthetic_table
from .collm import CollmConfig, MemoryPolicy, collm_search, paired_curve_csv, sillm_search
from .core import (
    BenchEvaluator,
    Constraint,
    SearchConfig,
    SearchResult,
    SurrogateEvaluator,
    coefficient_of_variation,
    summarize,
)
from .errors import ArchError, BackendError, ConfigError, DataError, NasError
from .prompts import PromptSet
from .ranking import run_poc

log = logging.getLogger("llmnas")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3
METHODS = ("rs", "rl", "ea", "collm", "sillm")
LLM_METHODS = ("collm", "sillm")


# -- argument helpers --------------------------------------------------------------

def parse_seeds(text: str) -> list[int]:
    """``"10"`` means seeds 0..9; ``"3,7,11"`` is an explicit list; ``"5-9"`` a range."""
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        if "-" in text.strip("-"):
            lo, hi = text.split("-", 1)
            return list(range(int(lo), int(hi) + 1))
        n = int(text)
    except ValueError:
        raise ConfigError(f"bad --seeds value {text!r}") from None
    if n < 1:
        raise ConfigError("--seeds must be >= 1")
    return list(range(n))


def parse_grid(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}") from None
    if not values:
        raise ConfigError("empty grid")
    return values


def parse_flag(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


@dataclass
class BackendSpec:
    kind: str
    arg: Optional[str] = None

    @classmethod
    def parse(cls, text: Optional[str]) -> "BackendSpec":
        if not text:
            raise ConfigError("this method needs --backend remote|scripted:<path>|oracle:<mode>")
        kind, _, arg = text.partition(":")
        if kind == "remote":
            return cls(kind, arg or None)
        if kind == "scripted":
            if not arg:
                raise ConfigError("scripted backend needs a path: scripted:<file.jsonl>")
            if not Path(arg).is_file():
                raise ConfigError(f"script file {arg} not found")
            return cls(kind, arg)
        if kind == "oracle":
            mode = arg or "greedy"
            if mode not in ("random", "greedy", "epsilon-greedy"):
                raise ConfigError(f"unknown oracle mode {mode!r}")
            return cls(kind, mode)
        raise ConfigError(f"unknown backend {text!r}")

    def build(self, *, seed: int, table: Optional[BenchTable], dataset_id: Optional[DatasetId],
              log_path: Optional[Path]) -> Backend:
        script = ScriptedBackend(self.arg) if self.kind == "scripted" else None  # read before truncating
        transcript = None
        if log_path is not None:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            log_path.write_text("")
            transcript = TranscriptLog(log_path)
        if script is not None:
            script.log = transcript
            return script
        if self.kind == "oracle":
            if table is None:
                raise ConfigError("the oracle backend only works on nb201 with a benchmark table")
            return OracleBackend(table, dataset_id, self.arg, seed=seed, log=transcript)
        return RemoteBackend(base_url=self.arg, log=transcript)

    def __str__(self) -> str:
        return self.kind + (f":{self.arg}" if self.arg else "")


def load_table(spec: Optional[str]) -> BenchTable:
    """``--bench`` value: a JSON-lines file, or ``synthetic[:seed]``."""
    if not spec:
        raise ConfigError("nb201 runs need --bench <file.jsonl> or --bench synthetic[:seed]")
    if spec.startswith("synthetic"):
        _, _, seed = spec.partition(":")
        try:
            return synthetic_table(int(seed or 0))
        except ValueError:
            raise ConfigError(f"bad synthetic seed in {spec!r}") from None
    return load_benchmark(spec)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- search ----------------------------------------------------------------------------

@dataclass
class RunContext:
    space_name: str
    table: Optional[BenchTable]
    dataset_id: Optional[DatasetId]
    out: Path
    backend: Optional[BackendSpec]
    prompts: PromptSet
    workers: int


def build_context(args) -> RunContext:
    space_name = args.space.lower()
    if space_name not in SPACE_NAMES:
        raise ConfigError(f"unknown space {args.space!r}; choose from {', '.join(SPACE_NAMES)}")
    table = dataset_id = None
    if space_name == "nb201":
        dataset_id = DatasetId(args.dataset, args.split)
        table = load_table(args.bench)
    backend = None
    if args.method in LLM_METHODS:
        backend = BackendSpec.parse(args.backend)
    prompts = PromptSet.load(args.prompts)
    return RunContext(space_name, table, dataset_id, Path(args.out), backend, prompts, max(1, args.workers))


def make_space(ctx: RunContext):
    if ctx.space_name == "nb201":
        return Nb201Space(ctx.dataset_id.dataset)
    return get_space(ctx.space_name)


def make_evaluator(ctx: RunContext, space, seed: int):
    if ctx.table is not None:
        return BenchEvaluator(ctx.table, ctx.dataset_id, space)
    return SurrogateEvaluator(space, seed=seed)


def resolve_target(args, ctx: RunContext) -> Optional[float]:
    if args.target is None:
        return None
    if args.target == "optimal":
        if ctx.table is None:
            raise ConfigError("--target optimal needs an nb201 benchmark table")
        return ctx.table.optimal(ctx.dataset_id)[1]
    try:
        return float(args.target)
    except ValueError:
        raise ConfigError(f"bad --target {args.target!r}") from None


def search_config(args, ctx: RunContext, seed: int) -> SearchConfig:
    dataset = str(ctx.dataset_id) if ctx.dataset_id else f"{ctx.space_name}/surrogate"
    return SearchConfig(arch_budget=args.budget, iteration_limit=args.iters, target=resolve_target(args, ctx),
                        constraint=Constraint.parse(args.constraint), dataset=dataset, seed=seed)


def collm_config(args, ctx: RunContext, seed: int, *, memory: Optional[MemoryPolicy] = None,
                 nav_t: Optional[float] = None, gen_t: Optional[float] = None) -> CollmConfig:
    base_t = args.temperature
    nav_t = nav_t if nav_t is not None else (args.nav_temperature if args.nav_temperature is not None else base_t)
    gen_t = gen_t if gen_t is not None else (args.gen_temperature if args.gen_temperature is not None else base_t)
    memory = memory or MemoryPolicy(parse_flag(args.nav_memory), parse_flag(args.gen_memory))
    return CollmConfig(
        search=search_config(args, ctx, seed), memory=memory,
        candidates_per_iteration=args.candidates,
        navigator_params=SamplingParams(temperature=nav_t), generator_params=SamplingParams(temperature=gen_t),
        prompts=ctx.prompts,
    )


def run_method(method: str, args, ctx: RunContext, seed: int, *, stem: str,
               collm_cfg: Optional[CollmConfig] = None) -> SearchResult:
    space = make_space(ctx)
    evaluator = make_evaluator(ctx, space, seed)
    if method == "rs":
        result = random_search(space, evaluator, search_config(args, ctx, seed))
    elif method == "ea":
        ea = EaConfig(population=args.population, iterations=args.generations,
                      elite_fraction=args.elite_fraction, mutation_rate=args.mutation_rate,
                      crossover_prob=args.crossover_prob)
        result = evolutionary_search(space, evaluator, search_config(args, ctx, seed), ea)
    elif method == "rl":
        rl = RlConfig(learning_rate=args.lr, ema_momentum=args.ema_momentum, batch=args.rl_batch)
        result = rl_search(space, evaluator, search_config(args, ctx, seed), rl)
    else:
        cfg = collm_cfg or collm_config(args, ctx, seed)
        backend = ctx.backend.build(seed=seed, table=ctx.table, dataset_id=ctx.dataset_id,
                                    log_path=ctx.out / f"{stem}.transcript.jsonl")
        fn = collm_search if method == "collm" else sillm_search
        result = fn(space, evaluator, backend, cfg)
    result.write(ctx.out, stem)
    return result


def write_manifest(args, ctx: RunContext, seeds: Sequence[int], command: str, extra: Optional[dict] = None) -> None:
    manifest = {
        "tool": "llmnas",
        "version": __version__,
        "command": command,
        "argv": list(args.argv),
        "config": {k: v for k, v in vars(args).items() if k not in ("func", "argv")},
        "space": ctx.space_name,
        "benchmark_digest": ctx.table.digest if ctx.table is not None else None,
        "benchmark_source": ctx.table.source if ctx.table is not None else None,
        "backend": str(ctx.backend) if ctx.backend else None,
        "seeds": list(seeds),
        "out": str(ctx.out),
    }
    if extra:
        manifest.update(extra)
    _write_json(ctx.out / "manifest.json", manifest)


def _map_seeds(fn: Callable[[int], SearchResult], seeds: Sequence[int], workers: int) -> list[SearchResult]:
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


def summary_rows(label: str, results: Sequence[SearchResult], dataset_id: Optional[DatasetId]) -> dict:
    stats = summarize(results)
    row = {"method": label, "runs": len(results), "best": str(stats["best_accuracy"])}
    if dataset_id is not None:
        for split in ("valid", "test"):
            key = f"{dataset_id.dataset}/{split}"
            row[key] = str(stats[key]) if key in stats else ""
    row["partial"] = sum(r.partial for r in results)
    return row


def _csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _print_table(rows: Sequence[dict]) -> None:
    cols = list(rows[0])
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(str(r[c]).ljust(widths[c]) for c in cols))


def cmd_search(args) -> int:
    ctx = build_context(args)
    seeds = parse_seeds(args.seeds)
    write_manifest(args, ctx, seeds, f"search {args.method}")
    def one(seed):
        log.info("search %s seed %d", args.method, seed)
        return run_method(args.method, args, ctx, seed, stem=f"{args.method}-seed{seed}")

    results = _map_seeds(one, seeds, ctx.workers)
    row = summary_rows(args.method, results, ctx.dataset_id)
    (ctx.out / "summary.csv").write_text(_csv([row]))
    _print_table([row])
    if ctx.table is not None and args.budget >= 15625:
        arch, acc = ctx.table.optimal(ctx.dataset_id)
        print(f"dataset optimum ({ctx.dataset_id}): {acc:.2f}")
    for r in results:
        if r.partial:
            print(f"seed {r.seed}: partial result ({r.error})", file=sys.stderr)
    return EXIT_BACKEND if any(r.partial for r in results) else EXIT_OK


def cmd_ablate(args) -> int:
    args.method = args.method or "collm"
    if args.method not in LLM_METHODS:
        raise ConfigError("ablations apply to collm or sillm")
    ctx = build_context(args)
    seeds = parse_seeds(args.seeds)
    if args.kind == "memory":
        cells = [(MemoryPolicy(n, g), None, None) for n in (True, False) for g in (True, False)]
    else:
        grid = parse_grid(args.grid)
        cells = [(None, nt, gt) for nt in grid for gt in grid]
    write_manifest(args, ctx, seeds, f"ablate {args.kind}", {"cells": len(cells)})
    rows, finals, by_label = [], [], {}
    for memory, nt, gt in cells:
        if memory is not None:
            label = memory.label
        else:
            label = f"nav{nt:g}-gen{gt:g}"

        def one(seed, memory=memory, nt=nt, gt=gt, label=label):
            cfg = collm_config(args, ctx, seed, memory=memory, nav_t=nt, gen_t=gt)
            return run_method(args.method, args, ctx, seed, stem=f"{label}-seed{seed}", collm_cfg=cfg)

        results = _map_seeds(one, seeds, ctx.workers)
        by_label[label] = results[0]
        row = summary_rows(label, results, ctx.dataset_id)
        rows.append(row)
        finals.extend(r.best_accuracy for r in results)
    (ctx.out / f"ablate_{args.kind}.csv").write_text(_csv(rows))
    (ctx.out / f"ablate_{args.kind}_curves.csv").write_text(paired_curve_csv(by_label))
    _print_table(rows)
    if args.kind == "temperature":
        cv = coefficient_of_variation(finals)
        print(f"coefficient of variation of final accuracy: {cv:.4f}%")
        _write_json(ctx.out / "ablate_temperature_cv.json", {"cv_percent": cv, "runs": len(finals)})
    return EXIT_OK


def cmd_ingest(args) -> int:
    table = load_benchmark(args.input, allow_partial=args.allow_partial)
    digest = table.write(args.output)
    print(f"{len(table)} entries, digest {digest}")
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    digest = synthetic_table(args.seed).write(args.output)
    print(f"15625 entries, digest {digest}")
    return EXIT_OK


def cmd_poc(args) -> int:
    table = load_table(args.bench)
    dataset_id = DatasetId(args.dataset, args.split)
    spec = BackendSpec.parse(args.backend)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = parse_seeds(args.seeds) if args.seeds else list(range(args.trials))
    _write_json(out / "manifest.json", {
        "tool": "llmnas", "version": __version__, "command": "poc", "argv": list(args.argv),
        "benchmark_digest": table.digest, "backend": str(spec), "seeds": seeds,
        "dataset": str(dataset_id), "n_archs": args.n_archs, "temperatures": parse_grid(args.temperatures),
    })
    backend = spec.build(seed=seeds[0] if seeds else 0, table=table, dataset_id=dataset_id,
                         log_path=out / "poc.transcript.jsonl")
    report = run_poc(table, dataset_id, backend, n_archs=args.n_archs, n_trials=len(seeds), seeds=seeds,
                     temperatures=parse_grid(args.temperatures), prompts=PromptSet.load(args.prompts))
    report.write(out)
    summary = report.to_json()
    mean = summary["mean_tau"]
    print(f"trials {summary['trials']}, failed {summary['failed']}, "
          f"mean tau {'n/a' if mean is None else f'{mean:.4f}'}"
          + ("" if summary["std_tau"] is None else f" ± {summary['std_tau']:.4f}")
          + ("" if summary["top1_rate"] is None else f", top-1 {summary['top1_rate']:.2%}"))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--space", default="nb201", help=f"one of {', '.join(SPACE_NAMES)}")
    p.add_argument("--bench", help="benchmark JSON-lines file or synthetic[:seed] (nb201 only)")
    p.add_argument("--dataset", default="cifar10")
    p.add_argument("--split", default="test", choices=("valid", "test"),
                   help="split whose accuracy drives the search")
    p.add_argument("--budget", type=int, default=100, help="maximum evaluated architectures")
    p.add_argument("--iters", type=int, default=20, help="iteration limit for collm/sillm")
    p.add_argument("--seeds", default="1", help="count (N -> 0..N-1), list a,b,c or range a-b")
    p.add_argument("--constraint", default="none", help="none, flops:<M> or params:<M>")
    p.add_argument("--target", help="stop once best accuracy reaches this value, or 'optimal'")
    p.add_argument("--backend", help="remote[:<base url>] | scripted:<file.jsonl> | oracle:<mode>")
    p.add_argument("--temperature", type=float, default=0.6)
    p.add_argument("--nav-temperature", type=float)
    p.add_argument("--gen-temperature", type=float)
    p.add_argument("--nav-memory", default="on")
    p.add_argument("--gen-memory", default="off")
    p.add_argument("--candidates", type=int, help="candidates per iteration (default: spread the budget)")
    p.add_argument("--prompts", help="directory of prompt template overrides")
    p.add_argument("--out", default="runs")
    p.add_argument("--workers", type=int, default=1, help="seeds run in parallel")
    ea = p.add_argument_group("evolution")
    ea.add_argument("--population", type=int, default=10)
    ea.add_argument("--generations", type=int, default=10)
    ea.add_argument("--elite-fraction", type=float, default=0.5)
    ea.add_argument("--mutation-rate", type=float, default=0.1)
    ea.add_argument("--crossover-prob", type=float, default=0.5)
    rl = p.add_argument_group("reinforce")
    rl.add_argument("--lr", type=float, default=0.01)
    rl.add_argument("--ema-momentum", type=float, default=0.9)
    rl.add_argument("--rl-batch", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llmnas", description="LLM-guided and baseline architecture search.")
    parser.add_argument("--version", action="version", version=f"llmnas {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a benchmark file and write its canonical form")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--allow-partial", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("make-synthetic", help="write a seeded synthetic NB201-shaped table")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("search", help="run one search method over one or more seeds")
    p.add_argument("method", choices=METHODS)
    _add_run_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("ablate", help="memory or temperature grid for collm/sillm")
    p.add_argument("kind", choices=("memory", "temperature"))
    p.add_argument("--method", choices=LLM_METHODS, default="collm")
    p.add_argument("--grid", default="0,0.2,0.4,0.6,0.8,1.0", help="temperature values (both roles)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("poc", help="blind ranking experiment with Kendall's tau")
    p.add_argument("--bench", required=True)
    p.add_argument("--dataset", default="cifar10")
    p.add_argument("--split", default="test", choices=("valid", "test"))
    p.add_argument("--backend", required=True)
    p.add_argument("--trials", type=int, default=40)
    p.add_argument("--seeds", help="explicit seeds (overrides --trials)")
    p.add_argument("--n-archs", type=int, default=10)
    p.add_argument("--temperatures", default="0.6")
    p.add_argument("--prompts")
    p.add_argument("--out", default="runs/poc")
    p.set_defaults(func=cmd_poc)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ArchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except NasError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
