"""Command-line entry point.

Subcommands: gen-scms (random model cohorts), simulate (datasets for
one model and setup), discover (run one method on a dataset
directory), bench (the full grid) and report (re-derive summaries from
an existing results directory).  Every generating command takes a
mandatory --seed and reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    BenchConfig,
    BenchResult,
    CellResult,
    METHODS,
    emit_report,
    pool_auc,
    profile_config,
    run_benchmark,
    weak_baseline,
)
from .features import Feature, FeatureScoreTable, feature_space, graph_from_features
from .llc import LlcConfig, llc_discover
from .scm import (
    SETUP_IDS,
    ScmSamplerConfig,
    experiment_setup,
    load_scm,
    read_dataset,
    sample_data,
    sample_random_scm,
    save_scm,
    exact_dataset,
    write_dataset,
)
from .search import D_SEP, SIGMA_SEP, SearchConfig, asp_discover_full, ensemble_predict

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_CONFIG_SECTIONS = {"sampler", "llc", "search", "bench", "out", "profile"}


class UsageError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text())
    unknown = set(raw) - _CONFIG_SECTIONS
    if unknown:
        raise UsageError(
            f"unknown config keys {sorted(unknown)}; allowed: {sorted(_CONFIG_SECTIONS)}"
        )
    return raw


def _build_section(cls, section: dict, label: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - fields
    if unknown:
        raise UsageError(f"unknown {label} config keys {sorted(unknown)}")
    return cls(**section)


def _sampler_from(raw: dict) -> ScmSamplerConfig:
    return _build_section(ScmSamplerConfig, raw.get("sampler", {}), "sampler")


def _llc_from(raw: dict) -> LlcConfig:
    return _build_section(LlcConfig, raw.get("llc", {}), "llc")


def _search_from(raw: dict) -> SearchConfig:
    return _build_section(SearchConfig, raw.get("search", {}), "search")


def _parse_size(text: str) -> int | str:
    if text == "inf":
        return "inf"
    return int(text)


def _cmd_gen_scms(args) -> int:
    raw = _load_config(args.config)
    sampler = _sampler_from(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 1)))
    for k in range(args.count):
        scm = sample_random_scm(sampler, rng)
        save_scm(scm, out / f"scm_{k:03d}.json")
    print(f"wrote {args.count} SCMs to {out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    scm = load_scm(args.scm)
    setup = experiment_setup(args.setup, scm.n)
    size = _parse_size(args.size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 2, args.setup)))
    for k, e in enumerate(setup):
        if size == "inf":
            ds = exact_dataset(scm, e)
        else:
            ds = sample_data(scm, e, size, rng)
        write_dataset(ds, out / f"exp{k}")
    manifest = {
        "setup_id": args.setup,
        "size": "inf" if size == "inf" else size,
        "n": scm.n,
        "experiments": [list(e.j) for e in setup],
    }
    (out / "manifest.json").write_text(json.dumps(manifest) + "\n")
    print(f"wrote {len(setup)} datasets to {out}")
    return EXIT_OK


def _cmd_discover(args) -> int:
    data_dir = Path(args.data)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"no manifest.json in {data_dir}; run simulate first")
    manifest = json.loads(manifest_path.read_text())
    setup_id = args.setup if args.setup is not None else manifest["setup_id"]
    n = manifest["n"]
    setup = experiment_setup(setup_id, n)
    datasets = [read_dataset(data_dir / f"exp{k}") for k in range(len(setup))]
    for ds, e in zip(datasets, setup):
        if ds.experiment.j != e.j:
            raise UsageError(
                f"dataset intervention {list(ds.experiment.j)} does not match "
                f"setup {setup_id}"
            )
    raw = _load_config(args.config)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 3)))
    if args.method in ("llc_nf", "llc_f"):
        cfg = dataclasses.replace(
            _llc_from(raw), use_faithfulness=(args.method == "llc_f")
        )
        table = llc_discover(datasets, setup, cfg, rng=rng)
    elif args.method in ("asp_d", "asp_s"):
        mode = D_SEP if args.method == "asp_d" else SIGMA_SEP
        cfg = dataclasses.replace(_search_from(raw), mode=mode)
        truth = load_scm(args.scm) if args.scm else None
        table = asp_discover_full(datasets, setup, cfg, truth=truth, rng=rng).table
    else:
        raise UsageError(f"unknown method {args.method!r}; valid: {list(METHODS)}")
    table.save(args.out)
    print(f"wrote scores for {len(table.scores)} features to {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    raw = _load_config(args.config)
    profile = args.profile or raw.get("profile", "desk")
    cfg = profile_config(profile, seed=args.seed, jobs=args.jobs)
    overrides = {}
    if "bench" in raw:
        allowed = {f.name for f in dataclasses.fields(BenchConfig)}
        unknown = set(raw["bench"]) - allowed
        if unknown:
            raise UsageError(f"unknown bench config keys {sorted(unknown)}")
        overrides.update(raw["bench"])
        if "sizes" in overrides:
            overrides["sizes"] = tuple(
                _parse_size(str(s)) for s in overrides["sizes"]
            )
        if "setup_ids" in overrides:
            overrides["setup_ids"] = tuple(int(s) for s in overrides["setup_ids"])
        if "methods" in overrides:
            overrides["methods"] = tuple(overrides["methods"])
    if "sampler" in raw:
        overrides["sampler"] = _sampler_from(raw)
    if "llc" in raw:
        overrides["llc"] = _llc_from(raw)
    if "search" in raw:
        overrides["search"] = _search_from(raw)
    overrides["seed"] = args.seed
    overrides["jobs"] = args.jobs
    cfg = dataclasses.replace(cfg, **overrides)
    result = run_benchmark(cfg)
    out = Path(args.out if args.out else raw.get("out", "bench_out"))
    emit_report(result, out)
    n_failed = sum(1 for c in result.cells if c.error)
    print(
        f"{len(result.cells)} cells ({n_failed} failed), "
        f"weak baseline {result.weak_baseline:.4f}, report in {out}"
    )
    return EXIT_OK


def _cmd_report(args) -> int:
    results_dir = Path(args.results)
    results_csv = results_dir / "results.csv"
    scores_csv = results_dir / "scores.csv"
    if not results_csv.exists() or not scores_csv.exists():
        raise UsageError(f"{results_dir} lacks results.csv/scores.csv")

    import csv as _csv

    with results_csv.open() as fh:
        result_rows = list(_csv.DictReader(fh))
    with scores_csv.open() as fh:
        score_rows = list(_csv.DictReader(fh))

    def parse_cell_size(text):
        return "inf" if text == "inf" else int(text)

    n = 1 + max(max(int(r["from"]), int(r["to"])) for r in score_rows)
    feats = feature_space(n)
    tables: dict[tuple, dict[Feature, float]] = {}
    truth_sets: dict[int, set[Feature]] = {}
    for r in score_rows:
        key = (int(r["scm_id"]), int(r["setup_id"]), parse_cell_size(r["size"]), r["method"])
        tables.setdefault(key, {})[Feature(r["feature_type"], int(r["from"]), int(r["to"]))] = float(r["score"])
        if int(r["truth"]):
            truth_sets.setdefault(int(r["scm_id"]), set()).add(
                Feature(r["feature_type"], int(r["from"]), int(r["to"]))
            )
        else:
            truth_sets.setdefault(int(r["scm_id"]), set())
    n_scms = 1 + max(int(r["scm_id"]) for r in result_rows)
    truths = [
        graph_from_features(n, truth_sets.get(k, set())) for k in range(n_scms)
    ]
    cells = []
    for r in result_rows:
        key = (int(r["scm_id"]), int(r["setup_id"]), parse_cell_size(r["size"]), r["method"])
        scores = tables.get(key)
        cells.append(
            CellResult(
                scm_id=key[0],
                setup_id=key[1],
                size=key[2],
                method=key[3],
                scores=(
                    FeatureScoreTable(n=n, method=key[3], scores=scores)
                    if scores
                    else None
                ),
                predictions=None,
                accuracy=float(r["accuracy"]) if r["accuracy"] else None,
                runtime_s=0.0,
                certified=r["certified"] == "1",
                n_failed_features=int(r["n_failed_features"]),
            )
        )
    cfg = BenchConfig(
        n_scms=n_scms,
        sizes=tuple(sorted({c.size for c in cells}, key=lambda s: (s == "inf", s if s != "inf" else 0))),
        setup_ids=tuple(sorted({c.setup_id for c in cells})),
        methods=tuple(m for m in METHODS if any(c.method == m for c in cells)),
        n_nodes=n,
    )
    result = BenchResult(
        config=cfg,
        truths=truths,
        cells=cells,
        auc_rows=pool_auc(cfg, truths, cells),
        weak_baseline=weak_baseline(truths),
    )
    emit_report(result, args.out)
    print(f"report rebuilt in {args.out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopcausal",
        description="Causal discovery benchmark for sparse linear cyclic "
        "models with hidden confounders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scms", help="sample a cohort of random SCMs")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=150)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_gen_scms)

    p = sub.add_parser("simulate", help="simulate datasets for one SCM and setup")
    p.add_argument("--scm", required=True)
    p.add_argument("--setup", type=int, required=True, choices=SETUP_IDS)
    p.add_argument("--size", default="1000", help="1000|10000|100000|inf")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("discover", help="run one discovery method on datasets")
    p.add_argument("--data", required=True, help="directory written by simulate")
    p.add_argument("--method", required=True)
    p.add_argument("--setup", type=int, default=None, choices=SETUP_IDS)
    p.add_argument("--scm", default=None, help="ground-truth SCM (infinite-mode ASP)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("bench", help="run the full benchmark grid")
    p.add_argument("--profile", choices=("desk", "paper"), default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("report", help="rebuild summaries from results files")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
