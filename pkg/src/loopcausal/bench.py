"""The evaluation harness: random model cohorts, intervention setups,
dataset sizes, all four discoverers, and the accuracy / AUC reporting.

Every cell of the grid (model x setup x size x method) derives its data
from a seed sequence keyed by (seed, scm_id, setup_id, size) alone, so
the two methods sharing a cell see identical data and parallel
execution cannot change any emitted number.  All result files are
byte-reproducible for a fixed seed; wall-clock timings go to a separate
log excluded from that contract.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import Feature, FeatureScoreTable, feature_space, truth_features
from .graphs import DirectedMixedGraph
from .llc import LlcConfig, llc_discover
from .scm import (
    Dataset,
    Experiment,
    LinearScm,
    SETUP_IDS,
    ScmSamplerConfig,
    exact_dataset,
    experiment_setup,
    graph_of,
    sample_data,
    sample_random_scm,
)
from .search import D_SEP, SIGMA_SEP, SearchConfig, asp_discover_full, ensemble_predict

METHODS = ("llc_nf", "llc_f", "asp_d", "asp_s")
INFINITE = "inf"


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""


def accuracy(predictions: dict[Feature, bool], truth: DirectedMixedGraph) -> float:
    """Fraction of features classified correctly."""
    labels = truth_features(truth)
    if set(predictions) != set(labels):
        raise ValueError("predictions must cover the feature space")
    hits = sum(1 for f, present in labels.items() if predictions[f] == present)
    return hits / len(labels)


def auc_roc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Area under the ROC curve as the rank statistic
    P(score_pos > score_neg) + 0.5 P(tie) over all pos/neg pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=float)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_rank_sum = ranks[labels].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def weak_baseline(truths: Sequence[DirectedMixedGraph]) -> float:
    """Mean accuracy of the all-absent classifier over a cohort."""
    accs = []
    for g in truths:
        total = len(feature_space(g.n))
        accs.append((total - g.edge_count()) / total)
    return float(np.mean(accs)) if accs else 1.0


@dataclass(frozen=True)
class BenchConfig:
    n_scms: int = 150
    sizes: tuple = (1000, 10000, 100000, INFINITE)
    setup_ids: tuple[int, ...] = SETUP_IDS
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    n_nodes: int = 5
    sampler: ScmSamplerConfig = field(default_factory=ScmSamplerConfig)
    llc: LlcConfig = field(default_factory=LlcConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    jobs: int = 1

    def __post_init__(self):
        if not self.sizes or not self.setup_ids or not self.methods:
            raise ValueError("sizes, setup_ids and methods must be nonempty")
        for s in self.sizes:
            if s != INFINITE and (not isinstance(s, int) or s < 1):
                raise ValueError(f"bad size {s!r}")
        for sid in self.setup_ids:
            if sid not in SETUP_IDS:
                raise ValueError(f"unknown setup id {sid}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


def profile_config(name: str, seed: int, jobs: int = 1) -> BenchConfig:
    """Named grids: ``desk`` is a laptop-scale sanity run, ``paper``
    the full evaluation grid (compute-expensive by design)."""
    # wall-clock solver budgets are disabled here so that identically
    # seeded runs are byte-identical regardless of machine speed
    search = SearchConfig(time_budget_s=None)
    if name == "desk":
        return BenchConfig(
            n_scms=30,
            sizes=(1000,),
            setup_ids=(0, 11, 15, 21, 25),
            seed=seed,
            search=search,
            jobs=jobs,
        )
    if name == "paper":
        return BenchConfig(seed=seed, search=search, jobs=jobs)
    raise ValueError(f"unknown profile {name!r}; use 'desk' or 'paper'")


@dataclass(frozen=True)
class CellResult:
    scm_id: int
    setup_id: int
    size: int | str
    method: str
    scores: FeatureScoreTable | None
    predictions: dict[Feature, bool] | None
    accuracy: float | None
    runtime_s: float
    certified: bool
    n_failed_features: int
    error: str | None = None


@dataclass(frozen=True)
class BenchResult:
    config: BenchConfig
    truths: list[DirectedMixedGraph]
    cells: list[CellResult]
    auc_rows: list[tuple[int, int | str, str, float | None]]
    weak_baseline: float


def _size_code(size) -> int:
    return -1 if size == INFINITE else int(size)


def _cell_datasets(
    scm: LinearScm, setup: Sequence[Experiment], size, seed_key: tuple
) -> list[Dataset]:
    if size == INFINITE:
        return [exact_dataset(scm, e) for e in setup]
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    return [sample_data(scm, e, int(size), rng) for e in setup]


def _run_cell(args) -> CellResult:
    (cfg, scm_dict, scm_id, setup_id, size, method) = args
    scm = LinearScm.from_dict(scm_dict)
    setup = experiment_setup(setup_id, cfg.n_nodes)
    truth = graph_of(scm)
    start = time.perf_counter()
    try:
        datasets = _cell_datasets(
            scm, setup, size, (cfg.seed, 2, scm_id, setup_id, _size_code(size))
        )
        method_rng = np.random.default_rng(
            np.random.SeedSequence(
                (cfg.seed, 3, scm_id, setup_id, _size_code(size), METHODS.index(method))
            )
        )
        certified = True
        if method in ("llc_nf", "llc_f"):
            llc_cfg = replace(cfg.llc, use_faithfulness=(method == "llc_f"))
            table = llc_discover(datasets, setup, llc_cfg, rng=method_rng)
            predictions = table.threshold(llc_cfg.z_threshold)
        else:
            mode = D_SEP if method == "asp_d" else SIGMA_SEP
            search_cfg = replace(cfg.search, mode=mode)
            result = asp_discover_full(
                datasets,
                setup,
                search_cfg,
                truth=scm if size == INFINITE else None,
                rng=method_rng,
            )
            table = result.table
            certified = result.certified
            predictions = ensemble_predict(table, search_cfg.t_asp)
        acc = accuracy(predictions, truth)
        runtime = time.perf_counter() - start
        return CellResult(
            scm_id=scm_id,
            setup_id=setup_id,
            size=size,
            method=method,
            scores=table,
            predictions=predictions,
            accuracy=acc,
            runtime_s=runtime,
            certified=certified,
            n_failed_features=0,
        )
    except Exception as exc:  # noqa: BLE001 - a failed cell must not kill the run
        runtime = time.perf_counter() - start
        return CellResult(
            scm_id=scm_id,
            setup_id=setup_id,
            size=size,
            method=method,
            scores=None,
            predictions=None,
            accuracy=None,
            runtime_s=runtime,
            certified=False,
            n_failed_features=len(feature_space(cfg.n_nodes)),
            error=f"{type(exc).__name__}: {exc}",
        )


def sample_cohort(cfg: BenchConfig) -> list[LinearScm]:
    """The shared model cohort: one draw, reused by every cell."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1)))
    return [sample_random_scm(cfg.sampler, rng) for _ in range(cfg.n_scms)]


def run_benchmark(cfg: BenchConfig) -> BenchResult:
    """Run the full grid and pool the AUC per (setup, size, method).

    Cell failures are recorded in their CellResult and excluded from
    aggregate numbers; the run continues.
    """
    scms = sample_cohort(cfg)
    truths = [graph_of(s) for s in scms]
    specs = [
        (cfg, scm.to_dict(), scm_id, setup_id, size, method)
        for scm_id, scm in enumerate(scms)
        for setup_id in cfg.setup_ids
        for size in cfg.sizes
        for method in cfg.methods
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            cells = list(pool.map(_run_cell, specs, chunksize=1))
    else:
        cells = [_run_cell(s) for s in specs]
    cells.sort(key=lambda c: (c.scm_id, c.setup_id, _size_code(c.size), c.method))
    return BenchResult(
        config=cfg,
        truths=truths,
        cells=cells,
        auc_rows=pool_auc(cfg, truths, cells),
        weak_baseline=weak_baseline(truths),
    )


def pool_auc(
    cfg: BenchConfig,
    truths: Sequence[DirectedMixedGraph],
    cells: Sequence[CellResult],
) -> list[tuple[int, int | str, str, float | None]]:
    """AUC per (setup, size, method) over the pooled scores of every
    model in the cohort; None where undefined or empty."""
    auc_rows: list[tuple[int, int | str, str, float | None]] = []
    for setup_id in cfg.setup_ids:
        for size in cfg.sizes:
            for method in cfg.methods:
                pooled_scores: list[float] = []
                pooled_labels: list[bool] = []
                for c in cells:
                    if (
                        c.setup_id == setup_id
                        and c.size == size
                        and c.method == method
                        and c.scores is not None
                    ):
                        labels = truth_features(truths[c.scm_id])
                        for f in feature_space(cfg.n_nodes):
                            pooled_scores.append(c.scores.score(f))
                            pooled_labels.append(labels[f])
                try:
                    value = auc_roc(pooled_scores, pooled_labels) if pooled_scores else None
                except MetricError:
                    value = None
                auc_rows.append((setup_id, size, method, value))
    return auc_rows


# ---------------------------------------------------------------------------
# report emission


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def _group_of(setup_id: int) -> str:
    return "0" if setup_id == 0 else f"{setup_id // 10}x"


def emit_report(result: BenchResult, out_dir: str | Path) -> list[Path]:
    """Write results.csv, scores.csv, auc.csv, summary.json and
    plotdata/*.csv (plus a timings.log that is not byte-reproducible)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def write_csv(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        path.write_text(buf.getvalue())
        written.append(path)

    write_csv(
        out / "results.csv",
        ["scm_id", "setup_id", "size", "method", "accuracy", "certified", "n_failed_features"],
        (
            (c.scm_id, c.setup_id, c.size, c.method, c.accuracy, int(c.certified), c.n_failed_features)
            for c in result.cells
        ),
    )

    n = result.config.n_nodes
    feats = feature_space(n)

    def score_rows():
        for c in result.cells:
            if c.scores is None:
                continue
            labels = truth_features(result.truths[c.scm_id])
            for f in feats:
                yield (
                    c.scm_id,
                    c.setup_id,
                    c.size,
                    c.method,
                    f.kind,
                    f.a,
                    f.b,
                    c.scores.score(f),
                    int(labels[f]),
                )

    write_csv(
        out / "scores.csv",
        ["scm_id", "setup_id", "size", "method", "feature_type", "from", "to", "score", "truth"],
        score_rows(),
    )

    write_csv(
        out / "auc.csv",
        ["setup_id", "size", "method", "auc"],
        result.auc_rows,
    )

    # summary: mean +- std accuracy per setup group, size and method
    summary: dict = {
        "weak_baseline": round(result.weak_baseline, 10),
        "n_scms": result.config.n_scms,
        "groups": {},
    }
    for c in result.cells:
        group = _group_of(c.setup_id)
        key_size = str(c.size)
        g = summary["groups"].setdefault(group, {}).setdefault(key_size, {}).setdefault(
            c.method, {"accuracies": [], "n_failed": 0}
        )
        if c.accuracy is None:
            g["n_failed"] += 1
        else:
            g["accuracies"].append(c.accuracy)
    for group in summary["groups"].values():
        for size_block in group.values():
            for method_block in size_block.values():
                accs = method_block.pop("accuracies")
                method_block["n_cells"] = len(accs) + method_block["n_failed"]
                method_block["mean_accuracy"] = (
                    round(float(np.mean(accs)), 10) if accs else None
                )
                method_block["std_accuracy"] = (
                    round(float(np.std(accs)), 10) if accs else None
                )
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(summary_path)

    # plot data, one file per size and metric, mirroring the figures
    plot_dir = out / "plotdata"
    plot_dir.mkdir(exist_ok=True)
    for size in result.config.sizes:
        acc_rows = []
        for setup_id in result.config.setup_ids:
            for method in result.config.methods:
                accs = [
                    c.accuracy
                    for c in result.cells
                    if c.setup_id == setup_id
                    and c.size == size
                    and c.method == method
                    and c.accuracy is not None
                ]
                acc_rows.append(
                    (
                        setup_id,
                        method,
                        float(np.mean(accs)) if accs else None,
                        float(np.std(accs)) if accs else None,
                        len(accs),
                    )
                )
        write_csv(
            plot_dir / f"accuracy_{size}.csv",
            ["setup_id", "method", "mean", "std", "n"],
            acc_rows,
        )
        write_csv(
            plot_dir / f"auc_{size}.csv",
            ["setup_id", "method", "auc"],
            ((sid, m, v) for sid, sz, m, v in result.auc_rows if sz == size),
        )

    timing_lines = [
        f"{c.scm_id}\t{c.setup_id}\t{c.size}\t{c.method}\t{c.runtime_s:.3f}"
        + (f"\t{c.error}" if c.error else "")
        for c in result.cells
    ]
    (out / "timings.log").write_text("\n".join(timing_lines) + "\n")
    return written
