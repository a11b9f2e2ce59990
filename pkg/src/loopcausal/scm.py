"""Linear structural causal models with cycles and correlated noise.

The model is x = Bx + e with zero-diagonal coefficient matrix B and
noise covariance sigma_e whose off-diagonal entries encode hidden
confounding.  Surgical interventions replace the intervened coordinates
by independent unit-variance noise and sever their incoming mechanisms.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graphs import DirectedMixedGraph

SINGULAR_TOL = 1e-9


class GenerationError(RuntimeError):
    """Rejection sampling exhausted its attempt budget."""


class WeakStabilityError(RuntimeError):
    """I - U B is numerically singular for a requested experiment."""


@dataclass(frozen=True)
class Experiment:
    """One data-gathering condition: the sorted intervened index set j.

    The complement u (the passively observed coordinates) is derived.
    The null experiment has j = ().
    """

    n: int
    j: tuple[int, ...]

    def __init__(self, n: int, j: Iterable[int] = ()):
        j = tuple(sorted(set(int(v) for v in j)))
        if j and not (0 <= j[0] and j[-1] < n):
            raise ValueError(f"intervened indices {j} out of range for n={n}")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "j", j)

    @property
    def u(self) -> tuple[int, ...]:
        return tuple(v for v in range(self.n) if v not in set(self.j))

    @property
    def is_null(self) -> bool:
        return not self.j

    def j_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[list(self.j)] = True
        return m

    def u_diag(self) -> np.ndarray:
        return np.diag((~self.j_mask()).astype(float))

    def j_diag(self) -> np.ndarray:
        return np.diag(self.j_mask().astype(float))


@dataclass(frozen=True)
class LinearScm:
    """Coefficient matrix b and noise covariance sigma_e.

    b[u, i] is the direct effect of x_i on x_u; the diagonal is zero
    because self-loops are excluded.
    """

    b: np.ndarray
    sigma_e: np.ndarray

    def __init__(self, b, sigma_e):
        b = np.array(b, dtype=float)
        sigma_e = np.array(sigma_e, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("b must be square")
        if sigma_e.shape != b.shape:
            raise ValueError("sigma_e must match the shape of b")
        if np.any(np.abs(np.diag(b)) > 0):
            raise ValueError("b must have a zero diagonal (no self-loops)")
        if not np.allclose(sigma_e, sigma_e.T, atol=1e-12):
            raise ValueError("sigma_e must be symmetric")
        eigs = np.linalg.eigvalsh(sigma_e)
        if eigs.min() < -1e-9:
            raise ValueError("sigma_e must be positive semidefinite")
        b.setflags(write=False)
        sigma_e.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma_e", sigma_e)

    @property
    def n(self) -> int:
        return self.b.shape[0]

    def to_dict(self) -> dict:
        return {"b": self.b.tolist(), "sigma_e": self.sigma_e.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "LinearScm":
        return cls(obj["b"], obj["sigma_e"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LinearScm":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Dataset:
    """Measurements for one experiment.

    Exactly one of ``samples`` (an m x n array) and ``exact`` (an n x n
    covariance, the infinite-data stand-in) is set.
    """

    experiment: Experiment
    samples: np.ndarray | None = None
    exact: np.ndarray | None = None

    def __post_init__(self):
        if (self.samples is None) == (self.exact is None):
            raise ValueError("exactly one of samples/exact must be given")
        if self.samples is not None:
            arr = np.array(self.samples, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != self.experiment.n:
                raise ValueError("samples must be m x n")
            arr.setflags(write=False)
            object.__setattr__(self, "samples", arr)
        else:
            arr = np.array(self.exact, dtype=float)
            if arr.shape != (self.experiment.n, self.experiment.n):
                raise ValueError("exact covariance must be n x n")
            if not np.allclose(arr, arr.T, atol=1e-12):
                raise ValueError("exact covariance must be symmetric")
            arr.setflags(write=False)
            object.__setattr__(self, "exact", arr)

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    @property
    def size(self) -> float:
        return float("inf") if self.is_exact else self.samples.shape[0]

    def covariance(self) -> np.ndarray:
        """Sample covariance (ddof=1), or the exact covariance itself."""
        if self.is_exact:
            return self.exact
        if self.samples.shape[0] < 2:
            raise ValueError("need at least two samples for a covariance")
        return np.cov(self.samples, rowvar=False, ddof=1)


@dataclass(frozen=True)
class ScmSamplerConfig:
    n_nodes: int = 5
    n_confounders: int = 2
    max_in_degree: int = 2
    coef_low: float = 0.1
    coef_high: float = 1.1
    confounder_low: float = 0.2
    confounder_high: float = 0.8
    require_cycle: bool = True
    max_attempts: int = 10_000

    def __post_init__(self):
        if not (0 < self.coef_low < self.coef_high):
            raise ValueError("need 0 < coef_low < coef_high")
        if not (0 < self.confounder_low < self.confounder_high):
            raise ValueError("need 0 < confounder_low < confounder_high")
        max_pairs = self.n_nodes * (self.n_nodes - 1) // 2
        if self.n_confounders > max_pairs:
            raise ValueError("more confounders than node pairs")


def graph_of(scm: LinearScm, tol: float = 0.0) -> DirectedMixedGraph:
    """The graph induced by the nonzero pattern of (b, sigma_e)."""
    n = scm.n
    directed = [
        (i, u) for u in range(n) for i in range(n) if i != u and abs(scm.b[u, i]) > tol
    ]
    bidirected = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if abs(scm.sigma_e[i, j]) > tol
    ]
    return DirectedMixedGraph(n, directed, bidirected)


def is_weakly_stable(scm: LinearScm, setup: Sequence[Experiment]) -> bool:
    """Check invertibility of I - U B for the null experiment and every
    experiment in the setup (smallest singular value above 1e-9)."""
    eye = np.eye(scm.n)
    experiments = [Experiment(scm.n, ())] + list(setup)
    for e in experiments:
        a = eye - e.u_diag() @ scm.b
        if np.linalg.svd(a, compute_uv=False)[-1] <= SINGULAR_TOL:
            return False
    return True


def analytic_covariance(scm: LinearScm, e: Experiment) -> np.ndarray:
    """Equilibrium covariance of the (possibly intervened) system.

    Intervened coordinates are independent standard normals, so the
    noise term is U sigma_e U^T + J J^T and the covariance is
    (I - U B)^-1 (U sigma_e U^T + J J^T) (I - U B)^-T.
    """
    n = scm.n
    u_mask = ~e.j_mask()
    a = np.eye(n) - e.u_diag() @ scm.b
    if np.linalg.svd(a, compute_uv=False)[-1] <= SINGULAR_TOL:
        raise WeakStabilityError(
            f"I - U B is singular for intervention {list(e.j)}"
        )
    noise = np.where(np.outer(u_mask, u_mask), scm.sigma_e, 0.0)
    noise[~u_mask, ~u_mask] = 1.0
    inv_a = np.linalg.inv(a)
    cov = inv_a @ noise @ inv_a.T
    return (cov + cov.T) / 2.0


def sample_data(
    scm: LinearScm, e: Experiment, m: int, rng: np.random.Generator
) -> Dataset:
    """Draw m i.i.d. observations of the intervened system."""
    if m < 1:
        raise ValueError("need at least one sample")
    cov = analytic_covariance(scm, e)
    samples = rng.multivariate_normal(np.zeros(scm.n), cov, size=m)
    return Dataset(experiment=e, samples=samples)


def exact_dataset(scm: LinearScm, e: Experiment) -> Dataset:
    """Infinite-data stand-in: the analytic covariance as a Dataset."""
    return Dataset(experiment=e, exact=analytic_covariance(scm, e))


SETUP_IDS = (0, 11, 12, 13, 14, 15, 21, 22, 23, 24, 25, 31, 32, 33, 34, 35, 41, 42, 43, 44, 45)


def experiment_setup(setup_id: int, n_nodes: int = 5) -> list[Experiment]:
    """The intervention lists of the benchmark's experimental setups.

    Setup 0 is purely observational.  Setup ``gc`` (g = intervention
    size 1..4, c = experiment count 1..5) holds the null experiment plus
    c contiguous index windows of width g, wrapping modulo n.
    """
    setup_id = int(setup_id)
    if setup_id not in SETUP_IDS:
        raise ValueError(
            f"unknown setup id {setup_id}; valid ids: {list(SETUP_IDS)}"
        )
    experiments = [Experiment(n_nodes, ())]
    if setup_id == 0:
        return experiments
    size, count = divmod(setup_id, 10)
    for start in range(count):
        window = [(start + k) % n_nodes for k in range(size)]
        experiments.append(Experiment(n_nodes, window))
    return experiments


def all_benchmark_experiments(n_nodes: int = 5) -> list[Experiment]:
    """Union of the experiments over every benchmark setup."""
    seen: dict[tuple[int, ...], Experiment] = {}
    for sid in SETUP_IDS:
        for e in experiment_setup(sid, n_nodes):
            seen.setdefault(e.j, e)
    return list(seen.values())


def sample_random_scm(cfg: ScmSamplerConfig, rng: np.random.Generator) -> LinearScm:
    """Rejection-sample a sparse SCM.

    Each node draws an in-degree uniform on 0..max_in_degree and then a
    uniform parent set of that size; coefficients are uniform on
    +-[coef_low, coef_high].  sigma_e has unit diagonal and exactly
    n_confounders off-diagonal pairs with magnitudes in
    [confounder_low, confounder_high] and random signs.  Draws are
    rejected until the graph has a directed cycle (when required),
    sigma_e is positive definite, and every benchmark experiment leaves
    the system weakly stable.
    """
    n = cfg.n_nodes
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    bench_experiments = all_benchmark_experiments(n)
    for _ in range(cfg.max_attempts):
        b = np.zeros((n, n))
        for node in range(n):
            others = [v for v in range(n) if v != node]
            degree = int(rng.integers(0, cfg.max_in_degree + 1))
            if degree:
                parents = rng.choice(others, size=degree, replace=False)
                mags = rng.uniform(cfg.coef_low, cfg.coef_high, size=degree)
                signs = rng.choice([-1.0, 1.0], size=degree)
                b[node, parents] = signs * mags
        sigma = np.eye(n)
        pick = rng.choice(len(pairs), size=cfg.n_confounders, replace=False)
        for idx in pick:
            i, j = pairs[idx]
            value = rng.choice([-1.0, 1.0]) * rng.uniform(
                cfg.confounder_low, cfg.confounder_high
            )
            sigma[i, j] = sigma[j, i] = value

        if np.linalg.eigvalsh(sigma).min() <= SINGULAR_TOL:
            continue
        scm = LinearScm(b, sigma)
        if cfg.require_cycle:
            from .graphs import has_directed_cycle

            if not has_directed_cycle(graph_of(scm)):
                continue
        if not is_weakly_stable(scm, bench_experiments):
            continue
        return scm
    raise GenerationError(
        f"no admissible SCM found in {cfg.max_attempts} attempts"
    )


# ---------------------------------------------------------------------------
# file formats


def save_scm(scm: LinearScm, path: str | Path) -> None:
    Path(path).write_text(scm.to_json() + "\n")


def load_scm(path: str | Path) -> LinearScm:
    return LinearScm.from_json(Path(path).read_text())


def _format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(ds: Dataset, base: str | Path) -> tuple[Path, Path]:
    """Write <base>.csv (samples, or the covariance in infinite mode)
    plus the <base>.json sidecar describing the experiment."""
    base = Path(base)
    csv_path = base.with_suffix(".csv")
    meta_path = base.with_suffix(".json")
    matrix = ds.exact if ds.is_exact else ds.samples
    header = [f"x{k}" for k in range(ds.experiment.n)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in matrix:
        writer.writerow([_format_float(v) for v in row])
    csv_path.write_text(buf.getvalue())
    meta = {
        "intervened": list(ds.experiment.j),
        "size": "inf" if ds.is_exact else int(ds.samples.shape[0]),
    }
    meta_path.write_text(json.dumps(meta) + "\n")
    return csv_path, meta_path


def read_dataset(base: str | Path, n_nodes: int | None = None) -> Dataset:
    base = Path(base)
    meta = json.loads(base.with_suffix(".json").read_text())
    text = base.with_suffix(".csv").read_text()
    rows = list(csv.reader(io.StringIO(text)))
    header, data = rows[0], rows[1:]
    n = len(header) if n_nodes is None else n_nodes
    matrix = np.array([[float(v) for v in row] for row in data])
    experiment = Experiment(n, meta["intervened"])
    if meta["size"] == "inf":
        return Dataset(experiment=experiment, exact=matrix)
    return Dataset(experiment=experiment, samples=matrix)
