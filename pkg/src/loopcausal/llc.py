"""Total-effect based estimation of linear cyclic models.

Interventional covariances yield total causal effects; each experiment
contributes linear identities tying those totals to the direct-effect
matrix.  Stacking the identities over all experiments gives a linear
system that a penalized least-squares solve turns into an estimate of
B, after which the noise covariance follows by plain algebra.  The
faithfulness variant adds zero-equations harvested from conditional
independence tests, and confidence scores come from bootstrap z-scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .citest import (
    DegenerateCovarianceError,
    fisher_z_p_value,
    partial_correlations_given,
)
from .features import BIDIR, DIR, Feature, FeatureScoreTable, feature_space
from .scm import Dataset, Experiment

EXACT_ZERO_TOL = 1e-9      # zero threshold for exact-covariance CI checks
INFINITE_SCORE = 1e6
INFINITE_SUPPORT_TOL = 1e-7
Z_SCORE_CAP = 1e6
STD_FLOOR = 1e-12


class SolverError(RuntimeError):
    """Penalized solve failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class CovarianceConditionError(RuntimeError):
    """Some pair is never jointly unintervened, so sigma_e is not
    identifiable from the given experiments."""


@dataclass(frozen=True)
class TotalEffects:
    """Total causal effects t(x_i ~> x_u || j) of one experiment, keyed
    by (i, u) with i intervened and u not."""

    experiment: Experiment
    effects: dict[tuple[int, int], float]

    def __post_init__(self):
        j = set(self.experiment.j)
        for i, u in self.effects:
            if i not in j or u in j:
                raise ValueError(f"effect key ({i}, {u}) violates the partition")


@dataclass(frozen=True)
class LlcConfig:
    penalty: str = "l1"
    lam: float = 0.05
    alpha_llc: float = 0.05
    use_faithfulness: bool = False
    bootstrap_reps: int = 100
    z_threshold: float = 5.0
    max_cond: int | None = None

    def __post_init__(self):
        if self.penalty not in ("l1", "l2"):
            raise ValueError("penalty must be 'l1' or 'l2'")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.bootstrap_reps < 2:
            raise ValueError("bootstrap needs at least two repetitions")


def column_index(n: int, u: int, i: int) -> int:
    """Column of coefficient b[u, i] in the stacked unknown vector
    (rows of B concatenated, diagonal skipped)."""
    if u == i:
        raise ValueError("diagonal coefficients are not unknowns")
    return u * (n - 1) + (i if i < u else i - 1)


def unstack_coefficients(n: int, b_vec: np.ndarray) -> np.ndarray:
    b = np.zeros((n, n))
    for u in range(n):
        for i in range(n):
            if i != u:
                b[u, i] = b_vec[column_index(n, u, i)]
    return b


@dataclass(frozen=True)
class LlcSystem:
    """The stacked linear system t = T b plus row bookkeeping."""

    n: int
    t_matrix: np.ndarray
    t_vector: np.ndarray
    row_provenance: tuple

    @property
    def n_rows(self) -> int:
        return self.t_matrix.shape[0]


def estimate_total_effects(ds: Dataset) -> TotalEffects:
    """Read total effects off the experiment's covariance: the covariance
    of an intervened coordinate with any free coordinate, normalized by
    the intervened variance."""
    cov = ds.covariance()
    e = ds.experiment
    effects: dict[tuple[int, int], float] = {}
    for i in e.j:
        var = cov[i, i]
        if var <= 0:
            raise ValueError(f"zero variance at intervened coordinate {i}")
        for u in e.u:
            effects[(i, u)] = float(cov[u, i] / var)
    return TotalEffects(experiment=e, effects=effects)


def assemble_system(
    effects: Sequence[TotalEffects], setup: Sequence[Experiment]
) -> LlcSystem:
    """One row per (experiment, intervened i, free u):

        t(i ~> u) = b[u, i] + sum_{j free, j != u} t(i ~> j) b[u, j]
    """
    if len(effects) != len(setup):
        raise ValueError("effects must align with the setup")
    n = setup[0].n
    n_cols = n * (n - 1)
    rows: list[np.ndarray] = []
    targets: list[float] = []
    provenance: list[tuple] = []
    for k, (te, e) in enumerate(zip(effects, setup)):
        if te.experiment.j != e.j:
            raise ValueError(f"effects at position {k} belong to a different experiment")
        for i in e.j:
            for u in e.u:
                row = np.zeros(n_cols)
                row[column_index(n, u, i)] = 1.0
                for j in e.u:
                    if j != u:
                        row[column_index(n, u, j)] = te.effects[(i, j)]
                rows.append(row)
                targets.append(te.effects[(i, u)])
                provenance.append(("effect", k, i, u))
    t_matrix = np.array(rows) if rows else np.zeros((0, n_cols))
    return LlcSystem(
        n=n,
        t_matrix=t_matrix,
        t_vector=np.array(targets),
        row_provenance=tuple(provenance),
    )


def pair_condition(setup: Sequence[Experiment]) -> tuple[bool, list[tuple[int, int]]]:
    """True iff every ordered pair (i, j) has an experiment intervening
    on i while leaving j free; also returns the uncovered pairs."""
    n = setup[0].n
    covered = set()
    for e in setup:
        for i in e.j:
            for j in e.u:
                covered.add((i, j))
    missing = [
        (i, j) for i in range(n) for j in range(n) if i != j and (i, j) not in covered
    ]
    return (not missing, missing)


def covariance_condition(setup: Sequence[Experiment]) -> bool:
    """True iff every unordered pair is jointly unintervened somewhere
    (immediate whenever the null experiment is present)."""
    n = setup[0].n
    for i in range(n):
        for j in range(i, n):
            if not any(i in set(e.u) and j in set(e.u) for e in setup):
                return False
    return True


def _soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def solve_penalized(
    sys: LlcSystem,
    penalty: str = "l1",
    lam: float = 0.05,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Minimize ||T b - t||^2 + lam * pen(b) and reshape b into a
    zero-diagonal coefficient matrix.

    lam = 0 falls back to a least-squares solve (minimum norm when T is
    rank deficient); L2 uses the regularized normal equations; L1 runs
    FISTA to a fixed-point tolerance.
    """
    n = sys.n
    t_mat, t_vec = sys.t_matrix, sys.t_vector
    n_cols = n * (n - 1)
    if sys.n_rows == 0:
        return np.zeros((n, n))
    if lam == 0:
        b_vec = np.linalg.lstsq(t_mat, t_vec, rcond=None)[0]
        return unstack_coefficients(n, b_vec)
    if penalty == "l2":
        gram = t_mat.T @ t_mat + lam * np.eye(n_cols)
        b_vec = np.linalg.solve(gram, t_mat.T @ t_vec)
        return unstack_coefficients(n, b_vec)

    # L1 via FISTA
    lip = 2.0 * np.linalg.norm(t_mat, 2) ** 2
    if lip == 0:
        return np.zeros((n, n))
    step = 1.0 / lip
    b = np.zeros(n_cols)
    y = b.copy()
    momentum = 1.0
    for _ in range(max_iter):
        grad = 2.0 * (t_mat.T @ (t_mat @ y - t_vec))
        b_next = _soft_threshold(y - step * grad, step * lam)
        momentum_next = (1.0 + math.sqrt(1.0 + 4.0 * momentum**2)) / 2.0
        y = b_next + ((momentum - 1.0) / momentum_next) * (b_next - b)
        delta = np.max(np.abs(b_next - b))
        b, momentum = b_next, momentum_next
        if delta <= tol:
            return unstack_coefficients(n, b)
    residual = float(np.linalg.norm(t_mat @ b - t_vec))
    raise SolverError(
        f"L1 solve did not converge in {max_iter} iterations", residual=residual
    )


def estimate_noise_covariance(
    b_hat: np.ndarray,
    datasets: Sequence[Dataset],
    setup: Sequence[Experiment],
) -> np.ndarray:
    """Recover sigma_e entrywise: average, over all experiments leaving
    both coordinates free, of the corresponding entry of
    (I - U B) C (I - U B)^T."""
    n = b_hat.shape[0]
    sums = np.zeros((n, n))
    counts = np.zeros((n, n))
    for ds, e in zip(datasets, setup):
        a = np.eye(n) - e.u_diag() @ b_hat
        m = a @ ds.covariance() @ a.T
        u_mask = np.zeros(n, dtype=bool)
        u_mask[list(e.u)] = True
        both_free = np.outer(u_mask, u_mask)
        sums[both_free] += m[both_free]
        counts[both_free] += 1
    if np.any(counts == 0):
        i, j = np.argwhere(counts == 0)[0]
        raise CovarianceConditionError(
            f"pair ({i}, {j}) is never jointly unintervened"
        )
    sigma = sums / counts
    return (sigma + sigma.T) / 2.0


# ---------------------------------------------------------------------------
# faithfulness augmentation


@dataclass(frozen=True)
class FaithfulnessConstraints:
    """Zero-coefficient rows (keyed by the B entry they zero) and the
    sigma_e entries marked as zero, each with the rule that fired."""

    zero_coefficients: dict[tuple[int, int], tuple]
    sigma_zeros: dict[tuple[int, int], tuple]


def _independence_scan(ds: Dataset, alpha: float, max_cond: int) -> dict:
    """Verdicts independent/dependent for every (i, j, s) of one dataset."""
    cov = ds.covariance()
    n = ds.experiment.n
    m = None if ds.is_exact else ds.samples.shape[0]
    verdicts: dict[tuple[int, int, tuple[int, ...]], bool] = {}
    for size in range(min(max_cond, n - 2) + 1):
        for s in combinations(range(n), size):
            try:
                rest, r = partial_correlations_given(cov, list(s))
            except DegenerateCovarianceError:
                continue
            pos = {v: a for a, v in enumerate(rest)}
            for i, j in combinations(rest, 2):
                r_ij = float(r[pos[i], pos[j]])
                if m is None:
                    independent = abs(r_ij) <= EXACT_ZERO_TOL
                else:
                    independent = fisher_z_p_value(r_ij, m, size) > alpha
                verdicts[(i, j, s)] = independent
    return verdicts


def faithfulness_constraints(
    datasets: Sequence[Dataset],
    setup: Sequence[Experiment],
    alpha_llc: float,
    max_cond: int | None = None,
) -> FaithfulnessConstraints:
    """Harvest zero-structure from conditional independences.

    Four rules per experiment (J intervened, U free):
      1. i, j in U and i _||_ j given some S: b[i,j] = b[j,i] = 0 and
         sigma_e[i,j] = 0.
      2. i in J, u in U and i _||_ u given some S: b[u,i] = 0.
      3. i in J, u, v in U with t(i~>u) != 0 and t(i~>v) = 0: b[v,u] = 0.
      4. i in J, u, v in U with t(i~>u) != 0 and i _||_ v given {u}:
         b[u,v] = 0 and sigma_e[u,v] = 0.

    Whether a total effect is zero is decided by the independence test
    of the covariance entry it is read from.
    """
    n = setup[0].n
    if max_cond is None:
        max_cond = n - 2
    zero_coeff: dict[tuple[int, int], tuple] = {}
    sigma_zero: dict[tuple[int, int], tuple] = {}

    def mark_b(u: int, i: int, tag: tuple):
        zero_coeff.setdefault((u, i), tag)

    def mark_sigma(i: int, j: int, tag: tuple):
        sigma_zero.setdefault((min(i, j), max(i, j)), tag)

    for k, (ds, e) in enumerate(zip(datasets, setup)):
        verdicts = _independence_scan(ds, alpha_llc, max_cond)

        def independent_somewhere(a: int, b: int) -> bool:
            lo, hi = min(a, b), max(a, b)
            return any(
                ind
                for (i, j, s), ind in verdicts.items()
                if i == lo and j == hi
            )

        def independent_given(a: int, b: int, s: tuple[int, ...]) -> bool:
            lo, hi = min(a, b), max(a, b)
            return verdicts.get((lo, hi, tuple(sorted(s))), False)

        def effect_is_zero(i: int, u: int) -> bool:
            # t(i ~> u) = cov[u, i] / cov[i, i]: zero iff the marginal
            # dependence of (i, u) is absent.
            return independent_given(i, u, ())

        j_set, u_set = list(e.j), list(e.u)
        # rule 1
        for a_idx in range(len(u_set)):
            for b_idx in range(a_idx + 1, len(u_set)):
                i, j = u_set[a_idx], u_set[b_idx]
                if independent_somewhere(i, j):
                    mark_b(i, j, ("faith1", k, i, j))
                    mark_b(j, i, ("faith1", k, i, j))
                    mark_sigma(i, j, ("faith1", k, i, j))
        # rule 2
        for i in j_set:
            for u in u_set:
                if independent_somewhere(i, u):
                    mark_b(u, i, ("faith2", k, i, u))
        # rules 3 and 4
        for i in j_set:
            nonzero_targets = [u for u in u_set if not effect_is_zero(i, u)]
            zero_targets = [v for v in u_set if effect_is_zero(i, v)]
            for u in nonzero_targets:
                for v in zero_targets:
                    mark_b(v, u, ("faith3", k, i, u, v))
                for v in u_set:
                    if v != u and independent_given(i, v, (u,)):
                        mark_b(u, v, ("faith4", k, i, u, v))
                        mark_sigma(u, v, ("faith4", k, i, u, v))
    return FaithfulnessConstraints(zero_coefficients=zero_coeff, sigma_zeros=sigma_zero)


def extend_system(sys: LlcSystem, faith: FaithfulnessConstraints) -> LlcSystem:
    """Append one unit row with target zero per zeroed coefficient."""
    if not faith.zero_coefficients:
        return sys
    n = sys.n
    rows = [sys.t_matrix] if sys.n_rows else []
    extra = np.zeros((len(faith.zero_coefficients), n * (n - 1)))
    provenance = list(sys.row_provenance)
    for r, ((u, i), tag) in enumerate(sorted(faith.zero_coefficients.items())):
        extra[r, column_index(n, u, i)] = 1.0
        provenance.append(tag)
    rows.append(extra)
    return LlcSystem(
        n=n,
        t_matrix=np.vstack(rows),
        t_vector=np.concatenate([sys.t_vector, np.zeros(len(faith.zero_coefficients))]),
        row_provenance=tuple(provenance),
    )


# ---------------------------------------------------------------------------
# the full discoverer


def _fit_once(
    datasets: Sequence[Dataset], setup: Sequence[Experiment], cfg: LlcConfig
) -> tuple[np.ndarray, np.ndarray]:
    effects = [estimate_total_effects(ds) for ds in datasets]
    system = assemble_system(effects, setup)
    sigma_zeros: dict = {}
    if cfg.use_faithfulness:
        faith = faithfulness_constraints(datasets, setup, cfg.alpha_llc, cfg.max_cond)
        system = extend_system(system, faith)
        sigma_zeros = faith.sigma_zeros
    b_hat = solve_penalized(system, cfg.penalty, cfg.lam)
    sigma_hat = estimate_noise_covariance(b_hat, datasets, setup)
    for (i, j) in sigma_zeros:
        sigma_hat[i, j] = sigma_hat[j, i] = 0.0
    return b_hat, sigma_hat


def _feature_value(f: Feature, b_hat: np.ndarray, sigma_hat: np.ndarray) -> float:
    if f.kind == DIR:
        return float(b_hat[f.b, f.a])  # edge a -> b is the coefficient b[b, a]
    return float(sigma_hat[f.a, f.b])


def llc_discover(
    datasets: Sequence[Dataset],
    setup: Sequence[Experiment],
    cfg: LlcConfig,
    rng: np.random.Generator | None = None,
) -> FeatureScoreTable:
    """Score every feature by bootstrap z-score |mean| / std.

    Rows are resampled within each experiment's dataset, independently
    across experiments; each resample runs the entire estimation
    pipeline.  With exact covariances the bootstrap is skipped and the
    score is 1e6 for every coefficient above the support tolerance.
    """
    if not any(e.is_null for e in setup):
        raise ValueError("the setup must include the null experiment")
    n = setup[0].n
    method = "llc_f" if cfg.use_faithfulness else "llc_nf"
    feats = feature_space(n)

    exact_flags = [ds.is_exact for ds in datasets]
    if any(exact_flags) and not all(exact_flags):
        raise ValueError("datasets mix exact and finite modes")

    if all(exact_flags):
        b_hat, sigma_hat = _fit_once(datasets, setup, cfg)
        scores = {
            f: (
                INFINITE_SCORE
                if abs(_feature_value(f, b_hat, sigma_hat)) > INFINITE_SUPPORT_TOL
                else 0.0
            )
            for f in feats
        }
        return FeatureScoreTable(n=n, method=method, scores=scores)

    if rng is None:
        rng = np.random.default_rng(0)
    values = np.zeros((cfg.bootstrap_reps, len(feats)))
    for rep in range(cfg.bootstrap_reps):
        resampled = []
        for ds in datasets:
            m = ds.samples.shape[0]
            idx = rng.integers(0, m, size=m)
            resampled.append(Dataset(experiment=ds.experiment, samples=ds.samples[idx]))
        try:
            b_hat, sigma_hat = _fit_once(resampled, setup, cfg)
        except SolverError as exc:
            raise SolverError(f"resample {rep}: {exc}", exc.residual) from exc
        values[rep] = [_feature_value(f, b_hat, sigma_hat) for f in feats]

    means = np.abs(values.mean(axis=0))
    stds = np.maximum(values.std(axis=0, ddof=1), STD_FLOOR)
    z = np.minimum(means / stds, Z_SCORE_CAP)
    return FeatureScoreTable(n=n, method=method, scores=dict(zip(feats, z)))
