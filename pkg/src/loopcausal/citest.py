"""Conditional independence tests and weighted constraint generation.

Finite data goes through the Fisher z-transform of partial correlations;
the infinite-data mode instead reads off exact d-separations of the
generating model, yielding a contradiction-free constraint system with
unit weights.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .graphs import DirectedMixedGraph, SeparationQuery, d_separated, intervene_graph
from .scm import Dataset, Experiment, LinearScm, graph_of

log = logging.getLogger(__name__)

INDEPENDENT = "independent"
DEPENDENT = "dependent"

P_FLOOR = 1e-300


class DegenerateCovarianceError(ValueError):
    """The covariance submatrix needed by a test is singular."""


class InsufficientDataError(ValueError):
    """Too few samples for the requested conditioning set."""


@dataclass(frozen=True)
class CiConstraint:
    """A weighted conditional (in)dependence statement bound to the
    experiment (by position in the setup) it was observed under."""

    experiment_index: int
    i: int
    j: int
    s: tuple[int, ...]
    kind: str
    weight: float
    p_value: float | None = None

    def __post_init__(self):
        if self.i >= self.j:
            raise ValueError("constraint pair must be stored with i < j")
        if self.i in self.s or self.j in self.s:
            raise ValueError("conditioning set overlaps the pair")
        if self.kind not in (INDEPENDENT, DEPENDENT):
            raise ValueError(f"bad constraint kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("weights are nonnegative")
        object.__setattr__(self, "s", tuple(sorted(self.s)))

    @property
    def key(self) -> tuple:
        # kind is part of the key: a contradictory pair (same query, both
        # verdicts) is a legal, meaningful input to the loss minimizer
        return (self.experiment_index, self.i, self.j, self.s, self.kind)


@dataclass(frozen=True)
class ConstraintSet:
    constraints: tuple[CiConstraint, ...]
    alpha: float

    def __init__(self, constraints: Iterable[CiConstraint], alpha: float):
        constraints = tuple(constraints)
        keys = [c.key for c in constraints]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate constraint keys")
        object.__setattr__(self, "constraints", constraints)
        object.__setattr__(self, "alpha", float(alpha))

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)


def partial_correlation(cov: np.ndarray, i: int, j: int, s: Sequence[int] = ()) -> float:
    """Partial correlation of i and j given s, from a covariance matrix.

    Uses the precision matrix of the submatrix on {i, j} union s:
    r = -P_ij / sqrt(P_ii P_jj).
    """
    idx = [i, j] + [v for v in s]
    if len(set(idx)) != len(idx):
        raise ValueError("i, j, s must be distinct")
    sub = np.asarray(cov)[np.ix_(idx, idx)]
    eigs = np.linalg.eigvalsh(sub)
    if eigs[0] <= 1e-12 * max(1.0, eigs[-1]):
        raise DegenerateCovarianceError(
            f"covariance submatrix on {idx} is singular"
        )
    prec = np.linalg.inv(sub)
    r = -prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1])
    if abs(r) > 1.0 + 1e-12:
        raise DegenerateCovarianceError(f"partial correlation {r} out of range")
    return float(min(1.0, max(-1.0, r)))


def partial_correlations_given(cov: np.ndarray, s: Sequence[int]) -> tuple[list[int], np.ndarray]:
    """Partial correlations of every remaining pair given s, at once.

    Returns (rest, R) where rest lists the nodes outside s and R is the
    correlation matrix of their residual covariance after regressing out
    s (Schur complement).  R[a, b] equals
    partial_correlation(cov, rest[a], rest[b], s).
    """
    cov = np.asarray(cov)
    n = cov.shape[0]
    s = list(s)
    rest = [v for v in range(n) if v not in set(s)]
    if s:
        css = cov[np.ix_(s, s)]
        eigs = np.linalg.eigvalsh(css)
        if eigs[0] <= 1e-12 * max(1.0, eigs[-1]):
            raise DegenerateCovarianceError(f"conditioning block {s} is singular")
        crs = cov[np.ix_(rest, s)]
        resid = cov[np.ix_(rest, rest)] - crs @ np.linalg.solve(css, crs.T)
    else:
        resid = cov[np.ix_(rest, rest)]
    d = np.sqrt(np.diag(resid))
    if np.any(d <= 0):
        raise DegenerateCovarianceError("zero residual variance")
    r = resid / np.outer(d, d)
    return rest, np.clip(r, -1.0, 1.0)


def _residual_correlation(cov: np.ndarray, i: int, j: int, s: Sequence[int]) -> float:
    """Correlation of the residuals of i and j after regressing out s.

    Equals the partial correlation but tolerates a perfectly correlated
    pair (returns +-1) instead of failing on the singular submatrix.
    """
    cov = np.asarray(cov)
    idx = [i, j]
    s = list(s)
    if s:
        css = cov[np.ix_(s, s)]
        eigs = np.linalg.eigvalsh(css)
        if eigs[0] <= 1e-12 * max(1.0, eigs[-1]):
            raise DegenerateCovarianceError(f"conditioning block {s} is singular")
        crs = cov[np.ix_(idx, s)]
        resid = cov[np.ix_(idx, idx)] - crs @ np.linalg.solve(css, crs.T)
    else:
        resid = cov[np.ix_(idx, idx)]
    scale = max(resid[0, 0], resid[1, 1], 1.0)
    if resid[0, 0] <= 1e-14 * scale or resid[1, 1] <= 1e-14 * scale:
        raise DegenerateCovarianceError(
            f"zero residual variance for ({i}, {j}) given {s}"
        )
    r = resid[0, 1] / math.sqrt(resid[0, 0] * resid[1, 1])
    return float(min(1.0, max(-1.0, r)))


def fisher_z_p_value(r: float, m: int, cond_size: int) -> float:
    """Two-sided p-value of the Fisher z test at sample size m."""
    dof = m - cond_size - 3
    if dof <= 0:
        raise InsufficientDataError(
            f"need more than {cond_size + 3} samples, got {m}"
        )
    if abs(r) >= 1.0 - 1e-15:
        return 0.0
    z = 0.5 * math.log((1.0 + r) / (1.0 - r))
    stat = math.sqrt(dof) * abs(z)
    return float(2.0 * norm.sf(stat))


def ci_test(
    data: Dataset, i: int, j: int, s: Sequence[int], alpha: float
) -> tuple[float, bool]:
    """Test i _||_ j given s on a finite dataset.

    Returns (p_value, is_independent) with independence declared when
    p > alpha.
    """
    if data.is_exact:
        raise ValueError("ci_test needs finite samples; exact datasets use the oracle path")
    m = data.samples.shape[0]
    if m <= len(s) + 3:
        raise InsufficientDataError(
            f"need more than {len(s) + 3} samples, got {m}"
        )
    r = _residual_correlation(data.covariance(), i, j, s)
    p = fisher_z_p_value(r, m, len(s))
    return p, p > alpha


def constraint_weight(p_value: float, alpha: float) -> float:
    """Constraint weight |log p - log alpha|; p is floored at 1e-300."""
    p = max(float(p_value), P_FLOOR)
    return abs(math.log(p) - math.log(alpha))


def _conditioning_sets(n: int, i: int, j: int, max_cond: int):
    others = [v for v in range(n) if v not in (i, j)]
    for size in range(min(max_cond, len(others)) + 1):
        yield from combinations(others, size)


def enumerate_constraints(
    datasets: Sequence[Dataset], alpha: float, max_cond: int
) -> ConstraintSet:
    """Scan every pair and conditioning set of every dataset with the
    Fisher z test, weighting each verdict by |log p - log alpha|.

    Test failures (degenerate submatrices) skip the affected constraint
    with a logged warning count.
    """
    constraints: list[CiConstraint] = []
    skipped = 0
    for k, ds in enumerate(datasets):
        if ds.is_exact:
            raise ValueError("enumerate_constraints needs finite datasets")
        n = ds.experiment.n
        m = ds.samples.shape[0]
        cov = ds.covariance()
        for s in _subsets_up_to(n, max_cond):
            try:
                rest, r_matrix = partial_correlations_given(cov, list(s))
            except DegenerateCovarianceError:
                skipped += sum(1 for _ in combinations(range(n - len(s)), 2))
                continue
            pos = {v: a for a, v in enumerate(rest)}
            for i, j in combinations(rest, 2):
                try:
                    p = fisher_z_p_value(float(r_matrix[pos[i], pos[j]]), m, len(s))
                except InsufficientDataError:
                    skipped += 1
                    continue
                independent = p > alpha
                constraints.append(
                    CiConstraint(
                        experiment_index=k,
                        i=i,
                        j=j,
                        s=tuple(s),
                        kind=INDEPENDENT if independent else DEPENDENT,
                        weight=constraint_weight(p, alpha),
                        p_value=p,
                    )
                )
    if skipped:
        log.warning("skipped %d constraints due to degenerate tests", skipped)
    return ConstraintSet(constraints, alpha)


def _subsets_up_to(n: int, max_size: int):
    for size in range(min(max_size, n) + 1):
        yield from combinations(range(n), size)


def oracle_constraints(
    scm: LinearScm, setup: Sequence[Experiment], max_cond: int
) -> ConstraintSet:
    """Ground-truth constraints: the d-separation verdicts of the
    manipulated true graph, each carrying weight one."""
    truth = graph_of(scm)
    constraints: list[CiConstraint] = []
    for k, e in enumerate(setup):
        mg = intervene_graph(truth, e.j)
        n = truth.n
        for i, j in combinations(range(n), 2):
            for s in _conditioning_sets(n, i, j, max_cond):
                separated = d_separated(mg, SeparationQuery(i, j, s))
                constraints.append(
                    CiConstraint(
                        experiment_index=k,
                        i=i,
                        j=j,
                        s=s,
                        kind=INDEPENDENT if separated else DEPENDENT,
                        weight=1.0,
                        p_value=None,
                    )
                )
    return ConstraintSet(constraints, alpha=0.0)


# ---------------------------------------------------------------------------
# serialization (JSON lines, one constraint per line)


def save_constraints(cs: ConstraintSet, path: str | Path) -> None:
    lines = [json.dumps({"alpha": cs.alpha, "count": len(cs)})]
    for c in cs:
        lines.append(
            json.dumps(
                {
                    "experiment": c.experiment_index,
                    "i": c.i,
                    "j": c.j,
                    "s": list(c.s),
                    "kind": c.kind,
                    "weight": c.weight,
                    "p": c.p_value,
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_constraints(path: str | Path) -> ConstraintSet:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    constraints = []
    for line in lines[1:]:
        obj = json.loads(line)
        constraints.append(
            CiConstraint(
                experiment_index=obj["experiment"],
                i=obj["i"],
                j=obj["j"],
                s=tuple(obj["s"]),
                kind=obj["kind"],
                weight=obj["weight"],
                p_value=obj["p"],
            )
        )
    return ConstraintSet(constraints, header["alpha"])
