"""The binary feature space of causal hypotheses.

A feature is one directed edge or one bidirected edge; discoverers emit
a real-valued confidence score per feature and the benchmark compares
thresholded scores against the generating graph.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .graphs import DirectedMixedGraph

DIR = "dir"
BIDIR = "bidir"


@dataclass(frozen=True, order=True)
class Feature:
    kind: str
    a: int
    b: int

    def __post_init__(self):
        if self.kind not in (DIR, BIDIR):
            raise ValueError(f"bad feature kind {self.kind!r}")
        if self.a == self.b:
            raise ValueError("feature endpoints must differ")
        if self.kind == BIDIR and self.a > self.b:
            raise ValueError("bidirected features are stored with a < b")

    @staticmethod
    def directed(a: int, b: int) -> "Feature":
        return Feature(DIR, a, b)

    @staticmethod
    def bidirected(a: int, b: int) -> "Feature":
        return Feature(BIDIR, min(a, b), max(a, b))


def feature_space(n: int) -> list[Feature]:
    """Canonical feature order: directed pairs lexicographically, then
    bidirected pairs lexicographically.  n(n-1) + n(n-1)/2 features."""
    feats = [Feature(DIR, a, b) for a in range(n) for b in range(n) if a != b]
    feats += [Feature(BIDIR, a, b) for a in range(n) for b in range(a + 1, n)]
    return feats


def feature_index(n: int) -> dict[Feature, int]:
    return {f: k for k, f in enumerate(feature_space(n))}


def graph_from_features(n: int, present: Iterable[Feature]) -> DirectedMixedGraph:
    directed = []
    bidirected = []
    for f in present:
        if f.kind == DIR:
            directed.append((f.a, f.b))
        else:
            bidirected.append((f.a, f.b))
    return DirectedMixedGraph(n, directed, bidirected)


def truth_features(g: DirectedMixedGraph) -> dict[Feature, bool]:
    """Ground-truth labels: which features the graph contains."""
    labels = {f: False for f in feature_space(g.n)}
    for a, b in g.directed:
        labels[Feature(DIR, a, b)] = True
    for a, b in g.bidirected:
        labels[Feature(BIDIR, a, b)] = True
    return labels


@dataclass(frozen=True)
class FeatureScoreTable:
    """One confidence score per feature; higher favors presence."""

    n: int
    method: str
    scores: Mapping[Feature, float]

    def __post_init__(self):
        expected = set(feature_space(self.n))
        got = set(self.scores)
        if got != expected:
            missing = sorted(expected - got)[:3]
            extra = sorted(got - expected)[:3]
            raise ValueError(
                f"score table must cover the feature space exactly "
                f"(missing {missing}, extra {extra})"
            )
        object.__setattr__(self, "scores", dict(self.scores))

    def score(self, f: Feature) -> float:
        return self.scores[f]

    def threshold(self, t: float) -> dict[Feature, bool]:
        """Binary predictions: present iff score strictly exceeds t."""
        return {f: s > t for f, s in self.scores.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["feature_type", "from", "to", "score", "method"])
        for f in feature_space(self.n):
            writer.writerow(
                [f.kind, f.a, f.b, format(self.scores[f], ".10g"), self.method]
            )
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, n: int | None = None) -> "FeatureScoreTable":
        rows = list(csv.reader(io.StringIO(text)))
        body = rows[1:]
        if n is None:
            n = 1 + max(max(int(r[1]), int(r[2])) for r in body)
        scores = {}
        method = body[0][4] if body else "unknown"
        for kind, a, b, score, method in body:
            scores[Feature(kind, int(a), int(b))] = float(score)
        return cls(n=n, method=method, scores=scores)

    @classmethod
    def load(cls, path: str | Path) -> "FeatureScoreTable":
        return cls.from_csv(Path(path).read_text())
