"""Expert fuzzy evaluation: linguistic ratings to crisp metric scores and loss weights.

Pipeline: linguistic term -> trapezoidal fuzzy number; expert profile ->
weight; per metric, similarity-aggregation (agreement, relative agreement,
consensus coefficient) -> aggregate trapezoid -> centroid score. Scores of
the DTW, TDI and RMSE metrics become the shape/time/space loss weights.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError

DEFAULT_BETA = 0.5
NEUTRAL_SCORE = 0.5
LOSS_INDEX_METRICS = {"shape": "DTW", "time": "TDI", "space": "RMSE"}


@dataclass(frozen=True)
class TrapezoidalFuzzyNumber:
    a1: float
    a2: float
    a3: float
    a4: float

    def __post_init__(self):
        if not self.a1 <= self.a2 <= self.a3 <= self.a4:
            raise ConfigurationError(f"trapezoid must be ordered, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.a1, self.a2, self.a3, self.a4)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())


TERMS = {
    "VL": TrapezoidalFuzzyNumber(0.00, 0.00, 0.10, 0.20),
    "L": TrapezoidalFuzzyNumber(0.10, 0.25, 0.25, 0.40),
    "M": TrapezoidalFuzzyNumber(0.30, 0.45, 0.55, 0.70),
    "H": TrapezoidalFuzzyNumber(0.60, 0.75, 0.75, 0.90),
    "VH": TrapezoidalFuzzyNumber(0.80, 0.90, 0.90, 1.00),
}
TERM_ORDER = ("VL", "L", "M", "H", "VH")


def term_to_fuzzy(term: str) -> TrapezoidalFuzzyNumber:
    key = str(term).strip().upper()
    if key not in TERMS:
        raise ParseError(f"unknown linguistic term {term!r}; expected one of {', '.join(TERM_ORDER)}")
    return TERMS[key]


class Position(Enum):
    PROFESSOR = 4
    ASSOCIATE = 3
    ASSISTANT = 2
    TECHNICIAN = 1


class Education(Enum):
    PHD = 2.0
    MASTER = 1.5
    BACHELOR = 1.0


_POSITION_ALIASES = {
    "professor": Position.PROFESSOR,
    "associate professor": Position.ASSOCIATE,
    "senior engineer": Position.ASSOCIATE,
    "assocprof/senioreng": Position.ASSOCIATE,
    "assistant professor": Position.ASSISTANT,
    "engineer": Position.ASSISTANT,
    "asstprof/engineer": Position.ASSISTANT,
    "technician": Position.TECHNICIAN,
    "operator": Position.TECHNICIAN,
    "technician/operator": Position.TECHNICIAN,
}
_EDUCATION_ALIASES = {
    "phd": Education.PHD,
    "ph.d.": Education.PHD,
    "doctorate": Education.PHD,
    "master": Education.MASTER,
    "bachelor": Education.BACHELOR,
    "undergraduate": Education.BACHELOR,
}


def parse_position(text) -> Position:
    if isinstance(text, Position):
        return text
    key = str(text).strip().lower()
    if key not in _POSITION_ALIASES:
        raise ParseError(f"unknown position {text!r}")
    return _POSITION_ALIASES[key]


def parse_education(text) -> Education:
    if isinstance(text, Education):
        return text
    key = str(text).strip().lower()
    if key not in _EDUCATION_ALIASES:
        raise ParseError(f"unknown education level {text!r}")
    return _EDUCATION_ALIASES[key]


def experience_points(years: int) -> int:
    if years >= 30:
        return 4
    if years >= 20:
        return 3
    if years >= 10:
        return 2
    return 1


@dataclass(frozen=True)
class ExpertProfile:
    position: Position
    years_experience: int
    education: Education
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "position", parse_position(self.position))
        object.__setattr__(self, "education", parse_education(self.education))
        if self.years_experience < 0:
            raise ConfigurationError("years of experience must be >= 0")

    @property
    def score(self) -> float:
        return self.position.value + experience_points(self.years_experience) + self.education.value


def expert_weight(profiles) -> np.ndarray:
    profiles = list(profiles)
    if not profiles:
        raise ConfigurationError("need at least one expert")
    scores = np.array([p.score for p in profiles], dtype=float)
    return scores / scores.sum()


def pairwise_similarity(a: TrapezoidalFuzzyNumber, b: TrapezoidalFuzzyNumber) -> float:
    return 1.0 - float(np.abs(a.as_array() - b.as_array()).sum()) / 4.0


def defuzzify_centroid(f: TrapezoidalFuzzyNumber) -> float:
    """x-centroid of the trapezoidal membership function."""
    a1, a2, a3, a4 = f.as_tuple()
    denom = 3.0 * (a3 + a4 - a1 - a2)
    if denom == 0:
        return float(a1)
    num = (a3 * a3 + a4 * a4 + a3 * a4) - (a1 * a1 + a2 * a2 + a1 * a2)
    return num / denom


def sam_aggregate(opinions, weights, beta: float = DEFAULT_BETA):
    """Similarity aggregation of one metric's ratings.

    ``opinions`` are linguistic terms or fuzzy numbers, one per expert.
    Returns ``(aggregate fuzzy number, centroid score)``.
    """
    fuzzy = [o if isinstance(o, TrapezoidalFuzzyNumber) else term_to_fuzzy(o) for o in opinions]
    w = np.asarray(weights, dtype=float)
    if len(fuzzy) != w.size:
        raise ConfigurationError(f"{len(fuzzy)} opinions but {w.size} weights")
    if not fuzzy:
        raise ConfigurationError("no opinions to aggregate")
    if len(fuzzy) == 1:
        return fuzzy[0], defuzzify_centroid(fuzzy[0])
    if not 0 <= beta <= 1:
        raise ConfigurationError("beta must be in [0, 1]")
    n = len(fuzzy)
    S = np.array([[pairwise_similarity(a, b) for b in fuzzy] for a in fuzzy])
    aa = (S.sum(axis=1) - 1.0) / (n - 1)
    ra = aa / aa.sum()
    cc = beta * w / w.sum() + (1.0 - beta) * ra
    stacked = np.array([f.as_array() for f in fuzzy])
    agg = cc @ stacked
    # identical opinions must come back exactly
    if all(f == fuzzy[0] for f in fuzzy):
        agg = fuzzy[0].as_array()
    # guard against rounding breaking the a1 <= a2 <= a3 <= a4 order
    agg = np.maximum.accumulate(agg)
    result = TrapezoidalFuzzyNumber(*(float(v) for v in agg))
    return result, defuzzify_centroid(result)


@dataclass
class OpinionMatrix:
    experts: list[ExpertProfile]
    metrics: list[str]
    ratings: list[list[str]]  # metrics x experts

    def __post_init__(self):
        if len(self.ratings) != len(self.metrics):
            raise ParseError("one rating row per metric is required")
        for metric, row in zip(self.metrics, self.ratings):
            if len(row) != len(self.experts):
                raise ParseError(f"metric {metric!r} has {len(row)} ratings for {len(self.experts)} experts")
            for term in row:
                term_to_fuzzy(term)

    def column(self, metric: str) -> list[str]:
        return self.ratings[self.metrics.index(metric)]


def _blocks(text: str):
    block = []
    for line in text.splitlines():
        if line.strip() == "":
            if block:
                yield block
                block = []
        elif not line.lstrip().startswith("#"):
            block.append(line)
    if block:
        yield block


def parse_opinions(text: str) -> OpinionMatrix:
    """Parse the two-block expert opinion format (profiles, then ratings)."""
    blocks = list(_blocks(text))
    if len(blocks) != 2:
        raise ParseError(f"expected 2 blank-line separated blocks, found {len(blocks)}")
    prof_rows = list(csv.reader(blocks[0]))
    header = [h.strip().lower() for h in prof_rows[0]]
    if header != ["expert", "position", "years", "education"]:
        raise ParseError(f"bad profile header {prof_rows[0]}")
    experts = []
    for lineno, row in enumerate(prof_rows[1:], start=2):
        if len(row) != 4:
            raise ParseError(f"profile line {lineno}: expected 4 fields, got {len(row)}")
        try:
            years = int(row[2])
        except ValueError:
            raise ParseError(f"profile line {lineno}: years must be an integer") from None
        experts.append(ExpertProfile(row[1].strip(), years, row[3].strip(), row[0].strip()))
    rating_rows = list(csv.reader(blocks[1]))
    if rating_rows[0][0].strip().lower() != "metric":
        raise ParseError("rating block must start with a 'metric,...' header")
    metrics, ratings = [], []
    for row in rating_rows[1:]:
        metrics.append(row[0].strip())
        ratings.append([t.strip().upper() for t in row[1:]])
    return OpinionMatrix(experts, metrics, ratings)


def load_opinions(path=None) -> OpinionMatrix:
    """Read an opinion file; without a path, the bundled reference panel."""
    if path is None:
        text = resources.files("efem.data").joinpath("expert_opinions.csv").read_text()
    else:
        text = Path(path).read_text()
    return parse_opinions(text)


def score_metrics(matrix: OpinionMatrix, beta: float = DEFAULT_BETA) -> dict[str, float]:
    w = expert_weight(matrix.experts)
    return {m: sam_aggregate(matrix.column(m), w, beta)[1] for m in matrix.metrics}


def read_scores(source) -> dict[str, float]:
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    try:
        scores = {r["metric"].strip(): float(r["score"]) for r in rows}
    except (KeyError, ValueError) as exc:
        raise ParseError(f"score table needs numeric 'metric,score' rows: {exc}") from None
    for m, s in scores.items():
        if not 0 <= s <= 1:
            raise ParseError(f"score for {m} outside [0, 1]: {s}")
    return scores


def reference_scores() -> dict[str, float]:
    """Reference metric scores bundled with the package (three decimals)."""
    with resources.files("efem.data").joinpath("reference_scores.csv").open() as fh:
        return read_scores(fh)


def write_scores(path, scores: dict[str, float]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "score"])
        for m, s in scores.items():
            w.writerow([m, f"{s:.6f}"])
    return path


def derive_loss_weights(scores: dict[str, float]) -> tuple[float, float, float]:
    """(lambda_shape, lambda_time, lambda_space) from DTW, TDI and RMSE scores."""
    reps = []
    for index in ("shape", "time", "space"):
        metric = LOSS_INDEX_METRICS[index]
        if metric not in scores:
            if index == "space" and "MSE" in scores:
                metric = "MSE"
            else:
                raise ConfigurationError(f"score table lacks {metric} for the {index} index")
        reps.append(float(scores[metric]))
    total = sum(reps)
    if total <= 0:
        raise ConfigurationError("representative scores must have a positive sum")
    lam = [r / total for r in reps]
    # put the rounding residue on the largest weight so the sum is exactly 1
    k = int(np.argmax(lam))
    lam[k] = 1.0 - sum(v for i, v in enumerate(lam) if i != k)
    return tuple(lam)


def default_loss_weights() -> tuple[float, float, float]:
    return derive_loss_weights(reference_scores())


def feedback_score(history, weights) -> float:
    """Score in [0, 1] from the latest validation metrics.

    ``history`` is a list of dicts with ``dtw``, ``tdi`` and ``mse``; an
    empty history (epoch 0) yields the neutral 0.5.
    """
    if not history:
        return NEUTRAL_SCORE
    last = history[-1]
    q = [1.0 / (1.0 + max(0.0, float(last[k]))) for k in ("dtw", "tdi", "mse")]
    w = np.asarray(weights, dtype=float)
    return float(np.clip(w @ np.array(q), 0.0, 1.0))


def score_channel(s: float, length: int) -> np.ndarray:
    if length < 1:
        raise ConfigurationError("score channel length must be >= 1")
    return np.full(length, float(s))
