"""Retrieval metrics and structured judge verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ._jsonio import loads_strict
from .exceptions import EmptyInput, EmptyRankings, InputError, MissingGroundTruth, SchemaViolation

JUDGE_KEYS = (
    "aesthetic_quality", "visual_expressiveness", "professional_polish", "clarity",
    "logical_flow", "accuracy", "completeness", "appropriateness",
)


@dataclass
class RetrievalEvalReport:
    mrr: float
    accuracy: float
    recall_at_1: float
    recall_at_5: float
    f1: float
    ranks: dict = field(default_factory=dict)  # query id -> 1-based rank or None when absent

    def to_dict(self, include_ranks=True):
        d = {"MRR": self.mrr, "Accuracy": self.accuracy, "Recall@1": self.recall_at_1,
             "Recall@5": self.recall_at_5, "F1": self.f1, "queries": len(self.ranks)}
        if include_ranks:
            d["ranks"] = {q: r for q, r in sorted(self.ranks.items())}
        return d


def rank_of(ranking, target):
    """1-based position of ``target`` in ``ranking``, or ``math.inf``."""
    for i, item in enumerate(ranking, 1):
        if item == target:
            return i
    return math.inf


def recall_at(ranks, k):
    return sum(1 for r in ranks if r <= k) / len(ranks)


def compute_retrieval_metrics(rankings, ground_truth):
    """``rankings``: query id -> ranked id list; ``ground_truth``: query id -> relevant id.

    With one relevant item per query, precision@1 equals recall@1, so F1 and
    accuracy both collapse to recall@1.
    """
    if not rankings:
        raise EmptyRankings("no rankings given")
    queries = sorted(rankings)
    ranks = []
    for q in queries:
        if q not in ground_truth:
            raise MissingGroundTruth(q)
        ranks.append(rank_of(rankings[q], ground_truth[q]))
    mrr = math.fsum(1.0 / r for r in ranks) / len(ranks)
    r1 = recall_at(ranks, 1)
    return RetrievalEvalReport(
        mrr=mrr, accuracy=r1, recall_at_1=r1, recall_at_5=recall_at(ranks, 5), f1=r1,
        ranks={q: (None if math.isinf(r) else r) for q, r in zip(queries, ranks)},
    )


@dataclass(frozen=True)
class JudgeVerdict:
    scores: dict
    overall: float
    strengths: tuple = ()
    weaknesses: tuple = ()
    most_important_fix: str = ""

    def to_dict(self):
        return {"scores": {k: self.scores[k] for k in JUDGE_KEYS}, "overall": self.overall,
                "strengths": list(self.strengths), "weaknesses": list(self.weaknesses),
                "most_important_fix": self.most_important_fix}


def _score(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(path, "must be a number")
    if not 0 <= value <= 10:
        raise SchemaViolation(path, f"{value} outside [0, 10]")
    return float(value)


def _string_list(value, path):
    if not isinstance(value, list) or not all(isinstance(s, str) for s in value):
        raise SchemaViolation(path, "must be a list of strings")
    return tuple(value)


def parse_judge_verdict(text):
    obj = loads_strict(text)
    if not isinstance(obj, dict):
        raise SchemaViolation("$", "expected a JSON object")
    scores_raw = obj.get("scores")
    if not isinstance(scores_raw, dict):
        raise SchemaViolation("$.scores", "missing or not an object")
    scores = {}
    for k in JUDGE_KEYS:
        if k not in scores_raw:
            raise SchemaViolation(f"$.scores.{k}", "missing")
        scores[k] = _score(scores_raw[k], f"$.scores.{k}")
    extra = sorted(set(scores_raw) - set(JUDGE_KEYS))
    if extra:
        raise SchemaViolation(f"$.scores.{extra[0]}", "unexpected key")
    if "overall" not in obj:
        raise SchemaViolation("$.overall", "missing")
    overall = _score(obj["overall"], "$.overall")
    strengths = _string_list(obj.get("strengths", []), "$.strengths")
    weaknesses = _string_list(obj.get("weaknesses", []), "$.weaknesses")
    fix = obj.get("most_important_fix", "")
    if not isinstance(fix, str):
        raise SchemaViolation("$.most_important_fix", "must be a string")
    return JudgeVerdict(scores, overall, strengths, weaknesses, fix)


@dataclass
class JudgeAggregate:
    count: int
    means: dict  # sub-metric -> mean
    judge_overall_mean: float
    mean_of_eight: float

    def to_dict(self):
        return {"count": self.count, "scores": {k: self.means[k] for k in JUDGE_KEYS},
                "overall_judge_reported": self.judge_overall_mean,
                "overall_mean_of_eight": self.mean_of_eight}


def aggregate_judge_verdicts(verdicts):
    """Per-metric means, plus two distinct overalls: the judge's own and the mean of the eight."""
    verdicts = list(verdicts)
    if not verdicts:
        raise EmptyInput("no verdicts to aggregate")
    n = len(verdicts)
    means = {k: math.fsum(v.scores[k] for v in verdicts) / n for k in JUDGE_KEYS}
    return JudgeAggregate(
        count=n, means=means,
        judge_overall_mean=math.fsum(v.overall for v in verdicts) / n,
        mean_of_eight=math.fsum(means.values()) / len(JUDGE_KEYS),
    )


def verdict_from_scores(scores, overall=None):
    """Build a verdict directly from numbers (fixtures, offline tables)."""
    missing = [k for k in JUDGE_KEYS if k not in scores]
    if missing:
        raise InputError(f"missing sub-scores: {missing}")
    s = {k: _score(scores[k], f"$.scores.{k}") for k in JUDGE_KEYS}
    if overall is None:
        overall = math.fsum(s.values()) / len(s)
    return JudgeVerdict(s, _score(overall, "$.overall"))
