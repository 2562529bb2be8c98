"""Evaluation metrics and their serializable report."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .exceptions import ContractViolation, SingleClassAucError


def accuracy(predicted, actual):
    """Fraction of matching labels."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise ContractViolation(f"label shapes differ: {predicted.shape} vs {actual.shape}")
    if predicted.size == 0:
        raise ContractViolation("accuracy of an empty label set is undefined")
    return float(np.mean(predicted == actual))


def auc(scores, labels):
    """Area under the ROC curve, rank-based (Mann-Whitney), ties counted half.

    Equals the probability that a uniformly random positive outscores a
    uniformly random negative.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractViolation("scores and labels must be matching 1-D arrays")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassAucError(
            f"AUC undefined with {n_pos} positive and {n_neg} negative labels"
        )
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class MetricsReport:
    """ACC/AUC plus mean loss terms for one evaluation pass."""

    split: str
    count: int
    acc: float
    auc: float
    loss_terms: dict = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(f.read())
