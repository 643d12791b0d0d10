"""
Two-class Linear Discriminant Analysis on log-variance features
"""
import logging
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
from scipy import linalg

from utils.numerics import tree_sum

logger = logging.getLogger(__name__)

PINV_RCOND = 1e-10


@dataclass(frozen=True, eq=False)
class LdaModel:
    """Linear decision rule: class 1 iff weight . x + bias > 0"""
    weight: np.ndarray
    bias: float

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        return np.atleast_2d(features) @ self.weight + self.bias

    def to_dict(self) -> Dict:
        return {'weight': self.weight.tolist(), 'bias': float(self.bias)}

    @classmethod
    def from_dict(cls, data: Dict) -> 'LdaModel':
        return cls(np.asarray(data['weight'], dtype=float), float(data['bias']))


def _canonical_order(X: np.ndarray) -> np.ndarray:
    # lexicographic row order makes accumulation independent of sample order
    return X[np.lexsort(X.T[::-1])] if len(X) else X


def lda_train(features: Sequence, labels: Sequence, ridge: float = 0.0) -> LdaModel:
    """
    Fisher LDA with pooled class-size-weighted covariance.

    weight = S^+ (mu1 - mu2), bias = -weight . (mu1 + mu2) / 2. The
    pseudo-inverse uses a relative cutoff of 1e-10; `ridge` adds
    ridge * trace(S)/k to the diagonal.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels).ravel()
    if X.shape[0] != len(y):
        raise ValueError(f"{X.shape[0]} feature vectors for {len(y)} labels")
    classes = [np.asarray(_canonical_order(X[y == c])) for c in (1, 2)]
    for c, Xc in zip((1, 2), classes):
        if len(Xc) < 2:
            raise ValueError(f"class {c} has {len(Xc)} samples; LDA needs at least 2 per class")

    means = [tree_sum(Xc) / len(Xc) for Xc in classes]
    scatter = sum(tree_sum(np.einsum('ni,nj->nij', Xc - mu, Xc - mu)) for Xc, mu in zip(classes, means))
    pooled = scatter / (len(y) - 2)
    if ridge > 0:
        pooled = pooled + ridge * np.trace(pooled) / pooled.shape[0] * np.eye(pooled.shape[0])

    weight = linalg.pinvh(pooled, rtol=PINV_RCOND) @ (means[0] - means[1])
    bias = -float(weight @ (means[0] + means[1])) / 2.0
    if not np.all(np.isfinite(weight)) or not np.isfinite(bias):
        raise ValueError("LDA produced non-finite weights")
    return LdaModel(weight, bias)


def lda_predict(model: LdaModel, feature: np.ndarray) -> int:
    """Class 1 for a strictly positive score, class 2 otherwise (ties go to class 2)"""
    score = float(np.asarray(feature, dtype=float) @ model.weight + model.bias)
    return 1 if score > 0 else 2


def predict_all(model: LdaModel, features: np.ndarray) -> np.ndarray:
    scores = model.decision_function(features)
    return np.where(scores > 0, 1, 2)


def accuracy(model: LdaModel, features, labels) -> float:
    labels = np.asarray(labels).ravel()
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predict_all(model, np.atleast_2d(features)) == labels))
