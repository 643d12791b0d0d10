"""
Spatial filter bank produced by every CSP variant
"""
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class SpatialFilterBank:
    """
    Paired filters, eigenvalues and patterns.

    filters: C x 2m, first m favour class 1, last m favour class 2.
    eigenvalues: class-1 Rayleigh quotient of each filter, in [0, 1].
    patterns: C x 2m forward model, or None until computed.
    """
    filters: np.ndarray
    eigenvalues: np.ndarray
    m: int
    patterns: Optional[np.ndarray] = None
    method: str = "csp"
    info: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.filters.shape[1] != 2 * self.m:
            raise ValueError(f"expected {2 * self.m} filters, got {self.filters.shape[1]}")
        if len(self.eigenvalues) != 2 * self.m:
            raise ValueError(f"expected {2 * self.m} eigenvalues, got {len(self.eigenvalues)}")

    @property
    def channels(self) -> int:
        return self.filters.shape[0]

    @property
    def class1_filters(self) -> np.ndarray:
        return self.filters[:, :self.m]

    @property
    def class2_filters(self) -> np.ndarray:
        return self.filters[:, self.m:]

    def with_patterns(self, patterns: np.ndarray) -> "SpatialFilterBank":
        return SpatialFilterBank(self.filters, self.eigenvalues, self.m, patterns, self.method, dict(self.info))

    def to_dict(self) -> Dict:
        return {
            'method': self.method,
            'm': self.m,
            'eigenvalues': self.eigenvalues.tolist(),
            'filters': self.filters.tolist(),
            'patterns': self.patterns.tolist() if self.patterns is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'SpatialFilterBank':
        patterns = data.get('patterns')
        return cls(
            filters=np.asarray(data['filters'], dtype=float),
            eigenvalues=np.asarray(data['eigenvalues'], dtype=float),
            m=int(data['m']),
            patterns=np.asarray(patterns, dtype=float) if patterns is not None else None,
            method=data.get('method', 'csp'),
        )

    def __repr__(self) -> str:
        return (f"SpatialFilterBank(method='{self.method}', channels={self.channels}, m={self.m}, "
                f"eigenvalues={np.round(self.eigenvalues, 4).tolist()})")
