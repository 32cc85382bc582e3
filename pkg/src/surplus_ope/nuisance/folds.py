"""Random balanced fold assignment for cross-fitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class FoldAssignment:
    n: int
    K: int
    folds: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        f = np.asarray(self.folds, dtype=np.int64).reshape(-1)
        if f.size != self.n or self.K < 2:
            raise DomainError("fold vector must have n entries and K >= 2")
        if f.min() < 0 or f.max() >= self.K:
            raise DomainError("fold labels must lie in 0..K-1")
        f = f.copy()
        f.setflags(write=False)
        object.__setattr__(self, "folds", f)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.folds, minlength=self.K)

    def split(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``(train, test)`` index arrays for fold ``k``."""
        test = self.folds == k
        return np.flatnonzero(~test), np.flatnonzero(test)

    def permuted(self, order) -> FoldAssignment:
        """Assignment that follows rows reordered by ``order``."""
        return FoldAssignment(self.n, self.K, self.folds[np.asarray(order)], self.seed)


def make_folds(n: int, K: int = 2, rng_seed=None) -> FoldAssignment:
    """Uniformly random partition of ``range(n)`` into ``K`` folds whose sizes
    differ by at most one."""
    if K < 2:
        raise DomainError(f"cross-fitting needs K >= 2, got {K}")
    if K > n:
        raise DomainError(f"cannot split {n} observations into {K} folds")
    rng = np.random.default_rng(rng_seed)
    folds = np.empty(n, dtype=np.int64)
    folds[rng.permutation(n)] = np.arange(n) % K
    return FoldAssignment(n, K, folds, rng_seed)
