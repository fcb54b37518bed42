"""Cosine similarity tables shared by replay, proposals, pseudo seeds and ranking."""

import numpy as np
from scipy.spatial.distance import cdist


def cosine_similarity(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; rows with zero norm score 0 against everything."""
    left = np.atleast_2d(np.asarray(left, dtype=np.float64))
    right = np.atleast_2d(np.asarray(right, dtype=np.float64))
    if left.shape[0] == 0 or right.shape[0] == 0:
        return np.zeros((left.shape[0], right.shape[0]))
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = 1.0 - cdist(left, right, "cosine")
    return np.nan_to_num(sim, nan=0.0)
