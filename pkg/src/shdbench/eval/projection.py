"""Joint 2-D projection of embeddings for qualitative plots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.manifold import TSNE

MIN_POINTS = 10


@dataclass(frozen=True)
class ProjectionConfig:
    perplexity: float = 30.0
    seed: int = 0
    init: str = "pca"
    max_iter: int = 1000


def project_embeddings(embeddings, config: ProjectionConfig | None = None) -> np.ndarray:
    """t-SNE coordinates for the stacked rows of ``embeddings``.

    ``embeddings`` may be a single matrix or a sequence of matrices from
    different cohorts; sequences are fitted jointly and returned stacked
    in input order.
    """
    config = config or ProjectionConfig()
    if isinstance(embeddings, (list, tuple)):
        x = np.concatenate([np.asarray(e, dtype=np.float64) for e in embeddings], axis=0)
    else:
        x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got shape {x.shape}")
    if len(x) < MIN_POINTS:
        raise ValueError(f"too few points to project: {len(x)} < {MIN_POINTS}")
    if not np.isfinite(x).all():
        raise ValueError("embeddings contain non-finite values")
    if np.ptp(x, axis=0).max() == 0:
        # every row identical: nothing to separate
        return np.zeros((len(x), 2))
    perplexity = min(config.perplexity, (len(x) - 1) / 3.0)
    tsne = TSNE(
        n_components=2,
        perplexity=perplexity,
        init=config.init,
        random_state=config.seed,
        max_iter=config.max_iter,
    )
    return tsne.fit_transform(x)
