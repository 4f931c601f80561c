"""POI transition embeddings via skip-gram with negative sampling.

Consecutive within-session visits become (center, context) pairs in both
directions; negatives are drawn from the unigram^0.75 distribution. The
resulting table is the input the alignment projector maps into the
recommender's space. Externally trained tables of the same shape can be
imported instead (`load_table`).
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .checkins import DatasetSplit, Trajectory

CHECKPOINT_PREFIX = "poiemb."


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


@dataclass
class PoiEmbeddingTable:
    vectors: np.ndarray  # (|POI|, d)
    poi_ids: list[str]
    train_losses: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index_of(self, poi_id: str) -> int:
        return self.poi_ids.index(poi_id)


def extract_transition_pairs(
    trajectories: list[Trajectory], window: int = 1
) -> list[tuple[str, str]]:
    """Within-session POI pairs at distance <= window, both directions."""
    pairs: list[tuple[str, str]] = []
    for traj in trajectories:
        for session in traj.sessions():
            for i in range(len(session)):
                for j in range(i + 1, min(i + window + 1, len(session))):
                    pairs.append((session[i].poi_id, session[j].poi_id))
                    pairs.append((session[j].poi_id, session[i].poi_id))
    return pairs


def train_portion_trajectories(split: DatasetSplit) -> list[Trajectory]:
    """Per-user trajectory restricted to the train portion's events."""
    last_train_pos: dict[str, int] = {}
    for s in split.train:
        last_train_pos[s.user_id] = max(last_train_pos.get(s.user_id, 0), s.target_pos)
    out = []
    for user_id in sorted(split.trajectories):
        t = split.trajectories[user_id]
        end = last_train_pos.get(user_id, 0) + 1
        events = t.events[:end]
        breaks = [b for b in t.session_breaks if b < end]
        out.append(Trajectory(user_id, events, breaks))
    return out


def train_embeddings(
    pairs: list[tuple[str, str]],
    poi_ids: list[str],
    dim: int = 128,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.05,
    seed: int = 0,
    batch_size: int = 256,
) -> PoiEmbeddingTable:
    """Skip-gram/negative-sampling training over transition pairs.

    Deterministic under a fixed seed. POIs absent from the pairs keep
    their initial vectors.
    """
    if not pairs:
        raise ValueError("train_embeddings: no transition pairs")
    index = {pid: i for i, pid in enumerate(poi_ids)}
    centers = np.array([index[a] for a, _ in pairs], dtype=np.int64)
    contexts = np.array([index[b] for _, b in pairs], dtype=np.int64)
    n_poi = len(poi_ids)

    counts = np.bincount(contexts, minlength=n_poi).astype(np.float64)
    noise = counts**0.75
    noise /= noise.sum()

    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, (n_poi, dim))
    w_out = np.zeros((n_poi, dim))

    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            c, o = centers[batch], contexts[batch]
            neg = rng.choice(n_poi, size=(len(batch), negatives), p=noise)
            vc, uo, un = w_in[c], w_out[o], w_out[neg]

            pos_score = _sigmoid(np.sum(vc * uo, axis=1))
            neg_score = _sigmoid(np.einsum("bkd,bd->bk", un, vc))
            epoch_loss += -np.log(np.clip(pos_score, 1e-12, None)).sum()
            epoch_loss += -np.log(np.clip(1.0 - neg_score, 1e-12, None)).sum()

            g_pos = pos_score - 1.0
            d_vc = g_pos[:, None] * uo + np.einsum("bk,bkd->bd", neg_score, un)
            d_uo = g_pos[:, None] * vc
            d_un = neg_score[:, :, None] * vc[:, None, :]
            np.add.at(w_in, c, -lr * d_vc)
            np.add.at(w_out, o, -lr * d_uo)
            np.add.at(w_out, neg.ravel(), -lr * d_un.reshape(-1, dim))
        losses.append(epoch_loss / len(pairs))

    if not np.isfinite(w_in).all():
        raise ValueError("train_embeddings: non-finite values after training")
    return PoiEmbeddingTable(vectors=w_in, poi_ids=list(poi_ids), train_losses=losses)


def embeddings_for_split(
    split: DatasetSplit,
    dim: int = 128,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.05,
    seed: int = 0,
    window: int = 1,
) -> PoiEmbeddingTable:
    """Train transition embeddings on the split's train portion."""
    pairs = extract_transition_pairs(train_portion_trajectories(split), window=window)
    if not pairs:
        print("warning: no transition pairs in train portion; using random table", file=sys.stderr)
        rng = np.random.default_rng(seed)
        return PoiEmbeddingTable(
            vectors=rng.uniform(-0.5 / dim, 0.5 / dim, (len(split.poi_vocab), dim)),
            poi_ids=list(split.poi_vocab.ids),
        )
    return train_embeddings(
        pairs, split.poi_vocab.ids, dim=dim, negatives=negatives,
        epochs=epochs, lr=lr, seed=seed,
    )


def save_table(table: PoiEmbeddingTable, dir_path: str) -> None:
    checkpoint.save_arrays(dir_path, {CHECKPOINT_PREFIX + "vectors": table.vectors})
    checkpoint.save_manifest(dir_path, {"poi_ids": table.poi_ids, "dim": table.dim})


def load_table(dir_path: str) -> PoiEmbeddingTable:
    arrays = checkpoint.load_arrays(dir_path)
    manifest = checkpoint.load_manifest(dir_path)
    vectors = arrays[CHECKPOINT_PREFIX + "vectors"]
    if vectors.shape != (len(manifest["poi_ids"]), int(manifest["dim"])):
        raise ValueError(f"embedding table shape {vectors.shape} does not match manifest")
    if not np.isfinite(vectors).all():
        raise ValueError("embedding table contains non-finite values")
    return PoiEmbeddingTable(vectors=vectors, poi_ids=list(manifest["poi_ids"]))
