"""Sequence recommender over mixed prompts.

Each prefix check-in contributes five tokens (time bucket, user, POI
placeholder, category, GPS placeholder) followed by one terminal query
token. Placeholder positions are overwritten with coordinate-encoder and
alignment-projector outputs, a small causal self-attention network runs
over the sequence, and an affine head scores the full POI vocabulary at
the final position.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import align as pam
from . import autodiff as ad
from . import checkpoint as ckpt
from . import geoenc
from .autodiff import Tensor
from .checkins import CheckIn, DatasetSplit, Vocab
from .geoenc import GeoEncoderConfig, GeoEncoderParams
from .poiemb import PoiEmbeddingTable, embeddings_for_split

TOKEN_PAD = 0
TOKEN_QUERY = 1
TOKEN_POI_SLOT = 2
TOKEN_GPS_SLOT = 3
TOKEN_UNK_USER = 4
TOKEN_UNK_CATEGORY = 5
N_SPECIAL_TOKENS = 6

TOKENS_PER_EVENT = 5
MASK_VALUE = -1e30

MODEL_PREFIX = "model."


@dataclass
class RecommenderConfig:
    model_dim: int = 128
    n_blocks: int = 2
    ff_mult: int = 4
    max_events: int = 32          # prompt prefix cap K
    time_buckets: int = 168       # hour-of-week
    poi_dim: int = 128            # transition embedding width
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 3
    no_gcim: bool = False
    no_fourier: bool = False
    no_pam: bool = False
    geo: GeoEncoderConfig = field(default_factory=GeoEncoderConfig)

    def __post_init__(self):
        if isinstance(self.geo, dict):
            self.geo = GeoEncoderConfig(**self.geo)
        self.geo.out_dim = self.model_dim

    @property
    def max_positions(self) -> int:
        return TOKENS_PER_EVENT * self.max_events + 1


@dataclass
class TokenVocab:
    """Token ids for template/user/time/category tokens.

    POIs are not text tokens; they enter through placeholder slots.
    """

    user_index: dict[str, int]
    category_index: dict[str, int]
    poi_ids: list[str]
    time_buckets: int = 168

    @classmethod
    def from_split(cls, split: DatasetSplit, time_buckets: int = 168) -> "TokenVocab":
        return cls(
            user_index=dict(split.user_vocab.index),
            category_index=dict(split.category_vocab.index),
            poi_ids=list(split.poi_vocab.ids),
            time_buckets=time_buckets,
        )

    @property
    def poi_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.poi_ids)}

    @property
    def size(self) -> int:
        return N_SPECIAL_TOKENS + self.time_buckets + len(self.user_index) + len(self.category_index)

    def time_token(self, ts: int) -> int:
        dt = datetime.fromtimestamp(ts, tz=timezone.utc)
        bucket = (dt.weekday() * 24 + dt.hour) % self.time_buckets
        return N_SPECIAL_TOKENS + bucket

    def user_token(self, user_id: str) -> int:
        i = self.user_index.get(user_id)
        if i is None:
            return TOKEN_UNK_USER
        return N_SPECIAL_TOKENS + self.time_buckets + i

    def category_token(self, category: str) -> int:
        i = self.category_index.get(category)
        if i is None:
            return TOKEN_UNK_CATEGORY
        return N_SPECIAL_TOKENS + self.time_buckets + len(self.user_index) + i

    def fingerprint(self) -> str:
        payload = json.dumps(
            [sorted(self.user_index.items()), sorted(self.category_index.items()),
             self.poi_ids, self.time_buckets],
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class PromptSequence:
    token_ids: np.ndarray     # (T,)
    gps_slots: np.ndarray     # (E,) positions of GPS placeholders
    poi_slots: np.ndarray     # (E,) positions of POI placeholders
    coords: np.ndarray        # (E, 2) lat/lon per prefix event
    poi_indices: np.ndarray   # (E,) POI vocab index per prefix event
    target_index: int
    sample_id: int = -1

    def __len__(self) -> int:
        return len(self.token_ids)


def build_prompt(
    prefix: list[CheckIn],
    target: CheckIn | None,
    vocab: TokenVocab,
    max_events: int = 32,
    sample_id: int = -1,
) -> PromptSequence:
    """Token/slot sequence for a trajectory prefix.

    Per event, in order: time bucket, user, POI slot, category, GPS slot;
    a single query token terminates the sequence. Prefixes longer than
    `max_events` keep only the most recent events.
    """
    if not prefix:
        raise ValueError("build_prompt: prefix must be nonempty")
    events = prefix[-max_events:]
    poi_index = vocab.poi_index
    tokens: list[int] = []
    gps_slots, poi_slots, coords, poi_idx = [], [], [], []
    for e in events:
        tokens.append(vocab.time_token(e.ts))
        tokens.append(vocab.user_token(e.user_id))
        poi_slots.append(len(tokens))
        tokens.append(TOKEN_POI_SLOT)
        tokens.append(vocab.category_token(e.category))
        gps_slots.append(len(tokens))
        tokens.append(TOKEN_GPS_SLOT)
        coords.append((e.lat, e.lon))
        if e.poi_id not in poi_index:
            raise KeyError(f"build_prompt: POI {e.poi_id!r} not in vocabulary")
        poi_idx.append(poi_index[e.poi_id])
    tokens.append(TOKEN_QUERY)
    target_index = -1
    if target is not None:
        if target.poi_id not in poi_index:
            raise KeyError(f"build_prompt: target POI {target.poi_id!r} not in vocabulary")
        target_index = poi_index[target.poi_id]
    return PromptSequence(
        token_ids=np.asarray(tokens, dtype=np.int64),
        gps_slots=np.asarray(gps_slots, dtype=np.int64),
        poi_slots=np.asarray(poi_slots, dtype=np.int64),
        coords=np.asarray(coords, dtype=np.float64).reshape(len(events), 2),
        poi_indices=np.asarray(poi_idx, dtype=np.int64),
        target_index=target_index,
        sample_id=sample_id,
    )


class _Block:
    """Pre-LN causal self-attention block (single head) + feed-forward."""

    def __init__(self, dim: int, ff_dim: int, rng: np.random.Generator):
        s = 1.0 / math.sqrt(dim)
        self.ln1_g = ad.parameter(np.ones(dim))
        self.ln1_b = ad.parameter(np.zeros(dim))
        self.wq = ad.parameter(rng.normal(0.0, s, (dim, dim)))
        self.wk = ad.parameter(rng.normal(0.0, s, (dim, dim)))
        self.wv = ad.parameter(rng.normal(0.0, s, (dim, dim)))
        self.wo = ad.parameter(rng.normal(0.0, s, (dim, dim)))
        self.ln2_g = ad.parameter(np.ones(dim))
        self.ln2_b = ad.parameter(np.zeros(dim))
        self.w1 = ad.parameter(rng.normal(0.0, s, (dim, ff_dim)))
        self.b1 = ad.parameter(np.zeros(ff_dim))
        self.w2 = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(ff_dim), (ff_dim, dim)))
        self.b2 = ad.parameter(np.zeros(dim))

    _NAMES = ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"]

    def parameters(self) -> list[Tensor]:
        return [getattr(self, n) for n in self._NAMES]

    def named_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}{n}": getattr(self, n).values for n in self._NAMES}

    def load_arrays(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        for n in self._NAMES:
            getattr(self, n).values = arrays[f"{prefix}{n}"].copy()

    def apply(self, x: Tensor, mask: Tensor, dim: int) -> Tensor:
        h = ad.layer_norm(x, self.ln1_g, self.ln1_b)
        q = ad.matmul(h, self.wq)
        k = ad.matmul(h, self.wk)
        v = ad.matmul(h, self.wv)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dim))
        attn = ad.softmax(ad.add(scores, mask))
        x = ad.add(x, ad.matmul(ad.matmul(attn, v), self.wo))
        h2 = ad.layer_norm(x, self.ln2_g, self.ln2_b)
        b, t, _ = h2.shape
        ff1 = ad.relu(ad.add(ad.matmul(h2, self.w1),
                             ad.broadcast_to(ad.reshape(self.b1, (1, 1, -1)), (b, t, self.b1.shape[0]))))
        ff2 = ad.add(ad.matmul(ff1, self.w2),
                     ad.broadcast_to(ad.reshape(self.b2, (1, 1, -1)), (b, t, dim)))
        return ad.add(x, ff2)


class Recommender:
    """Full model: token/position tables, ablation-aware slot encoders,
    causal attention blocks, and the POI scoring head."""

    def __init__(
        self,
        config: RecommenderConfig,
        vocab: TokenVocab,
        poi_table: PoiEmbeddingTable | None,
        seed: int = 0,
    ):
        self.config = config
        self.vocab = vocab
        d = config.model_dim
        rng = np.random.default_rng(np.random.SeedSequence(seed))

        self.token_table = ad.parameter(rng.normal(0.0, 0.02, (vocab.size, d)))
        self.pos_table = ad.parameter(rng.normal(0.0, 0.02, (config.max_positions, d)))
        self.blocks = [_Block(d, config.ff_mult * d, rng) for _ in range(config.n_blocks)]
        self.final_ln_g = ad.parameter(np.ones(d))
        self.final_ln_b = ad.parameter(np.zeros(d))
        n_poi = len(vocab.poi_ids)
        self.head_w = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(d), (d, n_poi)))
        self.head_b = ad.parameter(np.zeros(n_poi))

        self.geo: GeoEncoderParams | None = None
        self.gps_placeholder: Tensor | None = None
        if config.no_gcim:
            self.gps_placeholder = ad.parameter(rng.normal(0.0, 0.02, (d,)))
        else:
            self.geo = GeoEncoderParams(config.geo, rng)

        self.aligner: pam.PoiAlignerParams | None = None
        self.poi_source: Tensor | None = None
        self.poi_token_table: Tensor | None = None
        if config.no_pam:
            self.poi_token_table = ad.parameter(rng.normal(0.0, 0.02, (n_poi, d)))
        else:
            if poi_table is None:
                raise ValueError("Recommender: a transition-embedding table is required unless no_pam is set")
            if poi_table.poi_ids != vocab.poi_ids:
                table_index = {p: i for i, p in enumerate(poi_table.poi_ids)}
                missing = sorted(set(vocab.poi_ids) - set(table_index))
                if missing:
                    raise ValueError(f"transition table is missing POIs: {missing[:5]}...")
                order = [table_index[p] for p in vocab.poi_ids]
                poi_table = PoiEmbeddingTable(poi_table.vectors[order], list(vocab.poi_ids))
            if poi_table.dim != config.poi_dim:
                raise ValueError(f"transition table dim {poi_table.dim} vs config poi_dim {config.poi_dim}")
            self.poi_source = ad.constant(poi_table.vectors.copy())  # frozen e_i
            self.aligner = pam.PoiAlignerParams(config.poi_dim, d, rng)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        params = [self.token_table, self.pos_table]
        for blk in self.blocks:
            params.extend(blk.parameters())
        params.extend([self.final_ln_g, self.final_ln_b, self.head_w, self.head_b])
        if self.geo is not None:
            geo_params = self.geo.parameters()
            if self.config.no_fourier:  # zeroed branch: w_s never gets a gradient
                geo_params = [p for p in geo_params if p is not self.geo.w_s]
            params.extend(geo_params)
        if self.gps_placeholder is not None:
            params.append(self.gps_placeholder)
        if self.aligner is not None:
            params.extend(self.aligner.parameters())
        if self.poi_token_table is not None:
            params.append(self.poi_token_table)
        return params

    def transferable_parameters(self) -> list[Tensor]:
        """Geography and sequence machinery reused across cities."""
        params = [self.pos_table]
        for blk in self.blocks:
            params.extend(blk.parameters())
        params.extend([self.final_ln_g, self.final_ln_b])
        if self.geo is not None:
            params.extend(self.geo.parameters())
        return params

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = {
            MODEL_PREFIX + "token_table": self.token_table.values,
            MODEL_PREFIX + "pos_table": self.pos_table.values,
            MODEL_PREFIX + "final_ln_g": self.final_ln_g.values,
            MODEL_PREFIX + "final_ln_b": self.final_ln_b.values,
            MODEL_PREFIX + "head_w": self.head_w.values,
            MODEL_PREFIX + "head_b": self.head_b.values,
        }
        for i, blk in enumerate(self.blocks):
            arrays.update(blk.named_arrays(f"{MODEL_PREFIX}block{i}."))
        if self.geo is not None:
            arrays.update(self.geo.named_arrays())
        if self.gps_placeholder is not None:
            arrays[MODEL_PREFIX + "gps_placeholder"] = self.gps_placeholder.values
        if self.aligner is not None:
            arrays.update(self.aligner.named_arrays())
            arrays["poiemb.vectors"] = self.poi_source.values
        if self.poi_token_table is not None:
            arrays[MODEL_PREFIX + "poi_token_table"] = self.poi_token_table.values
        return arrays

    # -- forward ------------------------------------------------------------

    def _encode_gps_rows(self, coords: np.ndarray) -> Tensor:
        if self.geo is not None:
            return geoenc.encode_batch(coords[:, 0], coords[:, 1], self.geo,
                                       zero_fourier=self.config.no_fourier)
        d = self.config.model_dim
        return ad.broadcast_to(ad.reshape(self.gps_placeholder, (1, d)), (len(coords), d))

    def _align_poi_rows(self, poi_indices: np.ndarray) -> Tensor:
        if self.poi_token_table is not None:
            return ad.embedding_gather(self.poi_token_table, poi_indices)
        source = ad.embedding_gather(self.poi_source, poi_indices)
        return pam.align_batch(source, self.aligner)

    def hidden_states(self, seqs: list[PromptSequence]) -> Tensor:
        """Final-layer states, shape (B, T_max, D); sequences left-padded.

        Position ids stay right-aligned to the sequence end, so a
        sequence produces the same states alone or inside any batch.
        """
        cfg = self.config
        b = len(seqs)
        lengths = np.array([len(s) for s in seqs])
        t = int(lengths.max())
        pad = t - lengths

        token_ids = np.zeros((b, t), dtype=np.int64)  # PAD = 0
        pos_ids = np.zeros((b, t), dtype=np.int64)
        gps_flat, poi_flat = [], []
        coords_rows, poi_idx_rows = [], []
        for i, s in enumerate(seqs):
            token_ids[i, pad[i]:] = s.token_ids
            pos_ids[i, pad[i]:] = np.arange(cfg.max_positions - lengths[i], cfg.max_positions)
            gps_flat.append(i * t + pad[i] + s.gps_slots)
            poi_flat.append(i * t + pad[i] + s.poi_slots)
            coords_rows.append(s.coords)
            poi_idx_rows.append(s.poi_indices)
        gps_flat = np.concatenate(gps_flat)
        poi_flat = np.concatenate(poi_flat)
        coords = np.concatenate(coords_rows, axis=0)
        poi_indices = np.concatenate(poi_idx_rows, axis=0)

        d = cfg.model_dim
        emb = ad.embedding_gather(self.token_table, token_ids)  # (B, T, D)
        flat = ad.reshape(emb, (b * t, d))
        if len(gps_flat):
            flat = ad.scatter_rows(flat, gps_flat, self._encode_gps_rows(coords))
        if len(poi_flat):
            flat = ad.scatter_rows(flat, poi_flat, self._align_poi_rows(poi_indices))
        x = ad.reshape(flat, (b, t, d))
        x = ad.add(x, ad.embedding_gather(self.pos_table, pos_ids))

        mask = np.zeros((b, t, t))
        upper = np.triu(np.ones((t, t)), k=1).astype(bool)
        mask[:, upper] = MASK_VALUE
        for i in range(b):
            mask[i, :, : pad[i]] = MASK_VALUE
        mask_t = ad.constant(mask)

        for blk in self.blocks:
            x = blk.apply(x, mask_t, d)
        return ad.layer_norm(x, self.final_ln_g, self.final_ln_b)

    def forward_batch(self, seqs: list[PromptSequence]) -> Tensor:
        """Logits over the POI vocabulary at the final position, (B, |POI|)."""
        states = self.hidden_states(seqs)
        b, t, _ = states.shape
        last = ad.slice_(states, (slice(None), t - 1))  # (B, D)
        n_poi = self.head_b.shape[0]
        return ad.add(ad.matmul(last, self.head_w),
                      ad.broadcast_to(ad.reshape(self.head_b, (1, n_poi)), (b, n_poi)))

    def forward(self, seq: PromptSequence) -> Tensor:
        """Logits for one sequence, shape (|POI|,)."""
        out = self.forward_batch([seq])
        return ad.reshape(out, (self.head_b.shape[0],))

    def predict(self, seq: PromptSequence) -> np.ndarray:
        """POI indices ranked by descending logit; ties to lower index."""
        logits = self.forward(seq).values
        return np.argsort(-logits, kind="stable")

    # -- persistence ----------------------------------------------------------

    def save(self, dir_path: str) -> None:
        arrays = self.named_arrays()
        ckpt.save_arrays(dir_path, arrays)
        manifest = {
            "config": asdict(self.config),
            "vocab_hash": self.vocab.fingerprint(),
            "vocab": {
                "user_index": self.vocab.user_index,
                "category_index": self.vocab.category_index,
                "poi_ids": self.vocab.poi_ids,
                "time_buckets": self.vocab.time_buckets,
            },
            "prefixes": sorted({name.split(".")[0] + "." for name in arrays}),
        }
        ckpt.save_manifest(dir_path, manifest)

    @classmethod
    def load(cls, dir_path: str) -> "Recommender":
        manifest = ckpt.load_manifest(dir_path)
        config = RecommenderConfig(**manifest["config"])
        vocab = TokenVocab(
            user_index=dict(manifest["vocab"]["user_index"]),
            category_index=dict(manifest["vocab"]["category_index"]),
            poi_ids=list(manifest["vocab"]["poi_ids"]),
            time_buckets=int(manifest["vocab"]["time_buckets"]),
        )
        arrays = ckpt.load_arrays(dir_path)
        table = None
        if not config.no_pam:
            table = PoiEmbeddingTable(arrays["poiemb.vectors"], list(vocab.poi_ids))
        model = cls(config, vocab, table, seed=0)
        model.token_table.values = arrays[MODEL_PREFIX + "token_table"].copy()
        model.pos_table.values = arrays[MODEL_PREFIX + "pos_table"].copy()
        model.final_ln_g.values = arrays[MODEL_PREFIX + "final_ln_g"].copy()
        model.final_ln_b.values = arrays[MODEL_PREFIX + "final_ln_b"].copy()
        model.head_w.values = arrays[MODEL_PREFIX + "head_w"].copy()
        model.head_b.values = arrays[MODEL_PREFIX + "head_b"].copy()
        for i, blk in enumerate(model.blocks):
            blk.load_arrays(f"{MODEL_PREFIX}block{i}.", arrays)
        if model.geo is not None:
            model.geo.load_arrays(arrays)
        if model.gps_placeholder is not None:
            model.gps_placeholder.values = arrays[MODEL_PREFIX + "gps_placeholder"].copy()
        if model.aligner is not None:
            model.aligner.load_arrays(arrays)
        if model.poi_token_table is not None:
            model.poi_token_table.values = arrays[MODEL_PREFIX + "poi_token_table"].copy()
        return model


@dataclass
class TrainResult:
    model: Recommender
    train_losses: list[float]
    val_accs: list[float]
    best_epoch: int


def prompts_for_samples(split: DatasetSplit, samples, vocab: TokenVocab,
                        max_events: int) -> list[PromptSequence]:
    return [
        build_prompt(split.prefix(s, limit=max_events), split.target(s), vocab,
                     max_events=max_events, sample_id=s.sample_id)
        for s in samples
    ]


def accuracy_at_1(model: Recommender, prompts: list[PromptSequence], batch_size: int = 64) -> float:
    if not prompts:
        return 0.0
    hits = 0
    for start in range(0, len(prompts), batch_size):
        chunk = prompts[start : start + batch_size]
        logits = model.forward_batch(chunk).values
        top1 = np.argmax(logits, axis=1)
        hits += sum(int(top1[i] == chunk[i].target_index) for i in range(len(chunk)))
    return hits / len(prompts)


def train_recommender(
    split: DatasetSplit,
    config: RecommenderConfig,
    seed: int = 0,
    poi_table: PoiEmbeddingTable | None = None,
    model: Recommender | None = None,
    trainable: list[Tensor] | None = None,
) -> TrainResult:
    """Train on the split's train samples with early stopping on val Acc@1.

    Deterministic under (split, config, seed): parameter init, data order
    and embedding pre-training draw from fixed child seeds. Pass `model`
    and `trainable` to fine-tune a subset (cross-city transfer).
    """
    if not split.train:
        raise ValueError("train_recommender: empty train split")
    ss = np.random.SeedSequence(seed)
    s_init, s_data, s_emb = [int(c.generate_state(1)[0]) for c in ss.spawn(3)]

    vocab = model.vocab if model is not None else TokenVocab.from_split(split, config.time_buckets)
    if model is None:
        if poi_table is None and not config.no_pam:
            poi_table = embeddings_for_split(split, dim=config.poi_dim, seed=s_emb)
        model = Recommender(config, vocab, poi_table, seed=s_init)
    params = trainable if trainable is not None else model.parameters()

    train_prompts = prompts_for_samples(split, split.train, vocab, config.max_events)
    val_prompts = prompts_for_samples(split, split.val, vocab, config.max_events)

    opt = ad.AdamState(params, lr=config.lr)
    rng_data = np.random.default_rng(s_data)
    best_acc = -1.0
    best_epoch = -1
    best_values: list[np.ndarray] | None = None
    bad_epochs = 0
    train_losses: list[float] = []
    val_accs: list[float] = []

    for epoch in range(config.max_epochs):
        order = rng_data.permutation(len(train_prompts))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_prompts[i] for i in order[start : start + config.batch_size]]
            targets = np.array([p.target_index for p in batch], dtype=np.int64)
            with ad.Tape() as tape:
                logits = model.forward_batch(batch)
                loss = ad.mean(ad.cross_entropy_logits(logits, targets))
                tape.backward(loss)
            epoch_loss += float(loss.values) * len(batch)
            ad.adam_step(params, opt)
        train_losses.append(epoch_loss / len(train_prompts))

        if val_prompts:
            acc = accuracy_at_1(model, val_prompts)
            val_accs.append(acc)
            if acc > best_acc:
                best_acc = acc
                best_epoch = epoch
                best_values = [p.values.copy() for p in params]
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break

    if best_values is not None:
        for p, v in zip(params, best_values):
            p.values = v
    else:
        best_epoch = config.max_epochs - 1
    return TrainResult(model=model, train_losses=train_losses, val_accs=val_accs,
                       best_epoch=best_epoch)
