"""Text config files: one `key=value` per line, '#' comments.

Keys cover every tunable default: encoder dims (level, ngram_n,
gram_dim, key_dim, fourier_dim, fourier_scale, normalize_digits),
recommender dims and training knobs (model_dim, n_blocks, ff_mult,
max_events, time_buckets, poi_dim, lr, batch_size, max_epochs,
patience), transition-embedding knobs (emb_dim, emb_negatives,
emb_epochs, emb_lr, emb_window) and ingestion knobs (min_count,
session_gap_hours, train_ratio, val_ratio, test_ratio).
"""
from __future__ import annotations

import dataclasses

from .geoenc import GeoEncoderConfig
from .model import RecommenderConfig

GEO_FIELDS = {f.name: f.type for f in dataclasses.fields(GeoEncoderConfig)}
REC_FIELDS = {f.name: f.type for f in dataclasses.fields(RecommenderConfig) if f.name != "geo"}

INGEST_DEFAULTS = {
    "min_count": 10,
    "session_gap_hours": 24.0,
    "train_ratio": 0.8,
    "val_ratio": 0.1,
    "test_ratio": 0.1,
}
EMB_DEFAULTS = {
    "emb_dim": 128,
    "emb_negatives": 5,
    "emb_epochs": 5,
    "emb_lr": 0.05,
    "emb_window": 1,
}


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"expected boolean, got {value!r}")
    return type(like)(value)


def recommender_config(mapping: dict[str, str] | None = None, **overrides) -> RecommenderConfig:
    """Build a RecommenderConfig from flat key=value pairs plus overrides."""
    mapping = dict(mapping or {})
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    geo_kwargs, rec_kwargs = {}, {}
    defaults_geo = GeoEncoderConfig()
    defaults_rec = RecommenderConfig()
    for key, value in mapping.items():
        if key in GEO_FIELDS:
            geo_kwargs[key] = value if not isinstance(value, str) else _coerce(value, getattr(defaults_geo, key))
        elif key in REC_FIELDS:
            rec_kwargs[key] = value if not isinstance(value, str) else _coerce(value, getattr(defaults_rec, key))
        elif key in INGEST_DEFAULTS or key in EMB_DEFAULTS:
            continue  # consumed by ingest / embed-transitions
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg = RecommenderConfig(**rec_kwargs)
    if geo_kwargs:
        merged = {**dataclasses.asdict(cfg.geo), **geo_kwargs}
        cfg.geo = GeoEncoderConfig(**merged)
        cfg.geo.out_dim = cfg.model_dim
    return cfg


def scalar_option(mapping: dict[str, str], key: str, override=None):
    """Resolve ingest/embedding options: override > config file > default."""
    defaults = {**INGEST_DEFAULTS, **EMB_DEFAULTS}
    if key not in defaults:
        raise KeyError(key)
    if override is not None:
        return override
    if key in mapping:
        return _coerce(mapping[key], defaults[key])
    return defaults[key]
