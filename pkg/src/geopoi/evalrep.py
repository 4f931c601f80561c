"""Evaluation metrics and experiment protocols.

Acc@1 over test samples; error-distance statistics (mean/median/CDF of
great-circle distance between wrong top-1 predictions and the ground
truth) computed over incorrect predictions only; target-absent accuracy
over samples whose ground truth does not occur in the prompt prefix,
reported under both normalizations. Protocols: ablation sweeps and
cross-city transfer with frozen geography/attention weights.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkins import DatasetSplit
from .geocode import haversine_km
from .model import (
    Recommender,
    RecommenderConfig,
    TokenVocab,
    TrainResult,
    prompts_for_samples,
    train_recommender,
)
from .poiemb import PoiEmbeddingTable, embeddings_for_split


@dataclass
class PredictionRecord:
    sample_id: int
    target_index: int
    top1_index: int
    correct: bool
    error_km: float | None
    target_absent: bool


@dataclass
class EvalReport:
    acc_at_1: float
    sample_count: int
    mean_error_km: float | None
    median_error_km: float | None
    cdf: list[tuple[float, float]]
    target_absent_acc: float | None          # correct absent / absent
    target_absent_correct_over_all: float    # correct absent / all samples
    target_absent_count: int
    config_fingerprint: str
    predictions: list[PredictionRecord] | None = field(default=None, repr=False)


class VocabMismatchError(ValueError):
    pass


def _check_vocab(model: Recommender, split: DatasetSplit) -> None:
    model_pois = model.vocab.poi_ids
    split_pois = split.poi_vocab.ids
    if model_pois != split_pois:
        only_model = sorted(set(model_pois) - set(split_pois))[:10]
        only_split = sorted(set(split_pois) - set(model_pois))[:10]
        raise VocabMismatchError(
            "POI vocabularies differ between checkpoint and split; "
            f"only in checkpoint: {only_model}; only in split: {only_split}"
        )


def build_report(
    records: list[PredictionRecord],
    config_fingerprint: str,
    keep_predictions: bool = False,
) -> EvalReport:
    """Aggregate per-sample prediction records into an EvalReport."""
    n = len(records)
    correct = sum(r.correct for r in records)
    errors = sorted(r.error_km for r in records if r.error_km is not None)
    absent = [r for r in records if r.target_absent]
    absent_correct = sum(r.correct for r in absent)
    cdf = [(d, (i + 1) / len(errors)) for i, d in enumerate(errors)]
    return EvalReport(
        acc_at_1=correct / n if n else 0.0,
        sample_count=n,
        mean_error_km=float(np.mean(errors)) if errors else None,
        median_error_km=float(np.median(errors)) if errors else None,
        cdf=cdf,
        target_absent_acc=absent_correct / len(absent) if absent else None,
        target_absent_correct_over_all=absent_correct / n if n else 0.0,
        target_absent_count=len(absent),
        config_fingerprint=config_fingerprint,
        predictions=records if keep_predictions else None,
    )


def model_fingerprint(model: Recommender) -> str:
    payload = json.dumps(asdict(model.config), sort_keys=True) + model.vocab.fingerprint()
    return hashlib.sha256(payload.encode()).hexdigest()


def evaluate(
    model: Recommender,
    split: DatasetSplit,
    samples=None,
    keep_predictions: bool = False,
    batch_size: int = 64,
) -> EvalReport:
    """Score `samples` (default: the split's test portion)."""
    _check_vocab(model, split)
    if samples is None:
        samples = split.test
    prompts = prompts_for_samples(split, samples, model.vocab, model.config.max_events)
    records: list[PredictionRecord] = []
    for start in range(0, len(prompts), batch_size):
        chunk = prompts[start : start + batch_size]
        logits = model.forward_batch(chunk).values
        top1 = np.argmax(logits, axis=1)
        for i, p in enumerate(chunk):
            pred = int(top1[i])
            correct = pred == p.target_index
            error = None
            if not correct:
                error = haversine_km(
                    tuple(split.poi_coords[pred]), tuple(split.poi_coords[p.target_index])
                )
            records.append(
                PredictionRecord(
                    sample_id=p.sample_id,
                    target_index=p.target_index,
                    top1_index=pred,
                    correct=correct,
                    error_km=error,
                    target_absent=p.target_index not in p.poi_indices,
                )
            )
    return build_report(records, model_fingerprint(model), keep_predictions=keep_predictions)


# -- protocols ----------------------------------------------------------------

ABLATION_VARIANTS = ("full", "no_gcim", "no_fourier", "no_pam")


def _variant_config(config: RecommenderConfig, variant: str) -> RecommenderConfig:
    cfg = RecommenderConfig(**{**asdict(config), "no_gcim": False, "no_fourier": False, "no_pam": False})
    if variant != "full":
        setattr(cfg, variant, True)
    return cfg


@dataclass
class AblationTable:
    variants: list[str]
    seeds: list[int]
    acc: dict[str, dict[int, float]]          # variant -> seed -> Acc@1
    reports: dict[str, dict[int, EvalReport]]

    def mean_acc(self, variant: str) -> float:
        return float(np.mean([self.acc[variant][s] for s in self.seeds]))


def run_ablations(
    split: DatasetSplit,
    seeds: list[int],
    config: RecommenderConfig,
) -> AblationTable:
    """Train and evaluate every ablation variant for every seed.

    Data order is identical across variants for a given seed (it draws
    from a child seed that does not depend on the ablation flags).
    """
    if not seeds:
        raise ValueError("run_ablations: need at least one seed")
    acc: dict[str, dict[int, float]] = {v: {} for v in ABLATION_VARIANTS}
    reports: dict[str, dict[int, EvalReport]] = {v: {} for v in ABLATION_VARIANTS}
    for seed in seeds:
        s_emb = int(np.random.SeedSequence(seed).spawn(3)[2].generate_state(1)[0])
        table = embeddings_for_split(split, dim=config.poi_dim, seed=s_emb)
        for variant in ABLATION_VARIANTS:
            cfg = _variant_config(config, variant)
            result = train_recommender(split, cfg, seed=seed, poi_table=table)
            report = evaluate(result.model, split)
            acc[variant][seed] = report.acc_at_1
            reports[variant][seed] = report
    return AblationTable(list(ABLATION_VARIANTS), list(seeds), acc, reports)


def cross_city(
    train_split: DatasetSplit,
    eval_split: DatasetSplit,
    config: RecommenderConfig,
    seed: int = 0,
) -> EvalReport:
    """Train on city A, transfer to city B, and score B's test split.

    Geography-encoder and attention-block weights transfer frozen; the
    token table, scoring head and alignment projector (over city B's own
    transition embeddings) are freshly initialized and trained on B.
    Identical splits reduce to the standard train-and-evaluate path.
    """
    result_a = train_recommender(train_split, config, seed=seed)
    if eval_split is train_split or eval_split.poi_vocab.ids == train_split.poi_vocab.ids:
        return evaluate(result_a.model, eval_split)

    ss = np.random.SeedSequence([seed, 0xB])
    s_init, s_emb = [int(c.generate_state(1)[0]) for c in ss.spawn(2)]
    table_b = None
    if not config.no_pam:
        table_b = embeddings_for_split(eval_split, dim=config.poi_dim, seed=s_emb)
    vocab_b = TokenVocab.from_split(eval_split, config.time_buckets)
    model_b = Recommender(config, vocab_b, table_b, seed=s_init)

    frozen = model_b.transferable_parameters()
    for dst, src in zip(frozen, result_a.model.transferable_parameters()):
        dst.values = src.values.copy()
    frozen_ids = {id(p) for p in frozen}
    trainable = [p for p in model_b.parameters() if id(p) not in frozen_ids]
    train_recommender(eval_split, config, seed=seed, model=model_b, trainable=trainable)
    return evaluate(model_b, eval_split)


def cross_city_matrix(
    named_splits: dict[str, DatasetSplit],
    config: RecommenderConfig,
    seed: int = 0,
) -> list[tuple[str, str, float]]:
    """Acc@1 for every ordered (train city, eval city) pair."""
    rows = []
    for a in named_splits:
        for b in named_splits:
            report = cross_city(named_splits[a], named_splits[b], config, seed=seed)
            rows.append((a, b, report.acc_at_1))
    return rows


# -- report persistence ---------------------------------------------------------


def report_to_dict(report: EvalReport) -> dict:
    d = asdict(report)
    d["cdf"] = [[float(x), float(f)] for x, f in report.cdf]
    return d


def report_from_dict(d: dict) -> EvalReport:
    preds = d.get("predictions")
    return EvalReport(
        acc_at_1=d["acc_at_1"],
        sample_count=d["sample_count"],
        mean_error_km=d["mean_error_km"],
        median_error_km=d["median_error_km"],
        cdf=[(float(x), float(f)) for x, f in d["cdf"]],
        target_absent_acc=d["target_absent_acc"],
        target_absent_correct_over_all=d["target_absent_correct_over_all"],
        target_absent_count=d["target_absent_count"],
        config_fingerprint=d["config_fingerprint"],
        predictions=[PredictionRecord(**p) for p in preds] if preds else None,
    )


def save_report(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_to_dict(report), f, indent=2, sort_keys=True)
        f.write("\n")


def load_report(path: str) -> EvalReport:
    with open(path, encoding="utf-8") as f:
        return report_from_dict(json.load(f))


METRIC_FIELDS = [
    "acc_at_1",
    "sample_count",
    "mean_error_km",
    "median_error_km",
    "target_absent_acc",
    "target_absent_correct_over_all",
    "target_absent_count",
    "config_fingerprint",
]


def export_report(report: EvalReport, path: str, kind: str) -> None:
    """Write a report as CSV: `metrics-csv` (name,value rows) or
    `cdf-csv` (distance_km,cumulative_fraction rows, ascending)."""
    if kind == "metrics-csv":
        with open(path, "w", encoding="utf-8") as f:
            f.write("name,value\n")
            for name in METRIC_FIELDS:
                value = getattr(report, name)
                f.write(f"{name},{'' if value is None else repr(value) if isinstance(value, float) else value}\n")
    elif kind == "cdf-csv":
        with open(path, "w", encoding="utf-8") as f:
            f.write("distance_km,cumulative_fraction\n")
            for d, frac in report.cdf:
                f.write(f"{d!r},{frac!r}\n")
    else:
        raise ValueError(f"unknown report kind {kind!r}")


def read_metrics_csv(path: str) -> dict[str, float | str | None]:
    out: dict[str, float | str | None] = {}
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != "name,value":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            name, value = line.rstrip("\n").split(",", 1)
            if value == "":
                out[name] = None
            else:
                try:
                    out[name] = float(value)
                except ValueError:
                    out[name] = value
    return out


def read_cdf_csv(path: str) -> list[tuple[float, float]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != "distance_km,cumulative_fraction":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            d, frac = line.rstrip("\n").split(",")
            rows.append((float(d), float(frac)))
    return rows
