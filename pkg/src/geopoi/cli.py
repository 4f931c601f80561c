"""Command-line surface.

Subcommands: ingest, embed-transitions, train, evaluate, cross-city,
ablate, encode-gps, report. Logs go to stderr; machine-readable output
goes to files or stdout. Exit code 0 on success, nonzero on any error.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import checkins, config as cfgmod, evalrep, poiemb, synth
from .geocode import ngrams, project, quadkey
from .model import Recommender, train_recommender


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config_mapping(path: str | None) -> dict[str, str]:
    return cfgmod.parse_config_file(path) if path else {}


def _write_or_stdout(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_ingest(args) -> int:
    mapping = _load_config_mapping(args.config)
    min_count = int(cfgmod.scalar_option(mapping, "min_count", args.min_count))
    gap = float(cfgmod.scalar_option(mapping, "session_gap_hours", args.session_gap_hours))
    ratios = (
        float(cfgmod.scalar_option(mapping, "train_ratio")),
        float(cfgmod.scalar_option(mapping, "val_ratio")),
        float(cfgmod.scalar_option(mapping, "test_ratio")),
    )
    rows, skipped = checkins.parse_checkins(args.input, args.format)
    _log(f"parsed {len(rows)} check-ins ({skipped} skipped)")
    rows = checkins.filter_sparse(rows, min_count=min_count)
    _log(f"{len(rows)} check-ins after sparsity filtering (min_count={min_count})")
    trajectories = checkins.build_trajectories(rows, session_gap_hours=gap)
    split = checkins.split_chronological(trajectories, ratios=ratios, session_gap_hours=gap)
    checkins.save_split(split, args.out)
    _log(
        f"wrote split to {args.out}: {len(split.train)} train / {len(split.val)} val / "
        f"{len(split.test)} test samples, {len(split.poi_vocab)} POIs, "
        f"{len(split.user_vocab)} users"
    )
    return 0


def cmd_embed_transitions(args) -> int:
    mapping = _load_config_mapping(args.config)
    split = checkins.load_split(args.data)
    table = poiemb.embeddings_for_split(
        split,
        dim=int(cfgmod.scalar_option(mapping, "emb_dim", args.dim)),
        negatives=int(cfgmod.scalar_option(mapping, "emb_negatives", args.negatives)),
        epochs=int(cfgmod.scalar_option(mapping, "emb_epochs", args.epochs)),
        lr=float(cfgmod.scalar_option(mapping, "emb_lr", args.lr)),
        window=int(cfgmod.scalar_option(mapping, "emb_window", args.window)),
        seed=args.seed,
    )
    poiemb.save_table(table, args.out)
    losses = ", ".join(f"{x:.4f}" for x in table.train_losses)
    _log(f"trained {table.vectors.shape} transition embeddings; per-epoch loss: {losses}")
    return 0


def cmd_train(args) -> int:
    mapping = _load_config_mapping(args.config)
    cfg = cfgmod.recommender_config(
        mapping, no_gcim=args.no_gcim or None, no_fourier=args.no_fourier or None,
        no_pam=args.no_pam or None,
    )
    split = checkins.load_split(args.data)
    table = poiemb.load_table(args.embeddings) if args.embeddings else None
    result = train_recommender(split, cfg, seed=args.seed, poi_table=table)
    result.model.save(args.out)
    _log(f"train losses: {', '.join(f'{x:.4f}' for x in result.train_losses)}")
    if result.val_accs:
        _log(f"val Acc@1 per epoch: {', '.join(f'{x:.4f}' for x in result.val_accs)}")
        _log(f"best epoch: {result.best_epoch}")
    _log(f"saved checkpoint to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    model = Recommender.load(args.ckpt)
    split = checkins.load_split(args.data)
    report = evalrep.evaluate(model, split)
    _log(
        f"Acc@1 {report.acc_at_1:.4f} over {report.sample_count} samples; "
        f"mean error {report.mean_error_km} km"
    )
    if args.out:
        evalrep.save_report(report, args.out)
        _log(f"wrote report to {args.out}")
    else:
        import json

        sys.stdout.write(json.dumps(evalrep.report_to_dict(report), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_cross_city(args) -> int:
    mapping = _load_config_mapping(args.config)
    cfg = cfgmod.recommender_config(mapping)
    named = {}
    for spec in args.datasets:
        if "=" not in spec:
            raise ValueError(f"--datasets entries must be NAME=DIR, got {spec!r}")
        name, path = spec.split("=", 1)
        named[name] = checkins.load_split(path)
    rows = evalrep.cross_city_matrix(named, cfg, seed=args.seed)
    lines = ["train_city,eval_city,acc_at_1"]
    lines += [f"{a},{b},{acc!r}" for a, b, acc in rows]
    _write_or_stdout("\n".join(lines) + "\n", args.out)
    return 0


def cmd_ablate(args) -> int:
    mapping = _load_config_mapping(args.config)
    cfg = cfgmod.recommender_config(mapping)
    split = checkins.load_split(args.data)
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    table = evalrep.run_ablations(split, seeds, cfg)
    header = "variant," + ",".join(f"seed_{s}" for s in seeds) + ",mean"
    lines = [header]
    for variant in table.variants:
        cells = [repr(table.acc[variant][s]) for s in seeds]
        lines.append(f"{variant},{','.join(cells)},{table.mean_acc(variant)!r}")
    _write_or_stdout("\n".join(lines) + "\n", args.out)
    return 0


def cmd_encode_gps(args) -> int:
    pos = project(args.lat, args.lon, args.level)
    key = quadkey(pos)
    grams = ngrams(key, args.ngrams)
    fields = [repr(pos.x), repr(pos.y), str(pos.tile_x), str(pos.tile_y),
              key.digits, ",".join(grams.grams)]
    sys.stdout.write("\t".join(fields) + "\n")
    return 0


def cmd_report(args) -> int:
    report = evalrep.load_report(args.infile)
    evalrep.export_report(report, args.out, args.kind)
    _log(f"wrote {args.kind} to {args.out}")
    return 0


def cmd_synth(args) -> int:
    if args.kind == "cycle":
        rows = synth.cycle_checkins(seed=args.seed)
    else:
        rows = synth.geo_cluster_checkins(seed=args.seed)
    checkins.write_checkins(args.out, rows)
    _log(f"wrote {len(rows)} synthetic check-ins to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geopoi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, filter, and split a check-in file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["canonical", "foursquare-raw"], default="canonical")
    p.add_argument("--out", required=True)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--session-gap-hours", type=float, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed-transitions", help="train POI transition embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.set_defaults(func=cmd_embed_transitions)

    p = sub.add_parser("train", help="train the recommender")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", default=None, help="externally trained table directory")
    p.add_argument("--no-gcim", action="store_true")
    p.add_argument("--no-fourier", action="store_true")
    p.add_argument("--no-pam", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split's test samples")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cross-city", help="transfer evaluation over ordered city pairs")
    p.add_argument("--datasets", nargs="+", required=True, metavar="NAME=DIR")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_cross_city)

    p = sub.add_parser("ablate", help="run the ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("encode-gps", help="print pixel/tile/quadkey/grams for a coordinate")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--level", type=int, default=25)
    p.add_argument("--ngrams", type=int, default=3)
    p.set_defaults(func=cmd_encode_gps)

    p = sub.add_parser("report", help="export a saved report as CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--kind", choices=["metrics-csv", "cdf-csv"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic check-in file")
    p.add_argument("--kind", choices=["cycle", "geo-cluster"], default="cycle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for sp in sub.choices.values():
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None, help="key=value config file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
