"""Command line interface: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .core import (
    ConfigError,
    CovarianceKind,
    FeatureMatrix,
    LoadError,
    NumericalError,
    PipelineConfig,
    load_features,
    load_labels,
    save_features,
)
from .embed import build_affinity, embed_pipeline, normalized_laplacian, spectral_embed
from .gmm import gmm_assign, gmm_fit
from .optics import extract_xi_clusters, optics_order

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

_CONFIG_KEYS = {f.name for f in dataclasses.fields(PipelineConfig)}


def _digest(path: str) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(subcommand: str, cfg: PipelineConfig | None, inputs: dict) -> dict:
    return {
        "subcommand": subcommand,
        "tool_version": __version__,
        "seed": cfg.seed if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "inputs": {name: _digest(path) for name, path in inputs.items() if path},
    }


def load_config(path: str | None, overrides: dict) -> PipelineConfig:
    """Merge a TOML config file with command-line overrides (flags win)."""
    values: dict = {}
    if path:
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            try:
                values = tomllib.load(fh)
            except Exception as exc:  # noqa: BLE001
                raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
        unknown = set(values) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML file with pipeline hyper-parameters")
    p.add_argument("--knn", type=int)
    p.add_argument("--gamma", type=int)
    p.add_argument("--k-eigen", dest="k_eigen", type=int)
    p.add_argument(
        "--optics-neighborhoods",
        dest="optics_neighborhoods",
        type=lambda s: tuple(int(v) for v in s.split(",")),
        help="comma-separated, strictly decreasing neighborhood sizes",
    )
    p.add_argument("--min-cluster-size", dest="min_cluster_size", type=int)
    p.add_argument("--xi", type=float)
    p.add_argument(
        "--covariance",
        dest="covariance_kind",
        choices=["full", "spherical"],
    )
    p.add_argument("--tau1", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--mixup-alpha", dest="mixup_alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--no-normalize",
        dest="normalize_features",
        action="store_false",
        default=None,
    )


def _config_from_args(args) -> PipelineConfig:
    overrides = {
        k: getattr(args, k, None)
        for k in _CONFIG_KEYS
        if getattr(args, k, None) is not None
    }
    return load_config(getattr(args, "config", None), overrides)


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("SNCF_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sncf",
        description="Detect in-distribution noisy and out-of-distribution "
        "samples in a labeled feature dataset.",
    )
    parser.add_argument("--threads", type=int, help="worker thread count")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("embed", help="spectral embedding of a feature matrix")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    _add_config_flags(p)

    p = sub.add_parser("optics", help="reachability ordering and xi clusters")
    p.add_argument("--points", required=True)
    p.add_argument("--min-pts", dest="min_pts", type=int, required=True)
    p.add_argument("--xi", type=float, default=0.01)
    p.add_argument("--min-cluster-size", dest="min_cluster_size", type=int, default=75)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("gmm", help="2-component Gaussian mixture fit")
    p.add_argument("--points", required=True)
    p.add_argument("--covariance", choices=["full", "spherical"], default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix")

    p = sub.add_parser("detect", help="full noise detection pipeline")
    p.add_argument("--features", required=True)
    p.add_argument("--labels")
    p.add_argument("--mode", choices=["per-class", "dataset-gmm"], default="per-class")
    p.add_argument("--out-report", dest="out_report", required=True)
    p.add_argument("--out-verdicts", dest="out_verdicts", required=True)
    p.add_argument("--out-embedding", dest="out_embedding")
    _add_config_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic corrupted dataset")
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--classes", dest="n_classes", type=int, default=10)
    p.add_argument("--n-per-class", dest="n_per_class", type=int, default=500)
    p.add_argument("--r-in", dest="r_in", type=float, default=0.2)
    p.add_argument("--r-out", dest="r_out", type=float, default=0.2)
    p.add_argument("--kappa-id", dest="kappa_id", type=float, default=600.0)
    p.add_argument("--kappa-ood", dest="kappa_ood", type=float, default=20.0)
    p.add_argument("--ood-modes", dest="ood_modes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-features", dest="out_features", required=True)
    p.add_argument("--out-labels", dest="out_labels", required=True)
    p.add_argument("--out-truth", dest="out_truth", required=True)

    p = sub.add_parser("probe", help="ID/OOD linear separability score")
    p.add_argument("--features", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--seed", type=int, default=0)

    sub.add_parser(
        "losses-check",
        help="finite-difference and identity self-test of the loss functions",
    )
    return parser


def _cmd_embed(args) -> int:
    cfg = _config_from_args(args)
    feats = load_features(args.features)
    emb = embed_pipeline(feats, cfg)
    np.save(args.out + ".npy", emb.coords.astype("<f4"))
    np.savetxt(args.out + ".eigenvalues.csv", emb.eigenvalues, delimiter=",", fmt="%.12g")
    report = _manifest("embed", cfg, {"features": args.features})
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    return EXIT_OK


def _cmd_optics(args) -> int:
    feats = load_features(args.points)
    ordering = optics_order(feats.data, args.min_pts)
    extraction = extract_xi_clusters(ordering, args.xi, args.min_cluster_size)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("position,index,reachability,membership\n")
        for pos, idx in enumerate(ordering.order):
            r = ordering.reachability[idx]
            rtxt = "inf" if np.isinf(r) else f"{r:.12g}"
            fh.write(f"{pos},{idx},{rtxt},{extraction.membership[idx]}\n")
    print(
        f"clusters={len(extraction.clusters)} outliers={extraction.outlier_count}"
    )
    return EXIT_OK


def _cmd_gmm(args) -> int:
    feats = load_features(args.points)
    kind = CovarianceKind(args.covariance)
    model = gmm_fit(feats.data, kind, args.seed)
    ids, resp = gmm_assign(model, feats.data)
    payload = {
        "manifest": _manifest("gmm", None, {"points": args.points}) | {"seed": args.seed},
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "covariances": model.covariances.tolist(),
        "kind": model.kind.value,
        "log_likelihood": model.log_likelihood,
        "degenerate": model.degenerate,
    }
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    with open(args.out + ".assignments.csv", "w", encoding="utf-8") as fh:
        fh.write("index,component,resp0,resp1\n")
        for i, (c, r) in enumerate(zip(ids, resp)):
            fh.write(f"{i},{c},{r[0]:.12g},{r[1]:.12g}\n")
    return EXIT_OK


def _cmd_detect(args) -> int:
    from .detect import _prepare, detect_dataset_gmm, detect_per_class

    cfg = _config_from_args(args)
    feats = load_features(args.features)
    feats, embedding = _prepare(feats, cfg)
    if args.mode == "per-class":
        if not args.labels:
            raise ConfigError("--mode per-class requires --labels")
        labels = load_labels(args.labels, n_expected=feats.n)
        report = detect_per_class(
            feats, labels, cfg, n_threads=_threads(args), embedding=embedding
        )
    else:
        report = detect_dataset_gmm(feats, cfg, embedding=embedding)
    payload = report.to_dict()
    payload["manifest"] = _manifest(
        "detect", cfg, {"features": args.features, "labels": args.labels}
    )
    with open(args.out_report, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    with open(args.out_verdicts, "w", encoding="utf-8") as fh:
        fh.write("index,kind,ood_group\n")
        for v in payload["verdicts"]:
            fh.write(f"{v['index']},{v['kind']},{v['ood_group']}\n")
    if args.out_embedding:
        np.save(args.out_embedding, embedding.coords.astype("<f4"))
    counts = report.counts
    print(
        f"clean={counts['clean']} id_noisy={counts['id_noisy']} "
        f"ood={counts['ood']} ood_groups={report.ood_group_count}"
    )
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .core import save_labels
    from .synth import SynthSpec, generate

    spec = SynthSpec(
        d=args.d,
        n_classes=args.n_classes,
        n_per_class=args.n_per_class,
        r_in=args.r_in,
        r_out=args.r_out,
        kappa_id=args.kappa_id,
        kappa_ood=args.kappa_ood,
        ood_modes=args.ood_modes,
        seed=args.seed,
    )
    ds = generate(spec)
    save_features(ds.features, args.out_features)
    save_labels(ds.observed_labels, args.out_labels)
    with open(args.out_truth, "w", encoding="utf-8") as fh:
        fh.write("index,kind,group\n")
        for i, (k, g) in enumerate(zip(ds.truth_kind, ds.truth_group)):
            fh.write(f"{i},{k},{g}\n")
    return EXIT_OK


def _load_truth(path: str) -> tuple[np.ndarray, np.ndarray]:
    kinds, groups = [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "index,kind,group":
            raise LoadError(f"{path}: expected header 'index,kind,group'")
        for line in fh:
            _, k, g = line.strip().split(",")
            kinds.append(int(k))
            groups.append(int(g))
    return np.array(kinds, dtype=np.int64), np.array(groups, dtype=np.int64)


def _cmd_probe(args) -> int:
    from .synth import TRUTH_OOD, linear_probe

    feats = load_features(args.features)
    kinds, _ = _load_truth(args.truth)
    acc = linear_probe(feats, kinds == TRUTH_OOD, args.seed)
    print(f"{acc:.6f}")
    return EXIT_OK


def _cmd_losses_check(args) -> int:
    from .selfcheck import run_losses_check

    max_err, failures = run_losses_check()
    print(f"max finite-difference relative error: {max_err:.3e}")
    if failures:
        for f in failures:
            print(f"error: {f}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


_COMMANDS = {
    "embed": _cmd_embed,
    "optics": _cmd_optics,
    "gmm": _cmd_gmm,
    "detect": _cmd_detect,
    "synth": _cmd_synth,
    "probe": _cmd_probe,
    "losses-check": _cmd_losses_check,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    start = time.monotonic()
    try:
        code = _COMMANDS[args.subcommand](args)
    except (ConfigError, LoadError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    # wall-clock goes to the log stream, never into report files: report
    # bytes must be identical across runs at a fixed seed
    print(
        f"{args.subcommand}: {time.monotonic() - start:.2f}s", file=sys.stderr
    )
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
