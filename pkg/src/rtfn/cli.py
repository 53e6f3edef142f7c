"""``rtfn`` command line: train, cluster, gradcheck, report.

Exit codes: 0 ok, 2 config error, 3 data error, 4 non-finite loss,
5 gradient check failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

import rtfn
from rtfn import clustering, data, gradcheck, model, training
from rtfn.tensor import make_rng

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5

MANIFEST_NAME = "manifest.json"
LOSS_NAME = "loss.csv"
CHECKPOINT_NAME = "checkpoint.rtfn"


class ConfigError(ValueError):
    pass


# Run-level keys, beyond the RtfnConfig and TrainConfig fields.
RUN_KEYS = {
    "name": str,  # algorithm label used by `report`
    "dataset": str,
    "format": str,  # ucr | multivariate | synthetic
    "synthetic_kind": str,
    "synthetic_n": int,
    "synthetic_length": int,
    "normalize": bool,
    "clusters": int,  # 0 means the dataset's class count
    "cluster_split": str,  # train | test | all
}
RUN_DEFAULTS = {
    "name": "RTFN",
    "dataset": "",
    "format": "ucr",
    "synthetic_kind": "separable",
    "synthetic_n": 16,
    "synthetic_length": 64,
    "normalize": True,
    "clusters": 0,
    "cluster_split": "all",
}
# Derived from the data, never read from a config file.
_DERIVED = {"num_classes", "input_channels", "series_length"}


def _field_types(cls):
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls)}


def _convert(key, raw, typ):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is tuple:
            return tuple(int(t) for t in raw.split(",") if t.strip())
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}") from None


def parse_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Unknown or repeated keys are errors."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror or err}") from None
    types = {**RUN_KEYS}
    types.update({k: v for k, v in _field_types(model.RtfnConfig).items() if k not in _DERIVED})
    types.update(_field_types(training.TrainConfig))
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: key {key!r} given twice")
        out[key] = _convert(key, raw, types[key])
    return out


@dataclasses.dataclass
class RunSetup:
    run: dict
    model_kw: dict
    train_cfg: training.TrainConfig
    seed: int


def build_setup(cfg: dict, seed=None, no_normalize=False, lstman_depth=None) -> RunSetup:
    run = dict(RUN_DEFAULTS)
    model_names = set(_field_types(model.RtfnConfig)) - _DERIVED
    train_names = set(_field_types(training.TrainConfig))
    model_kw, train_kw = {}, {}
    for k, v in cfg.items():
        if k in RUN_KEYS:
            run[k] = v
        elif k in train_names and k != "seed":
            train_kw[k] = v
        elif k in model_names and k != "seed":
            model_kw[k] = v
    seed = int(seed if seed is not None else cfg.get("seed", 0))
    if no_normalize:
        run["normalize"] = False
    if lstman_depth is not None:
        model_kw["lstman_depth"] = lstman_depth
    if run["format"] not in ("ucr", "multivariate", "synthetic"):
        raise ConfigError(f"format must be ucr, multivariate or synthetic, got {run['format']!r}")
    if run["format"] != "synthetic" and not run["dataset"]:
        raise ConfigError("dataset is required unless format = synthetic")
    if run["cluster_split"] not in ("train", "test", "all"):
        raise ConfigError(f"cluster_split must be train, test or all, got {run['cluster_split']!r}")
    try:
        train_cfg = training.TrainConfig(seed=seed, **train_kw)
        model.RtfnConfig(seed=seed, **model_kw)  # validate early
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    return RunSetup(run, model_kw, train_cfg, seed)


def _find(data_dir: Path, stem: str, ext: str) -> Path:
    for cand in (data_dir / f"{stem}{ext}", data_dir / stem.rsplit("_", 1)[0] / f"{stem}{ext}"):
        if cand.is_file():
            return cand
    raise data.DataError(f"dataset file {stem}{ext} not found under {data_dir}")


def load_splits(run: dict, data_dir, seed: int):
    """(train, test, checksums) per the run keys; test is None for unlabeled synthetic data."""
    fmt, name = run["format"], run["dataset"]
    if fmt == "synthetic":
        rng = make_rng(seed)
        kind, n, length = run["synthetic_kind"], run["synthetic_n"], run["synthetic_length"]
        # one draw split in two, so both halves share the generator's centers
        pool = data.make_synthetic(kind, 2 * n, length, rng)
        y_tr, y_te = (None, None) if pool.y is None else (pool.y[:n], pool.y[n:])
        tr = dataclasses.replace(pool, x=pool.x[:n], y=y_tr)
        te = dataclasses.replace(pool, x=pool.x[n:], y=y_te, split="test")
        sums = {"train": _array_sum(tr.x), "test": _array_sum(te.x)}
        return tr, te, sums
    data_dir = Path(data_dir)
    ext = ".tsv" if fmt == "ucr" else ".csv"
    p_tr, p_te = _find(data_dir, f"{name}_TRAIN", ext), _find(data_dir, f"{name}_TEST", ext)
    loader = data.load_ucr_tsv if fmt == "ucr" else data.load_multivariate_csv
    tr = loader(p_tr, split="train")
    te = loader(p_te, data.label_mapping(tr), split="test")
    if te.x.shape[1:] != tr.x.shape[1:]:
        raise data.DataError(f"train series {tr.x.shape[1:]} and test series {te.x.shape[1:]} differ in shape")
    return tr, te, {p_tr.name: data.file_checksum(p_tr), p_te.name: data.file_checksum(p_te)}


def _array_sum(x):
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()


@contextmanager
def thread_cap():
    """Limit BLAS threads to RTFN_THREADS (default 1)."""
    from threadpoolctl import threadpool_limits

    raw = os.environ.get("RTFN_THREADS", "1")
    try:
        n = max(1, int(raw))
    except ValueError:
        raise ConfigError(f"RTFN_THREADS must be a positive integer, got {raw!r}") from None
    with threadpool_limits(limits=n):
        yield n


def _write_run(out_dir: Path, manifest: dict, records, state, config_dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    training.write_loss_csv(out_dir / LOSS_NAME, records)
    model.save_checkpoint(out_dir / CHECKPOINT_NAME, config_dict, state)
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _checkpoint_config(manifest):
    # everything but timings, so equal runs give byte-identical checkpoints
    return {k: manifest[k] for k in ("command", "run", "model_config", "train_config", "seed")}


def _manifest(kind, setup, mcfg, checksums, metrics, wall, n_params):
    return {
        "command": kind,
        "algorithm": setup.run["name"],
        "dataset": setup.run["dataset"] or f"synthetic-{setup.run['synthetic_kind']}",
        "seed": setup.seed,
        "toolkit_version": rtfn.__version__,
        "run": setup.run,
        "model_config": mcfg.to_dict(),
        "train_config": setup.train_cfg.to_dict(),
        "dataset_checksums": checksums,
        "metrics": metrics,
        "num_parameters": n_params,
        "wall_clock_s": wall,
    }


def _prepare(args):
    setup = build_setup(parse_config(args.config), args.seed, args.no_normalize, args.lstman_depth)
    tr, te, sums = load_splits(setup.run, args.data, setup.seed)
    if setup.run["normalize"]:
        tr, stats = data.znormalize(tr)
        te, _ = data.znormalize(te, stats)
    mcfg = model.RtfnConfig(num_classes=max(tr.num_classes, 1), input_channels=tr.channels,
                            series_length=tr.length, seed=setup.seed, **setup.model_kw)
    return setup, tr, te, sums, mcfg


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    setup, tr, te, sums, mcfg = _prepare(args)
    if tr.y is None:
        raise data.DataError("training needs a labeled dataset")
    net = model.RtfnModel(mcfg)
    net, records = training.train_supervised(net, tr, setup.train_cfg, eval_set=te)
    top1 = training.evaluate_accuracy(net, te.x, te.y)
    wall = time.perf_counter() - t0
    metrics = {"top1": top1, "score": top1, "final_train_loss": records[-1].train_loss}
    manifest = _manifest("train", setup, mcfg, sums, metrics, wall, net.num_parameters())
    _write_run(Path(args.out), manifest, records, model.state_dict(net), _checkpoint_config(manifest))
    print(f"top1={top1:.6f}")
    return EXIT_OK


def _cluster_view(tr, te, split):
    if split == "train":
        return tr
    if split == "test":
        return te
    y = None if tr.y is None or te.y is None else np.concatenate([tr.y, te.y])
    return data.SeriesDataset(np.concatenate([tr.x, te.x]), y, tr.num_classes, tr.name, "all", tr.label_values)


def cmd_cluster(args) -> int:
    t0 = time.perf_counter()
    setup, tr, te, sums, mcfg = _prepare(args)
    view = _cluster_view(tr, te, setup.run["cluster_split"])
    if view.y is None:
        raise data.DataError("clustering is scored against held-out labels; the dataset has none")
    k = setup.run["clusters"] or view.num_classes
    if k > len(view):
        raise ConfigError(f"clusters = {k} exceeds the {len(view)} series available")
    enc = model.RtfnModel(mcfg)
    dec = model.Decoder(mcfg)
    unlabeled = dataclasses.replace(view, y=None)
    enc, records = training.train_autoencoder(enc, dec, unlabeled, setup.train_cfg)
    feats = training.encode(enc, view.x)
    assign = clustering.kmeans(feats, k, make_rng(setup.seed))
    ri = clustering.rand_index(view.y, assign.labels)
    wall = time.perf_counter() - t0
    metrics = {"rand_index": ri, "score": ri, "inertia": assign.inertia, "clusters": k,
               "final_train_loss": records[-1].train_loss}
    manifest = _manifest("cluster", setup, mcfg, sums, metrics, wall, enc.num_parameters() + dec.num_parameters())
    _write_run(Path(args.out), manifest, records, model.state_dict(enc, dec), _checkpoint_config(manifest))
    print(f"ri={ri:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = None
    if args.components:
        names = [n.strip() for n in args.components.split(",") if n.strip()]
        unknown = [n for n in names if n not in gradcheck.COMPONENTS]
        if unknown:
            raise ConfigError(f"unknown gradcheck components: {', '.join(unknown)}")
    results = gradcheck.run_suite(names)
    width = max(len(r.component) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.component.ljust(width)}  max_rel_err={r.max_rel_error:.3e}  tol={r.tolerance:.0e}  {status}")
    failed = [r.component for r in results if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_report(args) -> int:
    paths = []
    for pat in args.manifests:
        if Path(pat).is_dir():
            hits = sorted(glob.glob(str(Path(pat) / "**" / MANIFEST_NAME), recursive=True))
        else:
            hits = sorted(glob.glob(pat))
        paths.extend(hits or [pat])
    cells: dict = {}
    for p in paths:
        try:
            with open(p, encoding="utf-8") as fh:
                m = json.load(fh)
            key = (m["algorithm"], m["dataset"])
            score = float(m["metrics"]["score"])
        except (OSError, ValueError, KeyError, TypeError) as err:
            raise data.DataError(f"unreadable manifest {p}: {err}") from None
        cells.setdefault(key, []).append(score)
    if not cells:
        raise data.DataError("no manifests given")
    algs = sorted({a for a, _ in cells})
    sets = sorted({d for _, d in cells})
    # repeated runs of one algorithm on one dataset (e.g. seeds) are averaged
    mat = np.full((len(algs), len(sets)), np.nan)
    for (a, d), scores in cells.items():
        mat[algs.index(a), sets.index(d)] = float(np.mean(scores))
    board = clustering.leaderboard(mat, algs, accuracy_gap=args.accuracy_gap)
    csv_text = board.to_csv()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "leaderboard.csv").write_text(csv_text, encoding="utf-8")
    sys.stdout.write(csv_text)
    print()
    print(board.to_table())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="rtfn", description="RTFN time-series classification and clustering")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in (("train", cmd_train), ("cluster", cmd_cluster)):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--data", default=".")
        s.add_argument("--out", required=True)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--no-normalize", action="store_true")
        s.add_argument("--lstman-depth", type=int, choices=(1, 2, 3), default=None)
        s.set_defaults(func=fn)
    s = sub.add_parser("gradcheck")
    s.add_argument("--components", default=None, help="comma-separated subset (default: all)")
    s.set_defaults(func=cmd_gradcheck)
    s = sub.add_parser("report")
    s.add_argument("manifests", nargs="+", help="manifest files, globs or run directories")
    s.add_argument("--out", default=None)
    s.add_argument("--accuracy-gap", action="store_true", help="avg_rank as mean shortfall from the best score")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with thread_cap():
            return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (data.DataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except training.NumericDivergence as err:
        print(f"numeric divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
