"""Command line entry points.

Subcommands cover the full loop: ``synth`` builds a corpus, ``train``
fits parameters, ``eval`` runs the repeated retrieval protocol,
``sweep`` traces metrics against query count, and ``inspect-weights``
summarizes learned bundle weights. Every run writes a ``run_manifest.json``
recording the resolved config, seed, and outputs; on failure the partial
outputs are removed and the exit status is nonzero.

Seed precedence: ``--seed`` flag, then the config file, then the
``MQVR_SEED`` environment variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__, evaluation, models, store, synthetic, training
from .methods import METHODS, normalize_method

SEED_ENV_VAR = "MQVR_SEED"
RUN_MANIFEST_NAME = "run_manifest.json"

_SYNTH_REQUIRED_KEYS = ("n_videos", "dim", "captions_per_video", "n_clusters")


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def _resolve_seed(flag_seed, config_seed) -> int:
    if flag_seed is not None:
        return flag_seed
    if config_seed is not None:
        return int(config_seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValueError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    return 0


class _Outputs:
    """Tracks files written by one command so a failure leaves no partial run."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.paths: list[Path] = []

    def register(self, path: Path) -> Path:
        self.paths.append(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.register(self.out_dir / name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return path

    def discard(self) -> None:
        for path in reversed(self.paths):
            try:
                if path.is_file():
                    path.unlink()
            except OSError:
                pass

    def relative_names(self) -> list:
        return sorted(str(p.relative_to(self.out_dir)) for p in self.paths)


def _write_run_manifest(outputs: _Outputs, command: str, config: dict, seed: int,
                        started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "outputs": outputs.relative_names(),
        "wall_clock_sec": time.perf_counter() - started,
    }
    path = outputs.out_dir / RUN_MANIFEST_NAME
    outputs.register(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_guarded(outputs: _Outputs, body) -> int:
    try:
        body()
    except Exception:
        outputs.discard()
        raise
    return 0


def _load_params_arg(args) -> models.ModelParams | None:
    if getattr(args, "params", None) is None:
        return None
    return models.load_params(args.params)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth(args) -> int:
    started = time.perf_counter()
    data = _load_json(args.config) if args.config else {}
    if args.config:
        missing = [k for k in _SYNTH_REQUIRED_KEYS if k not in data]
        if missing:
            raise ValueError(f"{args.config}: missing required keys: {', '.join(missing)}")
    seed = _resolve_seed(args.seed, data.pop("seed", None))
    config = synthetic.SyntheticConfig.from_dict({**data, "seed": seed})
    out_dir = Path(args.out)
    outputs = _Outputs(out_dir)

    def body():
        corpus = synthetic.generate(config)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = store.save_corpus(corpus, out_dir)
        outputs.register(out_dir / store.MANIFEST_NAME)
        outputs.register(out_dir / manifest.video_blob)
        for blob in manifest.caption_blobs:
            outputs.register(out_dir / blob)
        _write_run_manifest(outputs, "synth", config.to_dict(), seed, started)
        print(f"wrote corpus with {corpus.n_videos} videos to {out_dir}")

    return _run_guarded(outputs, body)


def _cmd_train(args) -> int:
    started = time.perf_counter()
    data = _load_json(args.config) if args.config else {}
    if args.method is not None:
        data["method"] = args.method
    if "method" not in data:
        raise ValueError("train needs a method: pass --method or put 'method' in the config")
    seed = _resolve_seed(args.seed, data.pop("seed", None))
    config = training.TrainConfig.from_dict({**data, "seed": seed})
    config.validate()
    corpus = store.load_corpus(args.corpus)
    out_dir = Path(args.out)
    outputs = _Outputs(out_dir)

    def body():
        params, log = training.train(corpus, config)
        out_dir.mkdir(parents=True, exist_ok=True)
        params_dir = out_dir / "params"
        models.save_params(params, params_dir)
        outputs.register(params_dir / "params.json")
        for name in models.tensor_names_for(params.kind):
            outputs.register(params_dir / f"{name}.bin")
        outputs.write_text("train_log.csv", log.to_csv())
        _write_run_manifest(outputs, "train", asdict(config), seed, started)
        print(f"trained {config.method} for {config.epochs} epochs; "
              f"final epoch loss {log.losses[-1]:.6f}")

    return _run_guarded(outputs, body)


def _cmd_eval(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args.seed, None)
    corpus = store.load_corpus(args.corpus)
    params = _load_params_arg(args)
    config = evaluation.EvalConfig(
        method=args.method, n_queries=args.n_queries, repeats=args.repeats, seed=seed,
        tswf_tau=args.tswf_tau,
    )
    out_dir = Path(args.out)
    outputs = _Outputs(out_dir)

    def body():
        report = evaluation.evaluate(corpus, config, params=params, threads=args.threads)
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs.write_text("eval_report.json", report.to_json())
        outputs.write_text("eval_report.csv", report.to_csv())
        echo = {
            "method": config.method,
            "n_queries": config.n_queries,
            "repeats": config.repeats,
            "params": args.params,
        }
        _write_run_manifest(outputs, "eval", echo, seed, started)
        recalls = "  ".join(f"R@{k}={report.recall[k]:.4f}" for k in config.recall_ks)
        print(f"{config.method} n={config.n_queries}: {recalls}  "
              f"MdR={report.mdr:.2f}  MnR={report.mnr:.2f}")

    return _run_guarded(outputs, body)


def _cmd_sweep(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args.seed, None)
    corpus = store.load_corpus(args.corpus)
    params = _load_params_arg(args)
    out_dir = Path(args.out)
    outputs = _Outputs(out_dir)

    def body():
        report = evaluation.sweep(
            corpus, args.method, n_max=args.n_max, repeats=args.repeats, seed=seed,
            params=params, tswf_tau=args.tswf_tau, threads=args.threads,
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs.write_text("sweep_report.json", report.to_json())
        outputs.write_text("sweep_curve.csv", report.to_csv())
        echo = {
            "method": report.method,
            "n_max": args.n_max,
            "repeats": args.repeats,
            "params": args.params,
        }
        _write_run_manifest(outputs, "sweep", echo, seed, started)
        aucs = "  ".join(f"auc@{n}={v:.4f}" for n, v in sorted(report.auc_at.items()))
        print(f"{report.method} swept n=1..{args.n_max}: {aucs}")

    return _run_guarded(outputs, body)


def _cmd_inspect_weights(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args.seed, None)
    corpus = store.load_corpus(args.corpus)
    params = _load_params_arg(args)
    out_dir = Path(args.out)
    outputs = _Outputs(out_dir)

    def body():
        table = evaluation.inspect_weights(
            corpus, args.method, params=params, n_queries=args.n_queries,
            repeats=args.repeats, seed=seed, tswf_tau=args.tswf_tau,
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs.write_text("weights.json", table.to_json())
        outputs.write_text("weights.csv", table.to_csv())
        echo = {
            "method": table.method,
            "n_queries": table.n_queries,
            "repeats": table.repeats,
            "params": args.params,
        }
        _write_run_manifest(outputs, "inspect-weights", echo, seed, started)
        cells = "  ".join(f"q{i}={w:.4f}" for i, w in enumerate(table.mean_weight, start=1))
        print(f"{table.method} mean weight by quality rank: {cells}")

    return _run_guarded(outputs, body)


# ---------------------------------------------------------------------------
# parser


def _add_common_eval_args(sub, with_queries: bool) -> None:
    sub.add_argument("--corpus", required=True, help="corpus directory")
    sub.add_argument("--method", required=True, type=normalize_method,
                     help=f"one of {', '.join(METHODS)}")
    sub.add_argument("--params", help="trained parameter directory")
    if with_queries:
        sub.add_argument("--n-queries", type=int, default=5, help="queries per bundle")
    sub.add_argument("--repeats", type=int, default=100, help="evaluation repeats")
    sub.add_argument("--tswf-tau", type=float, default=1.0,
                     help="temperature for similarity-based weights")
    sub.add_argument("--seed", type=int, default=None, help="random seed")
    sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mqvr",
        description="multi-query embedding retrieval: corpora, training, evaluation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="JSON config; requires n_videos, dim, "
                                    "captions_per_video, n_clusters")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a feature-aggregation method")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--method", type=normalize_method, default=None,
                   help="trainable method; overrides the config file")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="run the repeated retrieval protocol")
    _add_common_eval_args(p, with_queries=True)
    p.add_argument("--threads", type=int, default=1, help="worker threads over repeats")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="evaluate across query counts 1..n_max")
    _add_common_eval_args(p, with_queries=False)
    p.add_argument("--n-max", type=int, default=5, help="largest query count")
    p.add_argument("--threads", type=int, default=1, help="worker threads over repeats")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("inspect-weights", help="mean bundle weight by query quality")
    _add_common_eval_args(p, with_queries=True)
    p.set_defaults(func=_cmd_inspect_weights)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FloatingPointError, RuntimeError, OSError, store.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
