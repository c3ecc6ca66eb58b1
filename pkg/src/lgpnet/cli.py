"""Command-line entry point wiring the whole pipeline.

Exit codes: 0 success, 2 usage, 3 data/format problems, 4 numeric failure.
Output paths given as relative can be redirected under the directory named
by the ``LGPNET_OUT_DIR`` environment variable; nothing else reads the
environment.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, tensorio
from .errors import FormatError, ProtocolError, TrainingDivergedError
from .evaluation import (
    TdcfCostModel,
    eer_from_scores,
    fuse_scores,
    min_tdcf_from_scores,
    read_protocol,
    read_scores,
    write_scores,
)
from .frontend import LfccConfig, extract_lfcc, load_features, read_wav, store_features
from .gmm import EmConfig, Gmm, llr_score, train_em
from .lgp import LgpNormStats, extract_lgp, fit_norm_stats
from .model import ClassifierConfig, SpoofModel
from .runconfig import RunConfig
from .synthcorpus import CorpusSpec, generate
from .training import TrainConfig, load_dataset, train_one_path, train_two_step

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 2, 3, 4


def _out_path(raw) -> Path:
    root = os.environ.get("LGPNET_OUT_DIR")
    path = Path(raw)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _feature_paths(spec: str) -> list[Path]:
    """A features argument is either a directory of .lgpf files or a list file."""
    path = Path(spec)
    if path.is_dir():
        files = sorted(path.glob("*.lgpf"))
        if not files:
            raise FileNotFoundError(f"{spec}: no .lgpf files found")
        return files
    with open(path, "r", encoding="utf-8") as fh:
        files = [Path(line.strip()) for line in fh if line.strip()]
    if not files:
        raise FileNotFoundError(f"{spec}: empty feature list")
    return files


def _map_workers(workers: int, fn, items):
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))   # order preserved -> deterministic


# -- subcommands ---------------------------------------------------------------


def _cmd_gen_corpus(args) -> int:
    spec = CorpusSpec(
        task=args.task, dim=args.dim, train_utts=args.train_utts,
        dev_utts=args.dev_utts, eval_utts=args.eval_utts,
        min_len=args.min_len, max_len=args.max_len, seed=args.seed,
    )
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    generate(spec, out)
    with open(out / "corpus-spec.cfg", "w", encoding="utf-8") as fh:
        for key, value in vars(spec).items():
            fh.write(f"{key} = {value}\n")
    print(f"wrote corpus to {out}")
    return 0


def _cmd_extract_lfcc(args) -> int:
    cfg = LfccConfig(include_deltas=not args.no_deltas)
    wav_dir = Path(args.wav_dir)
    out_dir = _out_path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wavs = sorted(wav_dir.glob("*.wav"))
    if not wavs:
        raise FileNotFoundError(f"{wav_dir}: no .wav files found")

    def one(path: Path):
        feats = extract_lfcc(read_wav(path), cfg)
        store_features(out_dir / (path.stem + ".lgpf"), feats)

    _map_workers(args.workers, one, wavs)
    print(f"extracted {len(wavs)} files to {out_dir}")
    return 0


def _cmd_train_gmm(args) -> int:
    files = _feature_paths(args.features)
    frames = np.concatenate([load_features(p) for p in files], axis=0)
    cfg = EmConfig(iterations=args.iters, seed=args.seed,
                   variance_floor_factor=args.floor_factor)
    model, trace = train_em(frames, args.components, cfg)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"trained {args.components}-component GMM on {frames.shape[0]} frames "
          f"(avg log-likelihood {trace[-1]:.4f}) -> {out}")
    return 0


def _cmd_fit_lgp_stats(args) -> int:
    gmm = Gmm.load(args.gmm)
    files = _feature_paths(args.features)
    frames = np.concatenate([load_features(p) for p in files], axis=0)
    stats = fit_norm_stats(gmm, frames, args.form)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stats.save(out)
    print(f"fitted {args.form}-form stats over {frames.shape[0]} frames -> {out}")
    return 0


def _cmd_extract_lgp(args) -> int:
    gmm = Gmm.load(args.gmm)
    stats = LgpNormStats.load(args.stats)
    in_dir = Path(args.in_dir)
    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(in_dir.glob("*.lgpf"))
    if not files:
        raise FileNotFoundError(f"{in_dir}: no .lgpf files found")

    def one(path: Path):
        feats = load_features(path)
        lgp_map = extract_lgp(gmm, stats, feats, args.form)
        store_features(out_dir / path.name, lgp_map)

    _map_workers(args.workers, one, files)
    print(f"extracted LGP maps for {len(files)} files to {out_dir}")
    return 0


def _load_models(args, paths: int):
    gmm_files = [args.gmm] + ([args.gmm2] if paths == 2 else [])
    stats_files = [args.stats] + ([args.stats2] if paths == 2 else [])
    if any(f is None for f in gmm_files + stats_files):
        raise ProtocolError("two-path models need --gmm2 and --stats2")
    gmms = [Gmm.load(f) for f in gmm_files]
    stats = [LgpNormStats.load(f) for f in stats_files]
    return gmms, stats


def _cmd_train(args) -> int:
    run = RunConfig.from_file(args.config) if args.config else RunConfig()
    gmms, stats = _load_models(args, run.paths)
    cfg = ClassifierConfig(
        gmm_order=run.gmm_order, channels=run.channels, blocks=run.blocks,
        se_enabled=run.se_enabled, se_reduction=run.se_reduction,
        input_length=run.segment_length, paths=run.paths, lgp_form=run.lgp_form,
    )
    model = SpoofModel(cfg, gmms, stats, seed=run.seed)
    train_cfg = TrainConfig(
        batch_size=run.batch_size, epochs=run.epochs, lr=run.lr, seed=run.seed,
        target_length=run.segment_length,
        step1_epochs=run.step1_epochs or None, step2_epochs=run.step2_epochs or None,
    )
    data = load_dataset(args.protocol, args.features, "train")
    dev = load_dataset(args.dev_protocol, args.features, "dev") if args.dev_protocol else None

    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.write(out / "resolved-config.cfg")
    metrics = open(out / "metrics.log", "w", encoding="utf-8")

    def log_epoch(epoch, result):
        eer = result.dev_eer_trace[-1] if result.dev_eer_trace else float("nan")
        line = f"epoch {epoch + 1} loss {result.loss_trace[-1]:.6f} dev_eer {eer:.4f}"
        print(line)
        metrics.write(line + "\n")

    try:
        if run.paths == 1:
            train_one_path(model, data, train_cfg, dev, on_epoch=log_epoch)
        else:
            train_two_step(model, data, train_cfg, dev, on_epoch=log_epoch)
    finally:
        metrics.close()
    model.save(out / "model.lgpn")
    print(f"saved model to {out / 'model.lgpn'}")
    return 0


def _cmd_score(args) -> int:
    tensors = tensorio.load_tensors(args.model)
    paths = int(tensors["cfg.paths"][0])
    gmms, stats = _load_models(args, paths)
    model = SpoofModel.load(args.model, gmms, stats)
    labels = read_protocol(args.protocol)
    feat_dir = Path(args.features)

    def one(utt_id: str) -> float:
        return model.score_utterance(load_features(feat_dir / f"{utt_id}.lgpf"))

    ids = list(labels)
    values = _map_workers(args.workers, one, ids)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scores(out, dict(zip(ids, values)))
    print(f"scored {len(ids)} utterances -> {out}")
    return 0


def _cmd_score_gmm(args) -> int:
    genuine = Gmm.load(args.gmm)
    spoof = Gmm.load(args.gmm2)
    labels = read_protocol(args.protocol)
    feat_dir = Path(args.features)

    def one(utt_id: str) -> float:
        return llr_score(genuine, spoof, load_features(feat_dir / f"{utt_id}.lgpf"))

    ids = list(labels)
    values = _map_workers(args.workers, one, ids)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scores(out, dict(zip(ids, values)))
    print(f"scored {len(ids)} utterances (GMM baseline) -> {out}")
    return 0


def _read_tdcf_config(path) -> TdcfCostModel:
    values = {}
    fields = set(TdcfCostModel.__dataclass_fields__)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ProtocolError(f"{path}: expected 'key = value'", line=lineno)
            key, _, raw = text.partition("=")
            key = key.strip()
            if key not in fields:
                raise ProtocolError(f"{path}: unknown key {key!r}", line=lineno)
            try:
                values[key] = float(raw.strip())
            except ValueError:
                raise ProtocolError(f"{path}: bad value for {key!r}", line=lineno) from None
    return TdcfCostModel(**values)


def _cmd_evaluate(args) -> int:
    scores = read_scores(args.scores)
    labels = read_protocol(args.protocol)
    missing = [u for u in scores if u not in labels]
    if missing:
        raise ProtocolError(f"{args.protocol}: no label for scored trial {missing[0]!r}")
    bona = np.array([s for u, s in scores.items() if labels[u] == "bonafide"])
    spoof = np.array([s for u, s in scores.items() if labels[u] == "spoof"])
    eer, threshold = eer_from_scores(bona, spoof)
    lines = [f"EER {eer:.4f}", f"threshold {threshold:.6f}"]
    if args.tdcf_config:
        cost = _read_tdcf_config(args.tdcf_config)
        lines.append(f"min-tDCF {min_tdcf_from_scores(bona, spoof, cost):.4f}")
    for line in lines:
        print(line)
    if args.out:
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_fuse(args) -> int:
    dev_systems = [read_scores(p) for p in args.dev]
    eval_systems = [read_scores(p) for p in args.eval] if args.eval else None
    labels = read_protocol(args.protocol)
    result = fuse_scores(dev_systems, labels, eval_systems)
    weights = " ".join(f"{w:.4f}" for w in result.weights)
    print(f"weights {weights}")
    print(f"dev EER {result.dev_eer:.4f}")
    if args.out and result.fused_eval:
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_scores(out, result.fused_eval)
        print(f"wrote fused eval scores -> {out}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgpnet",
        description="LGP-feature spoofing detection toolkit",
    )
    parser.add_argument("--version", action="version",
                        version=f"lgpnet {__version__} (containers LGPN v1, LGPF v1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic two-class corpus")
    p.add_argument("--task", choices=("order-only", "marginal-shift"), default="order-only")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--train-utts", type=int, default=400)
    p.add_argument("--dev-utts", type=int, default=200)
    p.add_argument("--eval-utts", type=int, default=200)
    p.add_argument("--min-len", type=int, default=40)
    p.add_argument("--max-len", type=int, default=96)
    p.set_defaults(fn=_cmd_gen_corpus)

    p = sub.add_parser("extract-lfcc", help="LFCC features from 16-bit mono WAV files")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-deltas", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_extract_lfcc)

    p = sub.add_parser("train-gmm", help="EM-train a diagonal GMM on pooled frames")
    p.add_argument("--features", required=True, help="directory of .lgpf files or a list file")
    p.add_argument("--components", type=int, default=512)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--floor-factor", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_gmm)

    p = sub.add_parser("fit-lgp-stats", help="fit LGP normalization statistics")
    p.add_argument("--gmm", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--form", choices=("fast", "full"), default="fast")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_fit_lgp_stats)

    p = sub.add_parser("extract-lgp", help="export normalized LGP feature maps")
    p.add_argument("--gmm", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--form", choices=("fast", "full"), default="fast")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_extract_lgp)

    p = sub.add_parser("train", help="train a one-path or two-path classifier")
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--features", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--dev-protocol")
    p.add_argument("--gmm", required=True)
    p.add_argument("--gmm2")
    p.add_argument("--stats", required=True)
    p.add_argument("--stats2")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("score", help="score utterances with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--gmm", required=True)
    p.add_argument("--gmm2")
    p.add_argument("--stats", required=True)
    p.add_argument("--stats2")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("score-gmm", help="log-likelihood-ratio baseline scores")
    p.add_argument("--gmm", required=True, help="genuine-speech GMM")
    p.add_argument("--gmm2", required=True, help="spoofed-speech GMM")
    p.add_argument("--features", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_score_gmm)

    p = sub.add_parser("evaluate", help="EER and optional min t-DCF of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--tdcf-config")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("fuse", help="linear score fusion fitted on the dev set")
    p.add_argument("--dev", nargs="+", required=True)
    p.add_argument("--eval", nargs="*", default=[])
    p.add_argument("--protocol", required=True, help="dev protocol with labels")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_fuse)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse printed usage/help already
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (FormatError, ProtocolError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
