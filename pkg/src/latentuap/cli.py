"""Command line entry point.

Every subcommand accepts ``--config file.json``; its keys supply defaults
for the subcommand's options (use the option name with dashes replaced
by underscores) and explicit flags win. Each run writes
``outputs.json`` into its output directory listing the produced files
and the digest of the resolved configuration.

Exit codes: 0 success, 2 configuration error, 3 module error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import countermeasures, dsp, evaluation, metrics, optimizer, preparation, runtime, theory
from .audio_io import AudioClip, digest, load_artifact, load_clip, read_manifest, save_artifact, save_clip, write_jsonl
from .errors import LatentUapError

log = logging.getLogger("latentuap")

EXIT_OK, EXIT_CONFIG, EXIT_MODULE = 0, 2, 3


class ConfigError(Exception):
    pass


# -- helpers -------------------------------------------------------------------


def _bundle(path):
    from .models.bundle import load_bundle

    p = Path(path)
    if not (p / "bundle.json").exists():
        raise ConfigError(f"no model bundle under {p}")
    return load_bundle(p)


def _clips_from(path, limit: int | None = None) -> list[AudioClip]:
    """Clips from a manifest (``.jsonl``), a directory of WAVs, or a single WAV."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"input not found: {p}")
    if p.suffix == ".jsonl":
        m = read_manifest(p)
        n = len(m) if limit is None else min(limit, len(m))
        return [m.load(i) for i in range(n)]
    files = sorted(p.glob("*.wav")) if p.is_dir() else [p]
    if limit is not None:
        files = files[:limit]
    clips = []
    for f in files:
        c = load_clip(f)
        c.id = f.stem
        clips.append(c)
    return clips


def _artifacts(paths, bundle=None):
    if not paths:
        raise ConfigError("at least one --artifact is required")
    kw = {}
    if bundle is not None:
        kw = {"expect_encoder_id": bundle.encoder_id, "expect_channels": bundle.latent_channels}
    return [load_artifact(p, **kw) for p in paths]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_outputs(out: Path, files, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for f in sorted({Path(f) for f in files}):
        rows.append({"path": str(f.relative_to(out)) if f.is_relative_to(out) else str(f), "sha256": _sha256(f)})
    manifest = {"config_digest": digest(cfg), "config": cfg, "files": rows}
    (out / "outputs.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _resolved(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in ("func", "config", "verbose")}


def _seed_all(seed: int) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(1)


# -- subcommands -----------------------------------------------------------------


def cmd_train_models(args) -> list[Path]:
    from .models import corpus, training

    root = Path(args.corpus)
    if not (root / "train.jsonl").exists():
        corpus.build_corpus(root, args.n_train, args.n_test, args.seed)
    out = Path(args.out)
    cfg = training.ToyTrainConfig(seed=args.seed)
    if args.ae_steps is not None:
        cfg.ae_steps = args.ae_steps
    if args.asr_steps is not None:
        cfg.asr_steps = args.asr_steps
    bundle = training.train_toy_models(read_manifest(root / "train.jsonl"), args.seed, cfg, out_dir=out / "models", check_gates=not args.no_gates)
    (out / "training.json").write_text(json.dumps(bundle.info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [out / "models" / n for n in ("bundle.json", "autoencoder.pt", "asr.pt")] + [out / "training.json"]


def cmd_prepare(args) -> list[Path]:
    bundle = _bundle(args.models)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [preparation.TARGET_SEED_BASE + 1000 * args.seed + i for i in range(args.n)]
    spec = preparation.search_target_audio(args.text, bundle, args.n, args.decay, seeds, args.scale_rule, args.strict)
    files = [preparation.save_target(spec, out / "target.npz")]
    (out / "target_report.txt").write_text(preparation.target_report(spec), encoding="utf-8")
    files.append(out / "target_report.txt")
    if args.screen:
        clips = _clips_from(args.screen, limit=args.screen_clips)
        rep = preparation.screen_autoencoder(bundle, clips)
        (out / "screening.json").write_text(json.dumps(preparation.screening_dict(rep), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        files.append(out / "screening.json")
    return files


def _train_config(args) -> optimizer.TrainConfig:
    base = dict(args.train or {})
    overrides = {
        "lam": args.lam,
        "tau": args.tau,
        "sigma": args.sigma,
        "use_rir": args.use_rir,
        "max_epoch": args.max_epoch,
        "max_iter": args.max_iter,
        "alpha": args.alpha,
        "batch_size": args.batch_size,
        "optimizer": args.optimizer,
        "seed": args.seed,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return optimizer.TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args) -> list[Path]:
    bundle = _bundle(args.models)
    cfg = _train_config(args)
    _seed_all(cfg.seed)
    target = preparation.load_target(args.target)
    clips = _clips_from(args.dataset, limit=args.limit)
    rir_bank = dsp.load_rir_directory(args.rir_dir) if args.rir_dir else None
    artifact, trace = optimizer.train(cfg, clips, target, bundle, rir_bank, created_at=args.created_at, progress_every=args.progress_every)
    out = Path(args.out)
    files = [save_artifact(artifact, out / "perturbation.luap"), trace.write_jsonl(out / "trace.jsonl")]
    (out / "train_config.json").write_text(json.dumps(vars(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append(out / "train_config.json")
    return files


def cmd_protect(args) -> list[Path]:
    bundle = _bundle(args.models)
    pool = runtime.UapPool(_artifacts(args.artifact, bundle), args.seed)
    out = Path(args.out)
    rows, files = [], []
    for clip in _clips_from(args.input):
        res = runtime.protect(clip, pool, bundle)
        files.append(save_clip(res.protected, out / f"{clip.id}.wav"))
        rows.append({"clip_id": clip.id, "artifact_id": res.artifact_id, "latency_ms": round(res.latency_ms, 3)})
    files.append(write_jsonl(rows, out / "protect_log.jsonl"))
    return files


def cmd_protect_stream(args) -> list[Path]:
    bundle = _bundle(args.models)
    pool = runtime.UapPool(_artifacts(args.artifact, bundle), args.seed)
    src, dst = sys.stdin.buffer, sys.stdout.buffer
    rate, chunk = bundle.rate, int(round(args.chunk_ms * bundle.rate / 1000))
    if not args.no_header:
        rate, chunk = runtime.read_stream_header(src)
        if rate != bundle.rate:
            raise ConfigError(f"stream rate {rate} differs from model rate {bundle.rate}")
        runtime.write_stream_header(dst, rate, chunk)
    latencies = []
    for res in runtime.protect_stream(runtime.read_pcm_chunks(src, chunk), pool, bundle, args.crossfade_ms, rate):
        runtime.write_pcm_chunk(dst, res.protected.samples)
        latencies.append(res.latency_ms)
    if args.log:
        write_jsonl([{"chunk": i, "latency_ms": round(v, 3)} for i, v in enumerate(latencies)], args.log)
        return [Path(args.log)]
    return []


def cmd_evaluate(args) -> list[Path]:
    bundle = _bundle(args.models)
    clips = _clips_from(args.dataset, limit=args.limit)
    out = Path(args.out)
    rows, files = [], []
    conditions = [("clean", clips)]
    for path in args.artifact or []:
        art = load_artifact(path, bundle.encoder_id, bundle.latent_channels)
        conditions.append((f"protected-{Path(path).parent.name or Path(path).stem}", evaluation.protect_clips(clips, art, bundle)))
    for name, cs in conditions:
        recs = evaluation.evaluate_clips(bundle, cs, [c.transcript for c in clips])
        files.append(metrics.write_records_csv(recs, out / f"records_{name}.csv"))
        rows.append({"condition": name, **metrics.summarize(recs)})
    files.append(metrics.write_summary_csv(rows, out / "summary.csv"))
    return files


def _defenses(args) -> list[countermeasures.DefenseConfig]:
    specs = args.defenses
    if isinstance(specs, (str, Path)):
        specs = json.loads(Path(specs).read_text(encoding="utf-8"))
    if not specs:
        raise ConfigError("no defences configured")
    try:
        return [countermeasures.DefenseConfig.from_dict(d) for d in specs]
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_defend(args) -> list[Path]:
    clips = _clips_from(args.input, limit=args.limit)
    bundle = _bundle(args.models) if args.models else None
    out = Path(args.out)
    files, rows = [], []
    for cfg in _defenses(args):
        if cfg.kind == "latent-recon":
            if bundle is None:
                raise ConfigError("latent countermeasures need --models")
            defended = [countermeasures.latent_countermeasure(c, cfg, bundle, args.default_noise_std) for c in clips]
        else:
            defended = [countermeasures.defend(c, cfg) for c in clips]
        for c, d in zip(clips, defended):
            files.append(save_clip(d, out / cfg.label / f"{c.id}.wav"))
        if bundle is not None and args.references:
            refs = _references(args.references, clips)
            recs = evaluation.evaluate_clips(bundle, defended, refs)
            rows.append({"condition": cfg.label, **metrics.summarize(recs)})
    if rows:
        files.append(metrics.write_summary_csv(rows, out / "summary.csv"))
    return files


def _references(manifest_path, clips) -> list[str]:
    m = read_manifest(manifest_path)
    by_id = {Path(e.path).stem: e.transcript for e in m.entries}
    try:
        return [by_id[c.id.removesuffix("-protected")] for c in clips]
    except KeyError as exc:
        raise ConfigError(f"no reference transcript for clip {exc}") from exc


def cmd_td_eval(args) -> list[Path]:
    bundle = _bundle(args.models)
    benign = _clips_from(args.benign, limit=args.limit)
    adv = _clips_from(args.adversarial, limit=args.limit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary = [], []
    for k in args.k:
        value, sb, sa = countermeasures.td_evaluate(benign, adv, k, bundle)
        rows += [{"k": k, "set": "benign", "clip_id": c.id, "score": s} for c, s in zip(benign, sb)]
        rows += [{"k": k, "set": "adversarial", "clip_id": c.id, "score": s} for c, s in zip(adv, sa)]
        summary.append({"condition": f"k={k}", "auc": value, "n_benign": len(sb), "n_adversarial": len(sa)})
    return [write_jsonl(rows, out / "td_scores.jsonl"), metrics.write_summary_csv(summary, out / "td_summary.csv")]


def cmd_verify_bound(args) -> list[Path]:
    bundle = _bundle(args.models)
    clips = _clips_from(args.dataset, limit=args.limit)
    sampler = theory.encoder_crop_sampler(bundle, clips, args.crop_frames)
    dec = theory.bundle_decoder(bundle)
    est = theory.estimate_lipschitz(dec, sampler, args.n_pairs, args.tau, args.seed)
    grid = args.r or theory.default_r_grid(est.a_hat, args.tau)
    rep = theory.verify_bound(dec, args.tau, est.a_hat, grid, args.n_trials, args.seed, sampler, args.safety)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"lipschitz": {"a_hat": est.a_hat, "n_pairs": est.n_pairs, "max_ratio_pair": est.max_ratio_pair, "label": est.label}, "bound": rep.as_dict()}
    (out / "bound_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [out / "bound_report.json", rep.write_csv(out / "bound_curve.csv")]


def cmd_distribution_report(args) -> list[Path]:
    original = _clips_from(args.original, limit=args.limit)
    sets = {"original": evaluation.mfcc_means(original)}
    for i, p in enumerate(args.protected or []):
        name = "protected" if len(args.protected) == 1 else f"protected-{i}"
        sets[name] = evaluation.mfcc_means(_clips_from(p, limit=args.limit))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    if args.noise_baseline:
        if not args.models or not args.protected:
            raise ConfigError("the noise baseline needs --models and --protected")
        bundle = _bundle(args.models)
        refs = [c.transcript for c in original]
        if any(r is None for r in refs):
            raise ConfigError("the noise baseline needs --original as a manifest with transcripts")
        prot = _clips_from(args.protected[0], limit=args.limit)
        target = float(np.mean([metrics.cer(r, bundle.transcribe(c).text) for r, c in zip(refs, prot)]))
        std, noisy, matched = evaluation.noise_at_matched_cer(bundle, original, target, args.seed)
        sets["white-noise"] = evaluation.mfcc_means(noisy)
        extra = {"protected_cer": target, "noise_std": std, "noise_cer": matched}
    rep = evaluation.distribution_report(sets)
    files = [rep.write_csv(out / "kde_curves.csv"), rep.write_overlap_csv(out / "overlap.csv")]
    if extra:
        (out / "noise_baseline.json").write_text(json.dumps(extra, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        files.append(out / "noise_baseline.json")
    return files


def cmd_report(args) -> list[Path]:
    rows = []
    for d in args.inputs:
        for f in sorted(Path(d).rglob("*summary.csv")):
            with f.open(encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    rows.append({"source": str(f.relative_to(d)), "run": Path(d).name, **row})
    if not rows:
        raise ConfigError("no summary CSV files found under the given inputs")
    fields = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return [out / "report.csv"]


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentuap", description="Latent-space universal perturbations against a toy CTC recogniser.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON file supplying option defaults")
        sp.add_argument("--seed", type=int, default=0)
        sp.set_defaults(func=func)
        return sp

    sp = add("train-models", cmd_train_models, "build the toy corpus and train the toy autoencoder and recogniser")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-train", type=int, default=500)
    sp.add_argument("--n-test", type=int, default=200)
    sp.add_argument("--ae-steps", type=int)
    sp.add_argument("--asr-steps", type=int)
    sp.add_argument("--no-gates", action="store_true", help="do not fail when quality gates are missed")

    sp = add("prepare", cmd_prepare, "search the target rendering and scale; optionally screen the autoencoder")
    sp.add_argument("--models", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--decay", type=float, default=0.9)
    sp.add_argument("--scale-rule", choices=("as-written", "last-ok"), default="as-written")
    sp.add_argument("--strict", action="store_true")
    sp.add_argument("--screen", help="clips used for autoencoder screening")
    sp.add_argument("--screen-clips", type=int, default=20)

    sp = add("train", cmd_train, "train one perturbation")
    sp.add_argument("--models", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int)
    sp.add_argument("--train", type=json.loads, help="JSON object of training options")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--max-epoch", type=int)
    sp.add_argument("--max-iter", type=int)
    sp.add_argument("--optimizer", choices=("sign-pgd", "adam-clip"))
    sp.add_argument("--use-rir", action="store_true", default=None)
    sp.add_argument("--rir-dir")
    sp.add_argument("--created-at", default="1970-01-01T00:00:00+00:00", help="timestamp stored in the artifact")
    sp.add_argument("--progress-every", type=int, default=0)

    sp = add("protect", cmd_protect, "protect WAV files")
    sp.add_argument("--models", required=True)
    sp.add_argument("--artifact", action="append")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)

    sp = add("protect-stream", cmd_protect_stream, "protect raw 16-bit PCM from stdin to stdout")
    sp.add_argument("--models", required=True)
    sp.add_argument("--artifact", action="append")
    sp.add_argument("--chunk-ms", type=float, default=1000.0)
    sp.add_argument("--crossfade-ms", type=float, default=10.0)
    sp.add_argument("--no-header", action="store_true")
    sp.add_argument("--log", help="write per-chunk latencies here")
    sp.add_argument("--out", help="directory for outputs.json")

    sp = add("evaluate", cmd_evaluate, "score clean and protected clips against the recogniser")
    sp.add_argument("--models", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--artifact", action="append")
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int)

    sp = add("defend", cmd_defend, "apply defences to clips")
    sp.add_argument("--input", required=True)
    sp.add_argument("--defenses", required=True, help="JSON file with a list of defence configs")
    sp.add_argument("--out", required=True)
    sp.add_argument("--models")
    sp.add_argument("--references", help="manifest with reference transcripts for scoring")
    sp.add_argument("--default-noise-std", type=float, default=1.0)
    sp.add_argument("--limit", type=int)

    sp = add("td-eval", cmd_td_eval, "temporal-dependency detection AUC")
    sp.add_argument("--models", required=True)
    sp.add_argument("--benign", required=True)
    sp.add_argument("--adversarial", required=True)
    sp.add_argument("--k", type=float, action="append")
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int)

    sp = add("verify-bound", cmd_verify_bound, "estimate the decoder Lipschitz constant and check the robustness bound")
    sp.add_argument("--models", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--n-pairs", type=int, default=5000)
    sp.add_argument("--n-trials", type=int, default=10000)
    sp.add_argument("--r", type=float, action="append")
    sp.add_argument("--safety", type=float, default=1.0)
    sp.add_argument("--crop-frames", type=int, default=32)
    sp.add_argument("--limit", type=int, default=100)

    sp = add("distribution-report", cmd_distribution_report, "KDE curves of per-clip MFCC means")
    sp.add_argument("--original", required=True)
    sp.add_argument("--protected", action="append")
    sp.add_argument("--models")
    sp.add_argument("--noise-baseline", action="store_true")
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int)

    sp = add("report", cmd_report, "collect summary CSVs of several runs into one table")
    sp.add_argument("--inputs", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    return p


def _prescan(argv):
    """Subcommand name and ``--config`` value, found without validating anything else."""
    command = config = None
    it = iter(argv)
    for tok in it:
        if tok == "--config":
            config = next(it, None)
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
        elif command is None and not tok.startswith("-"):
            command = tok
    return command, config


def _apply_config(parser, argv):
    """Install ``--config`` values as subcommand defaults, then parse once."""
    argv = list(sys.argv[1:] if argv is None else argv)
    command, config = _prescan(argv)
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    if config and command in subs:
        path = Path(config)
        try:
            values = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        sub = subs[command]
        known = {a.dest for a in sub._actions}
        unknown = set(values) - known - {"config"}
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        sub.set_defaults(**values)
        # required options may now come from the config file
        for a in sub._actions:
            if a.dest in values:
                a.required = False
    return parser.parse_args(argv)


def _error(kind: str, exc: BaseException, code: int) -> int:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(rec), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    _seed_all(args.seed)
    try:
        files = args.func(args)
        out = getattr(args, "out", None)
        if out:
            _write_outputs(Path(out), files, _resolved(args))
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    except LatentUapError as exc:
        return _error("module", exc, EXIT_MODULE)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    except ValueError as exc:
        return _error("module", exc, EXIT_MODULE)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
