"""End-to-end acceptance checks on the trained toy stack.

Each test records one PASS/FAIL line (printed in the terminal summary)
before asserting, so a failing criterion still reports its measurement.
"""
import time

import numpy as np

from acceptance_log import record
from latentuap import countermeasures, evaluation, metrics, optimizer, runtime, theory
from latentuap.audio_io import AudioClip, load_artifact
from latentuap.countermeasures import DefenseConfig
from oracles import auc_all_thresholds, central_difference, cer_oracle, levenshtein_recursive, psr_hand_count, wer_oracle


def _refs(stack):
    return [c.transcript for c in stack.test_clips]


def _summary(stack, clips):
    return metrics.summarize(evaluation.evaluate_clips(stack.bundle, clips, _refs(stack)))


# -- 1 -------------------------------------------------------------------------------------


def test_criterion_1_constraint_invariant(runs):
    art, trace, seconds = runs.train()
    n = len(trace.records)
    worst = max(r.max_abs_delta for r in trace.records)
    ok = n >= 2000 and all(r.max_abs_delta <= 0.5 for r in trace.records) and float(np.max(np.abs(art.delta))) <= 0.5
    record(1, "constraint invariant", ok, f"{n} PGD iterations, worst max|delta| {worst:.6f} <= tau 0.5, {seconds / 60:.1f} min")
    assert ok


# -- 2 -------------------------------------------------------------------------------------


def test_criterion_2_gradient_fidelity(toy_stack, target):
    t0 = time.perf_counter()
    b = toy_stack.bundle.to_double()
    rng = np.random.default_rng(2)
    delta = optimizer.initial_delta(target, 188, 0.5) * 0.5
    worst, checks = 0.0, 0
    for clip in toy_stack.test_clips[:5]:
        batch = optimizer.encode_batch(b, [clip])
        f = lambda d: optimizer.loss_and_grad(d, batch, target.target_text, target.target_latent, None, b, 50.0)[0]
        _, grad = optimizer.loss_and_grad(delta, batch, target.target_text, target.target_latent, None, b, 50.0)
        # coordinates inside the clip's own frames, where the recogniser term is active
        frames = min(batch.frames[0], 188)
        for _ in range(10):
            idx = (int(rng.integers(32)), int(rng.integers(frames)))
            fd = central_difference(f, delta, idx, 1e-6)
            worst = max(worst, abs(grad[idx] - fd) / max(abs(fd), 1e-12))
            checks += 1
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-3 and seconds <= 300
    record(2, "gradient fidelity", ok, f"{checks} coordinates over 5 clips, worst relative error {worst:.2e}, {seconds:.0f} s")
    assert ok


# -- 3 -------------------------------------------------------------------------------------


def _random_text(rng, n):
    return "".join(rng.choice(list("ab c"), size=n))


def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        a, b = _random_text(rng, int(rng.integers(0, 31))), _random_text(rng, int(rng.integers(0, 31)))
        mismatches += metrics.edit_distance(a, b) != levenshtein_recursive(a, b)
        if a.strip():
            mismatches += metrics.cer(a, b) != cer_oracle(a, b)
            mismatches += metrics.wer(a, b) != wer_oracle(a, b)
    psr_bad = 0
    for _ in range(100):
        n = int(rng.integers(1, 30))
        refs = ["hello world"] * n
        hyps = [metrics.Transcription(_random_text(rng, int(rng.integers(1, 20))), False) for _ in range(n)]
        recs = metrics.make_records([str(i) for i in range(n)], refs, hyps)
        for r in recs:
            r.cer = float(rng.choice([0.0, 25.0, 49.999, 50.0, 75.0, 120.0]))
        excluded = [r.excluded for r in recs]
        if all(excluded):
            continue
        psr_bad += metrics.psr(recs) != psr_hand_count([r.cer for r in recs], excluded)
    auc_worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 40))
        scores = rng.integers(0, 6, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        labels = rng.random(n) < 0.5
        labels[0], labels[1] = True, False
        auc_worst = max(auc_worst, abs(metrics.auc(scores, labels) - auc_all_thresholds(scores, labels)))
    ok = mismatches == 0 and psr_bad == 0 and auc_worst <= 1e-9
    record(3, "metric oracle equivalence", ok, f"string mismatches {mismatches}, psr mismatches {psr_bad}, worst auc gap {auc_worst:.1e}")
    assert ok


# -- 4 -------------------------------------------------------------------------------------


def test_criterion_4_toy_protection(runs, toy_stack):
    t0 = time.perf_counter()
    s50 = _summary(toy_stack, runs.protected())
    s0 = _summary(toy_stack, runs.protected(lam=0.0))
    clean = _summary(toy_stack, toy_stack.test_clips)
    seconds = runs.train()[2] + runs.train(lam=0.0)[2] + time.perf_counter() - t0
    ok = s50["psr"] >= 80.0 and s0["cer"] < s50["cer"] and seconds <= 45 * 60
    record(
        4,
        "toy end-to-end protection",
        ok,
        f"PSR {s50['psr']:.1f}% (clean {clean['psr']:.1f}%), mean CER lambda=0 {s0['cer']:.1f} vs lambda=50 {s50['cer']:.1f}, {seconds / 60:.1f} min",
    )
    assert ok


# -- 5 -------------------------------------------------------------------------------------


def test_criterion_5_robustness_bound(toy_stack):
    t0 = time.perf_counter()
    g = theory.gaussian_sampler(4, 16)
    a_id = theory.estimate_lipschitz(theory.identity_decoder, g, 1000, 0.5, seed=5).a_hat
    a_sc = theory.estimate_lipschitz(theory.scaling_decoder(2.0), g, 1000, 0.5, seed=5).a_hat
    sampler = theory.encoder_crop_sampler(toy_stack.bundle, toy_stack.test_clips[:100], 32)
    dec = theory.bundle_decoder(toy_stack.bundle)
    est = theory.estimate_lipschitz(dec, sampler, 2000, 0.5, seed=5)
    rep = theory.verify_bound(dec, 0.5, est.a_hat, theory.default_r_grid(est.a_hat, 0.5), 10_000, 5, sampler)
    seconds = time.perf_counter() - t0
    ok = abs(a_id - 1) <= 1e-9 and abs(a_sc - 2) <= 1e-9 and not rep.violations and seconds <= 600
    pairs = ", ".join(f"r={r:.3g}: {e:.3f}>={b:.3f}" for r, e, b in zip(rep.r_grid, rep.empirical_prob, rep.theoretical_bound))
    record(5, "robustness bound", ok, f"stub a_hat {a_id:.12f}/{a_sc:.12f}, toy a_hat {est.a_hat:.3f}, {pairs}, violations {rep.violations}, {seconds:.0f} s")
    assert ok


# -- 6 -------------------------------------------------------------------------------------


def test_criterion_6_defense_stability(runs, toy_stack):
    t0 = time.perf_counter()
    protected = runs.protected()
    base = _summary(toy_stack, protected)["psr"]
    deltas = {}
    cfgs = [DefenseConfig("smooth", h=h) for h in (1, 2, 3)] + [DefenseConfig("downsample", dr=dr) for dr in (14000, 12000, 10000)]
    for cfg in cfgs:
        defended = [countermeasures.defend(c, cfg) for c in protected]
        deltas[cfg.label] = _summary(toy_stack, defended)["psr"] - base
    seconds = time.perf_counter() - t0
    ok = all(abs(d) < 15.0 for d in deltas.values()) and seconds <= 20 * 60
    record(6, "defense robustness", ok, f"protected PSR {base:.1f}%, changes " + ", ".join(f"{k} {v:+.1f}" for k, v in deltas.items()))
    assert ok


# -- 7 -------------------------------------------------------------------------------------


def test_criterion_7_latent_countermeasures(runs, toy_stack):
    t0 = time.perf_counter()
    protected = runs.protected()
    wers = {}
    for cfg in (
        DefenseConfig("latent-recon", latent_mode="recon"),
        DefenseConfig("latent-recon", latent_mode="ls-ls", latent_h=3),
        DefenseConfig("latent-recon", latent_mode="ls-rn", latent_noise_std=1.0),
    ):
        out = [countermeasures.latent_countermeasure(c, cfg, toy_stack.bundle) for c in protected]
        wers[cfg.latent_mode] = _summary(toy_stack, out)["wer"]
    seconds = time.perf_counter() - t0
    ok = all(w >= 80.0 for w in wers.values()) and seconds <= 15 * 60
    record(7, "latent countermeasures", ok, ", ".join(f"{k} WER {v:.1f}" for k, v in wers.items()))
    assert ok


# -- 8 -------------------------------------------------------------------------------------


def test_criterion_8_latency(runs, toy_stack):
    art = runs.train()[0]
    pool = runtime.UapPool([art])
    b = toy_stack.bundle
    x = AudioClip(np.concatenate([c.samples for c in toy_stack.test_clips[:3]])[:48000], 16000)
    runtime.protect(x, pool, b)  # warm-up
    lat = sorted(runtime.protect(x, pool, b).latency_ms for _ in range(5))
    median = lat[2]
    stream = np.concatenate([c.samples for c in toy_stack.test_clips[:6]])[: 10 * 16000]
    chunks = [stream[i : i + 16000] for i in range(0, len(stream), 16000)]
    t0 = time.perf_counter()
    n = sum(len(r.protected.samples) for r in runtime.protect_stream(chunks, pool, b))
    rtf = (time.perf_counter() - t0) / (n / 16000)
    ok = median <= 500.0 and rtf <= 1.0
    record(8, "latency budget", ok, f"3 s clip median {median:.0f} ms, stream real-time factor {rtf:.3f} with 1 s chunks")
    assert ok


# -- 9 -------------------------------------------------------------------------------------


def _pipeline(stack, out, text="open the door"):
    from latentuap import cli

    m = str(stack.models)
    assert cli.main(["prepare", "--models", m, "--text", text, "--out", str(out / "prep"), "--seed", "9"]) == 0
    assert (
        cli.main(
            ["train", "--models", m, "--target", str(out / "prep" / "target.npz"), "--dataset", str(stack.train_manifest), "--limit", "64"]
            + ["--max-epoch", "4", "--max-iter", "10", "--seed", "9", "--out", str(out / "uap")]
        )
        == 0
    )
    art = out / "uap" / "perturbation.luap"
    assert cli.main(["evaluate", "--models", m, "--dataset", str(stack.test_manifest), "--limit", "40", "--artifact", str(art), "--out", str(out / "eval"), "--seed", "9"]) == 0
    return art, sorted((out / "eval").glob("*.csv"))


def test_criterion_9_determinism(toy_stack, tmp_path):
    a_art, a_csv = _pipeline(toy_stack, tmp_path / "a")
    b_art, b_csv = _pipeline(toy_stack, tmp_path / "b")
    da, db = load_artifact(a_art).delta, load_artifact(b_art).delta
    same_delta = da.dtype == db.dtype and da.tobytes() == db.tobytes()
    same_csv = [p.name for p in a_csv] == [p.name for p in b_csv] and all(p.read_bytes() == q.read_bytes() for p, q in zip(a_csv, b_csv))
    same_file = a_art.read_bytes() == b_art.read_bytes()
    ok = same_delta and same_csv and len(a_csv) >= 2
    record(9, "determinism", ok, f"perturbation arrays identical {same_delta} (files {same_file}), {len(a_csv)} result CSVs identical {same_csv}")
    assert ok


# -- 10 ------------------------------------------------------------------------------------


def test_criterion_10_distribution(runs, toy_stack):
    t0 = time.perf_counter()
    originals = toy_stack.test_clips
    protected = runs.protected()
    target_cer = float(np.mean([metrics.cer(c.transcript, toy_stack.bundle.transcribe(p).text) for c, p in zip(originals, protected)]))
    std, noisy, noise_cer = evaluation.noise_at_matched_cer(toy_stack.bundle, originals, target_cer, seed=10)
    rep = evaluation.distribution_report(
        {"original": evaluation.mfcc_means(originals), "protected": evaluation.mfcc_means(protected), "white-noise": evaluation.mfcc_means(noisy)}
    )
    seconds = time.perf_counter() - t0
    ok = rep.overlap["protected"] > rep.overlap["white-noise"] and seconds <= 600
    record(
        10,
        "distribution report",
        ok,
        f"overlap protected {rep.overlap['protected']:.3f} vs white noise {rep.overlap['white-noise']:.3f} (noise std {std:.3g}, CER {noise_cer:.1f} vs protected {target_cer:.1f})",
    )
    assert ok
