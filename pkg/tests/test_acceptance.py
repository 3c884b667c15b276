"""Acceptance gate: ten criteria, one PASS/FAIL line each in the terminal summary.

Criteria 2, 6, 7, 8 and 10 share one full default-config pipeline run
(data, every training stage, evaluation and the gamma sweep), built once
per session. Runtimes are measured on this machine and asserted alongside
the metric thresholds.
"""

from __future__ import annotations

import hashlib
import json
import time

import numpy as np
import pytest

from stylefuse import nn
from stylefuse import pipeline as P
from stylefuse.align import MODALITIES, align_loss
from stylefuse.config import RunConfig, loads
from stylefuse.diffusion import (DenoiserConfig, DiffusionSchedule, LatentDiffusion, train_step)
from stylefuse.fusion import CrossFusion, FusionConfig, content_stats, cross_normalize, fuse
from stylefuse.metrics import (GaussianFit, diversity, fid, fid_from_features, foot_skate_ratio,
                               param_report, r_precision_top3)
from stylefuse.motion import STYLES, generate_motion
from stylefuse.nn import Tensor
from stylefuse.vae import MotionVAE, StyleEncoder, VaeConfig, vae_loss

from conftest import STAGES, TINY, invoke, train_tiny
from test_align import infonce_oracle
from test_fusion import fuse_oracle

RESULTS: dict = {}


def record(num: int, title: str, ok: bool, detail: str):
    RESULTS[num] = (title, bool(ok), detail)
    assert ok, f"criterion {num} ({title}): {detail}"


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    """Default config, every stage, plus evaluation and the default gamma sweep."""
    run = P.Run(tmp_path_factory.mktemp("full") / "run", RunConfig())
    timings = {}
    start = time.perf_counter()
    for name, fn in P.STAGE_FUNCS.items():
        t0 = time.perf_counter()
        fn(run)
        timings[name] = time.perf_counter() - t0
    t0 = time.perf_counter()
    report = P.evaluate(run)
    timings["evaluate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    sweep = P.gamma_sweep(run, run.cfg.eval.gamma_grid)
    timings["ablate-gamma"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - start
    (run.root / "acceptance_timings.json").write_text(json.dumps(timings, indent=1))
    return {"run": run, "report": report, "sweep": sweep, "timings": timings}


def test_c01_fusion_oracle_equivalence():
    rng = np.random.default_rng(0)
    cfg = FusionConfig(gamma=0.6, eta=1e-5)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        fc, fs = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))
        composed = fc + cfg.gamma * cross_normalize(Tensor(fs), content_stats(Tensor(fc)),
                                                    cfg.eta).data
        direct = fuse(Tensor(fc), Tensor(fs), cfg).data
        oracle = fuse_oracle(fc, fs, cfg.gamma, cfg.eta)
        worst = max(worst, np.abs(composed - oracle).max(), np.abs(direct - oracle).max())
    elapsed = time.perf_counter() - t0
    record(1, "fusion oracle equivalence", worst < 1e-6 and elapsed < 1.0,
           f"max abs err {worst:.2e} over 100 inputs, {elapsed:.3f} s")


def test_c02_fusion_identity_end_to_end(full_run):
    run = full_run["run"]
    corpus = P.load_run_corpus(run)
    system = P.System(run)
    plan = P.eval_plan(run, corpus)[::8][:32]
    t0 = time.perf_counter()
    stylized = P.generate_eval_set(system, plan, 0.0, "motion")
    plain = P.generate_eval_set(system, plan, 0.0, "none")
    elapsed = time.perf_counter() - t0
    same = stylized.tobytes() == plain.tobytes()
    record(2, "fusion identity (gamma = 0)", same and elapsed < 60,
           f"{len(plan)} samples bit-identical={same}, {elapsed:.1f} s")


def test_c03_zero_parameter_property():
    model = LatentDiffusion()
    enc = StyleEncoder(MotionVAE(VaeConfig()))
    model.set_mode("stylized", enc)
    modules = {"denoiser": model.denoiser, "style_encoder": enc, "fusion": CrossFusion()}
    rows = {r.module: r for r in param_report(modules, learnable={"style_encoder"})}
    enc_ids = {id(p) for p in enc.parameters()}
    trainable = {id(p) for m in modules.values() for p in m.parameters()}
    # parameters that actually receive gradient from one stylized step
    frames = np.stack([generate_motion("walk", s, i).frames for i, s in enumerate(STYLES[:4])])
    z0 = np.random.default_rng(0).standard_normal((4, 2, 32)).astype(np.float32)
    train_step(model, z0, np.arange(4), np.random.default_rng(1), "stylized", enc, frames,
               p_uncond=0.0).backward()
    touched = {id(t) for m in modules.values() for _, t in m.named_tensors()
               if t.grad is not None and np.any(t.grad != 0)}
    exact = trainable == enc_ids and touched == enc_ids and len(enc_ids) > 0
    ok = rows["fusion"].total == 0 and rows["fusion"].learnable == 0 and exact
    record(3, "zero-parameter fusion", ok,
           f"fusion total/learnable {rows['fusion'].total}/{rows['fusion'].learnable}; "
           f"stylized trainable set == gradient-receiving set == style encoder: {exact} "
           f"({rows['style_encoder'].learnable} of "
           f"{sum(r.total for r in rows.values())} parameters)")


def test_c04_gradient_integrity():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    errs = {}

    vae = MotionVAE(VaeConfig(latent_tokens=2, latent_dim=4, blocks=1, hidden=8, heads=2,
                              min_frames=4))
    frames = np.stack([generate_motion("walk", s, 0, 40).frames[:6] for s in ("old", "proud")])
    vae.normalizer.fit(frames)
    eps = rng.standard_normal((2, 2, 4))
    errs["vae_loss"] = nn.finite_diff_check_params(
        lambda: vae_loss(vae, frames, 0.1, eps=eps)[0],
        [vae.encoder.in_proj.weight, vae.decoder.out.weight])

    s, t = Tensor(rng.standard_normal((6, 5))), Tensor(rng.standard_normal((6, 5)))
    errs["align_loss"] = max(nn.finite_diff_check(lambda x: align_loss(x, s, 0.5), t),
                             nn.finite_diff_check(lambda x: align_loss(t, x, 0.5), s))

    den = LatentDiffusion(DenoiserConfig(latent_tokens=2, latent_dim=4, width=8, heads=2,
                                         blocks=2), DiffusionSchedule.linear(20),
                          FusionConfig(hook_block=1))
    enc = StyleEncoder(vae)
    z0 = rng.standard_normal((2, 2, 4))
    ids = np.array([0, 1])
    step = lambda: train_step(den, z0, ids, np.random.default_rng(1), "stylized", enc, frames,
                              p_uncond=0.0)
    errs["train_step"] = nn.finite_diff_check_params(
        step, [enc.encoder.in_proj.weight, den.denoiser.out.weight])

    fc, w = Tensor(rng.standard_normal((2, 3, 8))), Tensor(rng.standard_normal((2, 3, 8)))
    errs["fuse"] = nn.finite_diff_check(lambda x: nn.tsum(fuse(fc, x) * w),
                                        Tensor(rng.standard_normal((2, 3, 8))))
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    record(4, "gradient integrity", worst < 1e-3 and elapsed < 60,
           ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f"; {elapsed:.1f} s")


def test_c05_contrastive_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        t, s = rng.standard_normal((8, 32)), rng.standard_normal((8, 32))
        worst = max(worst, abs(align_loss(t, s, 0.07).item() - infonce_oracle(t, s, 0.07)))
    single = align_loss(rng.standard_normal((1, 32)), rng.standard_normal((1, 32))).item()
    record(5, "contrastive loss oracle", worst < 1e-6 and single == 0.0,
           f"max abs err {worst:.2e} over 20 batches of 8; "
           f"batch-of-1 loss {abs(single)} (exact zero: {single == 0.0})")


def test_c06_alignment_retrieval(full_run):
    run = full_run["run"]
    log = json.loads((run.root / "align" / "log.json").read_text())
    held = log["held_out_top1"]
    system = P.System(run)
    words = {m: np.mean([system.retriever.retrieve(s, 1, m)[0].label == s for s in STYLES])
             for m in MODALITIES}
    elapsed = full_run["timings"]["train-align"]
    ok = (held["text"] >= 0.95 and held["image"] >= 0.90 and held["audio"] >= 0.90
          and all(v == 1.0 for v in words.values()) and elapsed < 300)
    record(6, "alignment retrieval", ok,
           "held-out top-1 " + ", ".join(f"{m} {held[m]:.3f}" for m in MODALITIES)
           + "; word->index top-1 " + ", ".join(f"{m} {v:.2f}" for m, v in words.items())
           + f"; {elapsed:.1f} s")


def test_c07_stylization_efficacy(full_run):
    rep = full_run["report"]
    gen = rep["motion_guided"]
    total = full_run["timings"]["total"]
    ok = (gen["sra"] >= 60 and gen["content_accuracy"] >= 60 and rep["judge_calibration"] >= 95
          and total < 1800)
    record(7, "stylization efficacy", ok,
           f"SRA {gen['sra']:.1f}% (text-guided {rep['text_guided']['sra']:.1f}%, "
           f"no style {rep['none_guided']['sra']:.1f}%), content {gen['content_accuracy']:.1f}%, "
           f"judge calibration {rep['judge_calibration']:.1f}%, pipeline {total / 60:.1f} min")


def test_c08_gamma_sweep_shape(full_run):
    rows = {round(r["gamma"], 6): r for r in full_run["sweep"]}
    a, b, c = rows[0.0], rows[0.6], rows[1.2]
    ok = b["sra"] > a["sra"] and c["fid"] > b["fid"]
    record(8, "gamma sweep shape", ok,
           f"SRA {a['sra']:.1f} (0) -> {b['sra']:.1f} (0.6); "
           f"FID {b['fid']:.3f} (0.6) -> {c['fid']:.3f} (1.2)")


def test_c09_metric_unit_truths():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((500, 8))
    checks = {}
    checks["fid(a,a)"] = abs(fid_from_features(x, x)) <= 1e-6
    one = fid(GaussianFit(np.zeros(1), np.eye(1)), GaussianFit(np.ones(1), np.eye(1)))
    checks["fid N(0,1) vs N(1,1)"] = abs(one - 1.0) <= 1e-6
    static = np.repeat(generate_motion("walk", "neutral", 0).frames[:1], 40, axis=0)
    static[:, :3] = 0.0
    checks["foot skate static"] = foot_skate_ratio([static]) == 0.0
    checks["diversity identical"] = diversity(np.ones((20, 8))) == 0.0
    n = 640
    rate = r_precision_top3(rng.standard_normal((n, 16)), rng.standard_normal((n, 16)), seed=4)
    p = 3 / 32
    checks["R-precision chance"] = abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / n)
    record(9, "metric unit truths", all(checks.values()),
           ", ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items())
           + f" (R-precision {rate:.4f} vs {p:.4f}, n={n})")


def _hashes(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and (p.suffix in (".ckpt", ".smo")
                                               or p.name in ("log.json", "manifest.jsonl"))}


def _sample_outputs(run_dir, out_dir):
    """Run each sampling command twice to the same path; True if every rerun matches."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ref = sorted((run_dir / "data" / "test").glob("*old*"))[0]
    cmds = [["stylize", "--content", "a person is walking", "--style-modality", "text",
             "--style-input", "tiptoe", "--seed", "3", "--out", str(out_dir / "text.smo")],
            ["stylize", "--content", "a person is running", "--style-modality", "motion",
             "--style-input", str(ref), "--out", str(out_dir / "motion.smo")],
            ["interpolate", "--content", "a person hops forward", "--styles", "0.4:old",
             "--styles", "0.6:proud", "--out", str(out_dir / "interp.smo")]]
    runs = []
    for _ in range(2):
        for cmd in cmds:
            assert invoke(run_dir, *cmd).exit_code == 0
        runs.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                     for p in sorted(out_dir.iterdir())})
    return runs[0] == runs[1] and len(runs[0]) == 6


def test_c10_determinism(full_run, tmp_path):
    # every stage twice from scratch (small config, same code paths)
    a = train_tiny(tmp_path / "a")
    b = train_tiny(tmp_path / "b")
    ha, hb = _hashes(a), _hashes(b)
    stages_same = ha == hb and len(ha) > 100
    # each sampling command twice on the full run
    full = full_run["run"].root
    samples_same = _sample_outputs(full, tmp_path / "samples")
    # the cheapest full-config stages rerun in place must reproduce their checkpoints
    before = _hashes(full)
    for stage in ("train-classifier", "train-align"):
        P.STAGE_FUNCS[stage](full_run["run"])
    after = _hashes(full)
    full_same = before == after
    ok = stages_same and samples_same and full_same
    record(10, "determinism", ok,
           f"{len(ha)} tiny-run files identical={stages_same}; sampling outputs identical="
           f"{samples_same}; full-config classifier/align rerun identical={full_same}")
