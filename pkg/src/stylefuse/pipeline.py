"""Staged training and inference on a run directory.

Layout under the run root::

    config.txt                      master resolved config
    data/                           corpus files + manifest.jsonl
    vae/vae.ckpt                    stage-1 (content corpus) VAE
    style_encoder/vae.ckpt          stage-2 (style corpus) VAE, used for latents
    style_encoder/style_encoder.ckpt pre-trained encoder (also the metric extractor)
    classifier/classifier.ckpt      style judge + content classifier
    diffusion/diffusion.ckpt        denoiser, tuned style encoder, latent classifier
    align/align.ckpt                projection, pooling head, retrieval index
    eval/                           metrics.yaml, gamma_sweep.csv

Each stage directory also holds ``config.txt`` (resolved config) and
``log.json``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as C
from . import nn
from .align import (AlignConfig, AlignmentIndex, ModalityEmbedder, PoolingHead, Projection,
                    StyleRetriever, interpolate_styles, label_top1, normalize_weights,
                    train_alignment)
from .checkpoint import file_sha256, load_checkpoint, prefixed, save_checkpoint, strip_prefix
from .diffusion import (DenoiserConfig, DiffusionSchedule, DiffusionTrainConfig,
                        LatentDiffusion, LatentStyleClassifier, SampleConfig, diffusion_from_meta,
                        diffusion_meta, sample_latents, train_content, train_latent_classifier,
                        train_stylized)
from .fusion import FusionConfig
from .metrics import (FeatureClassifier, FeatureExtractor, fid_from_features, diversity,
                      foot_skate_ratio, mm_dist, param_report, r_precision_top3, sra,
                      train_classifier)
from .motion import (CONTENT_TEXT, CONTENTS, STYLES, TEXT_CONTENT, Corpus, CorpusConfig,
                     MotionSequence, build_corpus, load_corpus, load_motion, save_motion,
                     write_corpus)
from .motion.synth import VocabularyError
from .vae import (MotionVAE, StyleEncoder, TrainLog, VaeConfig, VaeTrainConfig, run_stage)

log = logging.getLogger(__name__)

MODALITY_ALIASES = {"text": "text", "stub-image": "image", "stub-audio": "audio"}


class DependencyError(RuntimeError):
    """A required upstream artifact is missing."""

    def __init__(self, artifact: str, path):
        super().__init__(f"missing dependency '{artifact}': {path} not found")
        self.artifact = artifact
        self.path = Path(path)


class UsageError(ValueError):
    pass


# -- config adapters --------------------------------------------------------

def corpus_config(cfg: C.RunConfig) -> CorpusConfig:
    c = cfg.corpus
    return CorpusConfig(seed=cfg.seed, samples_per_cell=c.samples_per_cell,
                        num_frames=c.num_frames, test_fraction=c.test_fraction,
                        judge_samples_per_cell=c.judge_samples_per_cell)


def vae_config(cfg: C.RunConfig) -> VaeConfig:
    v = cfg.vae
    return VaeConfig(latent_tokens=v.latent_tokens, latent_dim=v.latent_dim, blocks=v.blocks,
                     hidden=v.hidden, heads=v.heads, seed=cfg.seed)


def vae_train_config(cfg: C.RunConfig) -> VaeTrainConfig:
    v = cfg.vae
    return VaeTrainConfig(beta=v.beta, warmup_steps=v.warmup_steps, stage1_steps=v.stage1_steps,
                          stage2_steps=v.stage2_steps, batch_size=v.batch_size, lr=v.lr,
                          stages=v.stages, seed=cfg.seed)


def fusion_config(cfg: C.RunConfig, gamma: float | None = None) -> FusionConfig:
    f = cfg.fusion
    return FusionConfig(gamma=f.gamma if gamma is None else gamma, eta=f.eta,
                        hook_block=f.hook_block)


def diffusion_train_config(cfg: C.RunConfig) -> DiffusionTrainConfig:
    d = cfg.diffusion
    return DiffusionTrainConfig(T=d.T, beta_start=d.beta_start, beta_end=d.beta_end,
                                p_uncond=d.p_uncond, p_pooled=d.p_pooled,
                                content_steps=d.content_steps, style_steps=d.style_steps,
                                batch_size=d.batch_size, style_batch_size=d.style_batch_size,
                                lr=d.lr, style_lr=d.style_lr, reference=d.reference,
                                seed=cfg.seed)


def sample_config(cfg: C.RunConfig) -> SampleConfig:
    s = cfg.sample
    return SampleConfig(steps=s.steps, w_cfg=s.w_cfg, w_style=s.w_style, w_cls=s.w_cls)


# -- run directory ----------------------------------------------------------

class Run:
    def __init__(self, root, cfg: C.RunConfig):
        self.root = Path(root)
        self.cfg = cfg

    def stage_dir(self, name: str) -> Path:
        d = self.root / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def require(self, artifact: str, path: Path) -> Path:
        if not path.exists():
            raise DependencyError(artifact, path)
        return path

    def finish_stage(self, name: str, record: dict):
        d = self.stage_dir(name)
        (d / "config.txt").write_text(C.dumps(self.cfg))
        (d / "log.json").write_text(json.dumps(record, indent=2, sort_keys=True, default=_jsonable))

    @property
    def data_dir(self):
        return self.root / "data"

    @property
    def vae_ckpt(self):
        return self.root / "vae" / "vae.ckpt"

    @property
    def style_vae_ckpt(self):
        return self.root / "style_encoder" / "vae.ckpt"

    @property
    def style_encoder_ckpt(self):
        return self.root / "style_encoder" / "style_encoder.ckpt"

    @property
    def classifier_ckpt(self):
        return self.root / "classifier" / "classifier.ckpt"

    @property
    def diffusion_ckpt(self):
        return self.root / "diffusion" / "diffusion.ckpt"

    @property
    def align_ckpt(self):
        return self.root / "align" / "align.ckpt"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not JSON serializable: {type(x)}")


def _stack(records) -> np.ndarray:
    return np.stack([r.motion.frames for r in records])


def load_run_corpus(run: Run) -> Corpus:
    run.require("data", run.data_dir / "manifest.jsonl")
    return load_corpus(run.data_dir)


def _load_vae(path: Path) -> MotionVAE:
    tensors, meta = load_checkpoint(path)
    model = MotionVAE(VaeConfig(**meta["config"]))
    model.load_state_dict(tensors)
    return model


def _load_style_encoder(path: Path, prefix: str | None = None) -> StyleEncoder:
    tensors, meta = load_checkpoint(path)
    if prefix:
        tensors = strip_prefix(prefix, tensors)
        meta = meta[prefix]
    enc = StyleEncoder(MotionVAE(VaeConfig(**meta["config"])))
    enc.load_state_dict(tensors)
    enc.requires_grad_(False)
    return enc


def _style_encoder_meta(enc: StyleEncoder) -> dict:
    return {"kind": "style_encoder", "config": asdict(enc.config)}


# -- stages -----------------------------------------------------------------

def gen_data(run: Run) -> Corpus:
    corpus = build_corpus(corpus_config(run.cfg))
    write_corpus(corpus, run.data_dir)
    run.root.mkdir(parents=True, exist_ok=True)
    (run.root / "config.txt").write_text(C.dumps(run.cfg))
    counts = {s: len(corpus.split(s)) for s in ("train", "test", "judge")}
    run.finish_stage("data", {"counts": counts})
    return corpus


def _content_and_style_frames(corpus: Corpus):
    train = corpus.split("train")
    content = _stack([r for r in train if r.style == "neutral"])
    return content, _stack(train)


def train_vae_stage(run: Run):
    corpus = load_run_corpus(run)
    content, style = _content_and_style_frames(corpus)
    tcfg = vae_train_config(run.cfg)
    model = MotionVAE(vae_config(run.cfg))
    seen = {"both": [content, style], "style_only": [style],
            "content_only": [content]}[tcfg.stages]
    model.normalizer.fit(np.concatenate(seen, axis=0))
    tlog = TrainLog()
    if tcfg.stages in ("both", "content_only"):
        run_stage(model, content, "content", tcfg, tlog)
    meta = {"kind": "vae", "stage": "content", "config": asdict(model.config)}
    save_checkpoint(run.stage_dir("vae") / "vae.ckpt", model.state_dict(), meta)
    run.finish_stage("vae", {"train": tlog.as_dict(), "parameters": model.num_parameters()})
    return model


def train_style_encoder_stage(run: Run):
    corpus = load_run_corpus(run)
    model = _load_vae(run.require("vae", run.vae_ckpt))
    _, style = _content_and_style_frames(corpus)
    tcfg = vae_train_config(run.cfg)
    tlog = TrainLog()
    if tcfg.stages in ("both", "style_only"):
        run_stage(model, style, "style", tcfg, tlog)
    d = run.stage_dir("style_encoder")
    save_checkpoint(d / "vae.ckpt", model.state_dict(),
                    {"kind": "vae", "stage": "style", "config": asdict(model.config)})
    enc = StyleEncoder(model)
    save_checkpoint(d / "style_encoder.ckpt", enc.state_dict(), _style_encoder_meta(enc))
    test = _stack(corpus.split("test"))
    with nn.no_grad():
        rec = model.decode(model.encode(test).mean, test.shape[1])
    xn, rn = model.normalizer.normalize(test), model.normalizer.normalize(rec)
    record = {"train": tlog.as_dict(), "test_recon_mse": float(np.mean((xn - rn) ** 2)),
              "test_variance": float(np.var(xn)), "encoder_parameters": enc.num_parameters()}
    run.finish_stage("style_encoder", record)
    return enc


def train_classifier_stage(run: Run):
    corpus = load_run_corpus(run)
    extractor = FeatureExtractor(_load_style_encoder(
        run.require("style_encoder", run.style_encoder_ckpt)))
    judge_split = corpus.split("judge")
    if not judge_split:
        raise UsageError("corpus has no judge split (corpus.judge_samples_per_cell = 0)")
    feats = extractor(_stack(judge_split))
    steps = run.cfg.classifier.steps
    judge = train_classifier(feats, [r.style for r in judge_split], STYLES, steps, seed=run.cfg.seed)
    content = train_classifier(feats, [r.content for r in judge_split], CONTENTS, steps,
                               seed=run.cfg.seed + 1)
    test = corpus.split("test")
    tf = extractor(_stack(test))
    record = {"judge_test_accuracy": judge.accuracy(tf, [r.style for r in test]),
              "content_test_accuracy": content.accuracy(tf, [r.content for r in test]),
              "train_records": len(judge_split)}
    tensors = {**prefixed("judge", judge.state_dict()), **prefixed("content", content.state_dict())}
    save_checkpoint(run.stage_dir("classifier") / "classifier.ckpt", tensors,
                    {"kind": "classifier", "judge_classes": list(STYLES),
                     "content_classes": list(CONTENTS)})
    run.finish_stage("classifier", record)
    return record


def _diffusion_model(cfg: C.RunConfig) -> LatentDiffusion:
    d = cfg.diffusion
    den = DenoiserConfig(latent_tokens=cfg.vae.latent_tokens, latent_dim=cfg.vae.latent_dim,
                         width=d.width, heads=d.heads, blocks=d.blocks, seed=cfg.seed)
    return LatentDiffusion(den, DiffusionSchedule.linear(d.T, d.beta_start, d.beta_end),
                           fusion_config(cfg))


def train_diffusion_stage(run: Run):
    corpus = load_run_corpus(run)
    vae = _load_vae(run.require("vae", run.style_vae_ckpt))
    encoder = _load_style_encoder(run.require("style_encoder", run.style_encoder_ckpt))
    train = corpus.split("train")
    frames = _stack(train)
    with nn.no_grad():
        latents = vae.encode(frames).mean.data
    model = _diffusion_model(run.cfg)
    model.fit_scale(latents)
    z = model.scale(latents).astype(np.float32)
    ids = model.denoiser.content.ids([r.content_text for r in train])
    styles = np.asarray([STYLES.index(r.style) for r in train])
    tcfg = diffusion_train_config(run.cfg)
    content_curve = train_content(model, z, ids, tcfg)
    style_curve = train_stylized(model, encoder, z, ids, styles, frames, tcfg)
    clf = LatentStyleClassifier(run.cfg.vae.latent_tokens, run.cfg.vae.latent_dim, len(STYLES),
                                seed=run.cfg.seed)
    clf_acc = train_latent_classifier(clf, z, styles, steps=run.cfg.classifier.latent_steps,
                                      seed=run.cfg.seed)
    tensors = {**prefixed("diffusion", model.state_dict()),
               **prefixed("style_encoder", encoder.state_dict()),
               **prefixed("latent_classifier", clf.state_dict())}
    meta = {"kind": "diffusion", **diffusion_meta(model),
            "style_encoder": _style_encoder_meta(encoder),
            "latent_classifier": {"num_styles": len(STYLES)}}
    save_checkpoint(run.stage_dir("diffusion") / "diffusion.ckpt", tensors, meta)
    run.finish_stage("diffusion", {"content_loss": content_curve, "stylized_loss": style_curve,
                                   "latent_classifier_train_accuracy": clf_acc,
                                   "latent_scale": float(model.latent_scale.data)})
    return model


def train_align_stage(run: Run):
    corpus = load_run_corpus(run)
    run.require("diffusion", run.diffusion_ckpt)
    encoder = _load_style_encoder(run.diffusion_ckpt, prefix="style_encoder")
    train, test = corpus.split("train"), corpus.split("test")
    pooled = encoder.pooled(_stack(train))
    embedder = ModalityEmbedder()
    a = run.cfg.align
    space = train_alignment(pooled, [r.style for r in train], embedder,
                            AlignConfig(tau0=a.tau0, epochs=a.epochs,
                                        steps_per_epoch=a.steps_per_epoch, lr=a.lr,
                                        train_head=a.train_head, seed=run.cfg.seed),
                            content_texts=[r.content_text for r in train])
    index = AlignmentIndex(space.head.keys(pooled), pooled, [r.style for r in train],
                           [r.path for r in train])
    test_keys = space.head.keys(encoder.pooled(_stack(test)))
    test_labels = [r.style for r in test]
    held_out = {m: label_top1(space.proj, embedder, test_keys, test_labels, m)
                for m in ("text", "image", "audio")}
    tensors = {**prefixed("proj", space.proj.state_dict()),
               **prefixed("head", space.head.state_dict()),
               **prefixed("content_proj", space.content_proj.state_dict()),
               **index.tensors()}
    meta = {"kind": "align", "index": index.manifest(), "embedder_hash": embedder.param_hash(),
            "tau0": a.tau0}
    save_checkpoint(run.stage_dir("align") / "align.ckpt", tensors, meta)
    (run.stage_dir("align") / "index_manifest.json").write_text(
        json.dumps(index.manifest(), indent=1))
    record = {"epoch_loss": space.log.epoch_loss, "train_top1": space.log.top1,
              "pos_cos": space.log.pos_cos, "neg_cos": space.log.neg_cos,
              "held_out_top1": held_out,
              "embedder_frozen": space.log.embedder_hash_before == space.log.embedder_hash_after,
              "content_proj": space.content_proj is not None}
    run.finish_stage("align", record)
    return record


STAGE_FUNCS = {
    "gen-data": gen_data,
    "train-vae": train_vae_stage,
    "train-style-encoder": train_style_encoder_stage,
    "train-classifier": train_classifier_stage,
    "train-diffusion": train_diffusion_stage,
    "train-align": train_align_stage,
}


def run_all(run: Run):
    for fn in STAGE_FUNCS.values():
        fn(run)


# -- loaded system ----------------------------------------------------------

class System:
    """Every trained component of a run, loaded for inference."""

    def __init__(self, run: Run, need_classifier: bool = False):
        self.run = run
        cfg = run.cfg
        self.vae = _load_vae(run.require("style_encoder", run.style_vae_ckpt))
        tensors, meta = load_checkpoint(run.require("diffusion", run.diffusion_ckpt))
        self.model = diffusion_from_meta(meta)
        self.model.load_state_dict(strip_prefix("diffusion", tensors))
        self.style_encoder = _load_style_encoder(run.diffusion_ckpt, prefix="style_encoder")
        self.latent_classifier = LatentStyleClassifier(cfg.vae.latent_tokens, cfg.vae.latent_dim,
                                                       meta["latent_classifier"]["num_styles"])
        self.latent_classifier.load_state_dict(strip_prefix("latent_classifier", tensors))

        atensors, ameta = load_checkpoint(run.require("align", run.align_ckpt))
        self.embedder = ModalityEmbedder()
        if self.embedder.param_hash() != ameta["embedder_hash"]:
            raise RuntimeError("modality embedder differs from the one used in alignment")
        dim = cfg.vae.latent_dim
        self.proj = Projection(out_dim=dim)
        self.proj.load_state_dict(strip_prefix("proj", atensors))
        self.head = PoolingHead(dim)
        self.head.load_state_dict(strip_prefix("head", atensors))
        self.content_proj = Projection(out_dim=dim)
        self.content_proj.load_state_dict(strip_prefix("content_proj", atensors))
        self.index = AlignmentIndex.from_tensors(atensors, ameta["index"])
        self.retriever = StyleRetriever(self.embedder, self.proj, self.index)

        self.extractor = FeatureExtractor(_load_style_encoder(
            run.require("style_encoder", run.style_encoder_ckpt)))
        self.judge = self.content_clf = None
        if need_classifier or run.classifier_ckpt.exists():
            ctensors, cmeta = load_checkpoint(run.require("classifier", run.classifier_ckpt))
            self.judge = FeatureClassifier(cmeta["judge_classes"])
            self.judge.load_state_dict(strip_prefix("judge", ctensors))
            self.content_clf = FeatureClassifier(cmeta["content_classes"])
            self.content_clf.load_state_dict(strip_prefix("content", ctensors))

    def generate(self, contents, seeds, style=None, gamma: float | None = None,
                 target_styles=None) -> np.ndarray:
        """Frames (B, F, D) for content sentences and optional style features."""
        cfg = self.run.cfg
        lat = sample_latents(self.model, contents, seeds, style, sample_config(cfg),
                             fusion_config(cfg, gamma), self.latent_classifier, target_styles)
        return self.vae.decode(lat, cfg.sample.num_frames)

    def style_target(self, frames) -> int:
        """Latent-classifier style index for a reference motion (classifier guidance)."""
        with nn.no_grad():
            z = self.model.scale(self.vae.encode(frames).mean.data).astype(np.float32)
            return int(self.latent_classifier(nn.Tensor(z)).data.argmax(axis=1)[0])

    def motion_keys(self, frames) -> np.ndarray:
        return self.head.keys(self.style_encoder.pooled(frames))

    def content_queries(self, texts) -> np.ndarray:
        with nn.no_grad():
            return self.content_proj(self.embedder.embed(list(texts))).data


def _write_output(frames: np.ndarray, content_text: str, style_label: str, out: Path,
                  provenance: dict) -> dict:
    motion = MotionSequence(frames=frames.astype(np.float32), content=TEXT_CONTENT[content_text],
                            style=style_label)
    save_motion(motion, out)
    provenance = {**provenance, "output": str(out), "output_sha256": file_sha256(out)}
    Path(str(out) + ".json").write_text(json.dumps(provenance, indent=2, sort_keys=True,
                                                   default=_jsonable))
    return provenance


def _check_content(content_text: str):
    if content_text not in TEXT_CONTENT:
        raise VocabularyError(f"unknown content text {content_text!r}; "
                              f"known: {sorted(TEXT_CONTENT)}")


def stylize(system: System, content_text: str, modality: str, style_input: str, out,
            gamma: float | None = None, seed: int = 0) -> dict:
    _check_content(content_text)
    cfg = system.run.cfg
    gamma = cfg.fusion.gamma if gamma is None else gamma
    prov = {"content": content_text, "modality": modality, "style_input": style_input,
            "gamma": gamma, "seed": seed, "w_cfg": cfg.sample.w_cfg,
            "w_style": cfg.sample.w_style, "w_cls": cfg.sample.w_cls}
    if modality == "motion":
        ref = load_motion(style_input)
        style = system.style_encoder.tokens(ref.frames).data
        label, target = ref.style, system.style_target(ref.frames)
        prov.update({"retrieved_label": None, "similarity": None, "reference_style": ref.style})
    elif modality in MODALITY_ALIASES:
        hit = system.retriever.retrieve(style_input, 1, MODALITY_ALIASES[modality])[0]
        style = hit.feature[None]
        label, target = hit.label, STYLES.index(hit.label)
        prov.update({"retrieved_label": hit.label, "retrieved_motion": hit.motion_id,
                     "similarity": hit.similarity, "weights": [1.0]})
    else:
        raise UsageError(f"unknown style modality {modality!r}")
    frames = system.generate([content_text], [seed], style, gamma, [target])[0]
    if system.judge is not None:
        prov["judge_prediction"] = system.judge.predict(system.extractor(frames))[0]
    return _write_output(frames, content_text, label, Path(out), prov)


def parse_style_weights(items) -> list:
    pairs = []
    for item in items:
        if ":" not in item:
            raise UsageError(f"style entry {item!r} is not weight:style")
        w, s = item.split(":", 1)
        try:
            pairs.append((float(w), s))
        except ValueError as exc:
            raise UsageError(f"bad weight in {item!r}") from exc
    return pairs


def interpolate(system: System, content_text: str, pairs, out, gamma: float | None = None,
                seed: int = 0, modality: str = "text") -> dict:
    _check_content(content_text)
    if len(pairs) < 2:
        raise UsageError("interpolation needs at least two weight:style pairs")
    # canonical order: argument order must not change the summation or the output file
    pairs = sorted(pairs, key=lambda p: (p[1], p[0]))
    weights = [w for w, _ in pairs]
    try:
        normalize_weights(weights)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg = system.run.cfg
    gamma = cfg.fusion.gamma if gamma is None else gamma
    feat, w, hits = interpolate_styles(system.retriever, [s for _, s in pairs], weights,
                                       MODALITY_ALIASES.get(modality, modality))
    target = STYLES.index(hits[int(np.argmax(w))].label)
    frames = system.generate([content_text], [seed], feat[None], gamma, [target])[0]
    prov = {"content": content_text, "styles": [s for _, s in pairs],
            "weights": [float(x) for x in w], "retrieved": [h.label for h in hits],
            "similarities": [h.similarity for h in hits], "gamma": gamma, "seed": seed}
    if system.judge is not None:
        prov["judge_prediction"] = system.judge.predict(system.extractor(frames))[0]
    label = "+".join(f"{s}" for (_, s), wi in zip(pairs, w) if wi > 0)
    return _write_output(frames, content_text, label, Path(out), prov)


# -- evaluation -------------------------------------------------------------

def eval_plan(run: Run, corpus: Corpus):
    """(content text, target style, seed, reference frames) for every evaluated sample."""
    k = run.cfg.eval.samples_per_cell
    test = corpus.split("test")
    plan = []
    for ci, content in enumerate(CONTENTS):
        for si, style in enumerate(STYLES):
            refs = [r for r in test if r.style == style]
            for i in range(k):
                seed = int(np.random.SeedSequence([run.cfg.seed, 7, ci, si, i]).generate_state(1)[0])
                plan.append((CONTENT_TEXT[content], style, seed, refs[i % len(refs)].motion.frames))
    return plan


def generate_eval_set(system: System, plan, gamma: float | None, guided: str = "motion"):
    contents = [p[0] for p in plan]
    seeds = [p[2] for p in plan]
    targets = [STYLES.index(p[1]) for p in plan]
    if guided == "none":
        style = None
    elif guided == "motion":
        style = system.style_encoder.tokens(np.stack([p[3] for p in plan])).data
    elif guided == "text":
        style = np.stack([system.retriever.retrieve(p[1], 1)[0].feature for p in plan])
    else:
        raise UsageError(f"unknown guidance source {guided!r}")
    frames = []
    batch = 128
    for i in range(0, len(plan), batch):
        s = None if style is None else style[i:i + batch]
        frames.append(system.generate(contents[i:i + batch], seeds[i:i + batch], s, gamma,
                                      targets[i:i + batch]))
    return np.concatenate(frames, axis=0)


def set_metrics(system: System, frames: np.ndarray, plan, real_feats: np.ndarray,
                seed: int = 0) -> dict:
    cfg = system.run.cfg
    feats = system.extractor(frames)
    texts = [p[0] for p in plan]
    q = system.content_queries(texts)
    keys = system.motion_keys(frames)
    out = {"fid": fid_from_features(feats, real_feats),
           "mm_dist": mm_dist(q, keys),
           "diversity": diversity(feats, cfg.eval.diversity_pairs, seed),
           "foot_skate": foot_skate_ratio(frames)}
    if len(plan) >= cfg.eval.pool:
        out["r_precision_top3"] = r_precision_top3(keys, q, cfg.eval.pool, seed)
    if system.judge is not None:
        out["sra"] = sra(system.judge.predict(feats), [p[1] for p in plan])
        contents = [TEXT_CONTENT[t] for t in texts]
        out["content_accuracy"] = 100.0 * float(np.mean(
            np.asarray(system.content_clf.predict(feats)) == np.asarray(contents)))
    return out


def evaluate(run: Run, gamma: float | None = None) -> dict:
    corpus = load_run_corpus(run)
    system = System(run, need_classifier=True)
    test = corpus.split("test")
    real = _stack(test)
    real_feats = system.extractor(real)
    plan = eval_plan(run, corpus)
    g = run.cfg.fusion.gamma if gamma is None else gamma
    report = {"gamma": g, "samples": len(plan)}
    real_plan = [(r.content_text, r.style, 0, None) for r in test]
    report["real_test"] = set_metrics(system, real, real_plan, real_feats)
    report["judge_calibration"] = report["real_test"].get("sra")
    for guided in ("motion", "text", "none"):
        frames = generate_eval_set(system, plan, g, guided)
        report[f"{guided}_guided"] = set_metrics(system, frames, plan, real_feats)
    report["parameters"] = [asdict(r) for r in parameter_table(system)]
    d = run.stage_dir("eval")
    (d / "metrics.yaml").write_text(render_report(report))
    (d / "config.txt").write_text(C.dumps(run.cfg))
    return report


def parameter_table(system: System) -> list:
    """Overall vs stylization-trainable parameter counts (only the style encoder trains)."""
    from .fusion import CrossFusion

    modules = {"vae_decoder": system.vae.decoder, "style_encoder": system.style_encoder,
               "denoiser": system.model.denoiser, "fusion": CrossFusion(system.model.fusion),
               "projection": system.proj, "pooling_head": system.head,
               "modality_embedder": system.embedder}
    return param_report(modules, learnable={"style_encoder"})


def gamma_sweep(run: Run, grid) -> list:
    grid = [float(g) for g in grid]
    if not grid:
        raise UsageError("empty gamma grid")
    corpus = load_run_corpus(run)
    system = System(run, need_classifier=True)
    real_feats = system.extractor(_stack(corpus.split("test")))
    plan = eval_plan(run, corpus)
    baseline = system.extractor(generate_eval_set(system, plan, 0.0, "none"))
    rows = []
    for g in grid:
        frames = generate_eval_set(system, plan, g, "motion")
        feats = system.extractor(frames)
        targets = [p[1] for p in plan]
        rows.append({"gamma": g,
                     "sra": sra(system.judge.predict(feats), targets),
                     "fid": fid_from_features(feats, real_feats),
                     "fid_vs_baseline": fid_from_features(feats, baseline),
                     "content_accuracy": 100.0 * float(np.mean(
                         np.asarray(system.content_clf.predict(feats))
                         == np.asarray([TEXT_CONTENT[p[0]] for p in plan]))),
                     "foot_skate": foot_skate_ratio(frames)})
    d = run.stage_dir("eval")
    write_sweep_csv(rows, d / "gamma_sweep.csv")
    return rows


SWEEP_FIELDS = ("gamma", "sra", "fid", "fid_vs_baseline", "content_accuracy", "foot_skate")


def write_sweep_csv(rows, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: f"{row[k]:.6g}" for k in SWEEP_FIELDS})
    return path


def render_report(report: dict) -> str:
    import yaml

    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, (np.floating, float)):
            return round(float(x), 6)
        if isinstance(x, np.integer):
            return int(x)
        return x

    return yaml.safe_dump(clean(report), sort_keys=False)
