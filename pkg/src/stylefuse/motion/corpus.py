"""Labelled content x style corpus with stratified splits and a JSONL manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import load_motion, save_motion
from .synth import CONTENT_TEXT, CONTENTS, STYLES, MotionSequence, generate_motion


class CorpusConfigError(ValueError):
    pass


@dataclass
class CorpusConfig:
    seed: int = 0
    samples_per_cell: int = 16
    num_frames: int = 60
    test_fraction: float = 0.2
    # extra held-out sequences per cell for the evaluation judges; never
    # seen by any generator stage
    judge_samples_per_cell: int = 0
    contents: tuple = CONTENTS
    styles: tuple = STYLES

    def validate(self):
        if self.samples_per_cell < 4:
            raise CorpusConfigError("samples_per_cell must be >= 4")
        if not 0.0 < self.test_fraction < 1.0:
            raise CorpusConfigError("test_fraction must lie in (0, 1)")
        if self.judge_samples_per_cell < 0:
            raise CorpusConfigError("judge_samples_per_cell must be >= 0")
        for c in self.contents:
            if c not in CONTENTS:
                raise CorpusConfigError(f"unknown content {c!r}")
        for s in self.styles:
            if s not in STYLES:
                raise CorpusConfigError(f"unknown style {s!r}")


@dataclass
class CorpusRecord:
    motion: MotionSequence
    split: str
    seed: int
    path: str = ""

    @property
    def content(self) -> str:
        return self.motion.content

    @property
    def style(self) -> str:
        return self.motion.style

    @property
    def style_word(self) -> str:
        return self.motion.style

    @property
    def content_text(self) -> str:
        return CONTENT_TEXT[self.motion.content]


@dataclass
class Corpus:
    records: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def __len__(self):
        return len(self.records)


_SPLIT_TAG = {"main": 0, "judge": 1}


def _sample_seed(master: int, tag: int, cell: int, index: int) -> int:
    return int(np.random.SeedSequence([master, tag, cell, index]).generate_state(1)[0])


def build_corpus(cfg: CorpusConfig) -> Corpus:
    """Generate every (content, style) cell and split it stratified by cell."""
    cfg.validate()
    n = cfg.samples_per_cell
    n_test = min(n - 1, max(1, int(round(cfg.test_fraction * n))))
    records = []
    cell = 0
    for content in cfg.contents:
        for style in cfg.styles:
            order = np.random.default_rng([cfg.seed, cell]).permutation(n)
            test_ids = set(order[:n_test].tolist())
            for i in range(n):
                seed = _sample_seed(cfg.seed, _SPLIT_TAG["main"], cell, i)
                m = generate_motion(content, style, seed, cfg.num_frames)
                records.append(CorpusRecord(m, "test" if i in test_ids else "train", seed))
            for i in range(cfg.judge_samples_per_cell):
                seed = _sample_seed(cfg.seed, _SPLIT_TAG["judge"], cell, i)
                m = generate_motion(content, style, seed, cfg.num_frames)
                records.append(CorpusRecord(m, "judge", seed))
            cell += 1
    return Corpus(records)


def write_corpus(corpus: Corpus, root) -> Path:
    """Write one motion file per record plus ``manifest.jsonl``."""
    root = Path(root)
    counters: dict = {}
    lines = []
    for rec in corpus.records:
        key = (rec.split, rec.content, rec.style)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        rel = f"{rec.split}/{rec.content}__{rec.style}__{idx:03d}.smo"
        save_motion(rec.motion, root / rel)
        rec.path = rel
        lines.append(json.dumps({"path": rel, "content": rec.content_text,
                                 "style": rec.style_word, "split": rec.split,
                                 "seed": rec.seed}, sort_keys=True))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_corpus(root) -> Corpus:
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"corpus manifest missing: {manifest}")
    records = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        m = load_motion(root / entry["path"])
        records.append(CorpusRecord(m, entry["split"], int(entry["seed"]), entry["path"]))
    return Corpus(records)
