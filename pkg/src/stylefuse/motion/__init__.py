"""Synthetic stylized-motion corpus in a root-velocity representation."""

from .corpus import (Corpus, CorpusConfig, CorpusConfigError, CorpusRecord, build_corpus,
                     load_corpus, write_corpus)
from .features import FEATURE_DIM, FPS, SKELETON, Skeleton, foot_skate_frames
from .io import MotionFormatError, decode_motion, encode_motion, load_motion, save_motion
from .synth import (CONTENT_TEXT, CONTENTS, STYLE_PARAMS, STYLES, TEXT_CONTENT,
                    MotionSequence, StyleParams, VocabularyError, generate_motion)

__all__ = [
    "CONTENTS", "CONTENT_TEXT", "Corpus", "CorpusConfig", "CorpusConfigError",
    "CorpusRecord", "FEATURE_DIM", "FPS", "MotionFormatError", "MotionSequence",
    "SKELETON", "STYLES", "STYLE_PARAMS", "Skeleton", "StyleParams", "TEXT_CONTENT",
    "VocabularyError", "build_corpus", "decode_motion", "encode_motion",
    "foot_skate_frames", "generate_motion", "load_corpus", "load_motion", "save_motion",
    "write_corpus",
]
