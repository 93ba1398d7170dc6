"""File-backed stub providers for offline runs and tests.

Each stub reads a canned-response JSON file and behaves deterministically, so
pipeline runs against stubs are byte-reproducible given the same seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

from .extraction import ParseTree
from .generation import VisualFeatures
from .providers import ProviderError


def _load(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _digest(*parts: str) -> int:
    joined = "\x1f".join(parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:8], "big")


class StubCorefProvider:
    """Substitution table: sentences not in the table pass through unchanged."""

    def __init__(self, path):
        self.table = _load(path)

    def resolve(self, texts) -> list[str]:
        return [self.table.get(t, t) for t in texts]


class StubParseProvider:
    """Canned dependency parses keyed by exact sentence text."""

    def __init__(self, path):
        self.path = str(path)
        self.table = _load(path)

    def parse(self, sentence: str) -> ParseTree:
        raw = self.table.get(sentence)
        if raw is None:
            raise ProviderError(f"no canned parse for {sentence!r} in {self.path}")
        return ParseTree.from_dict(raw)


class StubRCProvider:
    """Canned answer lists per question; first answer found in context wins.

    Returning only spans present in the context keeps the reading
    comprehension contract (answers are substrings) intact by construction.
    """

    def __init__(self, path):
        self.table = _load(path)

    def answer(self, context: str, question: str) -> str | None:
        for candidate in self.table.get(question, []):
            if candidate in context:
                return candidate
        return None


class StubLMProvider:
    """Deterministic language model stand-in.

    Sampling returns canned continuations for the sequence's inference type,
    rotated by a content hash so different inputs see different samples;
    nucleus_p == 0 degenerates to repeating the modal (first) continuation.
    Token log-probabilities are content-hashed into [-2.5, -0.5] unless a
    uniform vocabulary size is configured.
    """

    def __init__(self, samples_path=None, seed: int = 13, vocab_size: int | None = None):
        self.samples = _load(samples_path)["samples"] if samples_path else {}
        self.seed = seed
        self.vocab_size = vocab_size

    def _canned(self, sequence) -> list[str]:
        key = sequence.inference_type.value if sequence.inference_type else "default"
        texts = self.samples.get(key) or self.samples.get("default")
        if not texts:
            raise ProviderError(f"no canned continuations for {key!r}")
        return texts

    def sample(self, sequence, nucleus_p: float, max_new: int, n: int) -> list[str]:
        texts = self._canned(sequence)
        if nucleus_p <= 0:
            return [texts[0]] * n
        start = _digest(str(self.seed), sequence.text()) % len(texts)
        return [texts[(start + k) % len(texts)] for k in range(n)]

    def logprobs(self, sequence, continuation: str) -> list[float]:
        tokens = continuation.split()
        if not tokens:
            return []
        if self.vocab_size is not None:
            return [-math.log(self.vocab_size)] * len(tokens)
        context = sequence.text()
        return [
            -(0.5 + (_digest(str(self.seed), context, str(i), tok) % 2000) / 1000.0)
            for i, tok in enumerate(tokens)
        ]


class StubVisionProvider:
    """Pseudo-embeddings hashed from the frame identity and object labels."""

    def __init__(self, dim: int = 8):
        self.dim = dim

    def _vec(self, *parts: str) -> tuple[float, ...]:
        return tuple(
            (_digest(*parts, str(i)) % 1000) / 1000.0 for i in range(self.dim)
        )

    def features(self, image, boxes) -> VisualFeatures:
        frame_key = f"{image.video_id}:{image.segment_index}:{image.frame_index}"
        objects = tuple(
            (f"[Object{i}]", self._vec(frame_key, box.label))
            for i, box in enumerate(boxes, start=1)
        )
        return VisualFeatures(global_vec=self._vec(frame_key), objects=objects)


def fixture_path(name: str) -> Path:
    """Path to a bundled fixture data file."""
    return Path(__file__).parent / "fixtures" / name
