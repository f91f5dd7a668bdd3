"""Hashed prompt embeddings and nearest-prompt retrieval."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import write_json

EMBED_DIM = 256
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def normalize_text(text: str) -> str:
    return _NON_ALNUM.sub(" ", text.lower()).strip()


def text_features(text: str) -> list[str]:
    """Word unigrams plus character trigrams of the normalized text."""
    norm = normalize_text(text)
    words = norm.split()
    trigrams = [norm[i:i + 3] for i in range(len(norm) - 2)]
    return words + trigrams


def embed_prompt(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    feats = text_features(text)
    if not feats:
        raise ValueError(f"prompt {text!r} has no alphanumeric content")
    vec = np.zeros(dim)
    for f in feats:
        vec[fnv1a_64(f.encode("utf-8")) % dim] += 1.0
    return vec / np.linalg.norm(vec)


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))


class EmptyStoreError(LookupError):
    """Raised when retrieval is attempted before any prompt was stored."""


@dataclass
class StoreEntry:
    prompt: str
    video_id: str
    insertion_index: int
    embedding: np.ndarray = field(repr=False)


class PromptStore:
    """Append-only list of training prompts with their embeddings."""

    def __init__(self):
        self.entries: list[StoreEntry] = []

    def __len__(self):
        return len(self.entries)

    def add(self, prompt: str, video_id: str) -> StoreEntry:
        entry = StoreEntry(prompt, video_id, len(self.entries), embed_prompt(prompt))
        self.entries.append(entry)
        return entry

    def prefix(self, n: int) -> "PromptStore":
        """Store as it was after the first ``n`` insertions."""
        out = PromptStore()
        out.entries = self.entries[:n]
        return out

    def last(self) -> StoreEntry:
        if not self.entries:
            raise EmptyStoreError("no knowledge yet: prompt store is empty")
        return self.entries[-1]

    def retrieve(self, query: str) -> tuple[StoreEntry, float]:
        if not self.entries:
            raise EmptyStoreError("no knowledge yet: prompt store is empty")
        q = embed_prompt(query)
        mat = np.stack([e.embedding for e in self.entries])
        scores = mat @ q
        # argmax returns the first maximum, i.e. the earliest insertion
        best = int(np.argmax(scores))
        return self.entries[best], float(scores[best])

    def to_json(self) -> list[dict]:
        return [
            {"prompt": e.prompt, "video_id": e.video_id, "insertion_index": e.insertion_index}
            for e in self.entries
        ]

    def save(self, path) -> None:
        write_json(path, self.to_json())

    @classmethod
    def load(cls, path) -> "PromptStore":
        rows = json.loads(Path(path).read_text())
        store = cls()
        for i, row in enumerate(sorted(rows, key=lambda r: r["insertion_index"])):
            if row["insertion_index"] != i:
                raise ValueError(f"{path}: insertion indices are not gapless from 0")
            store.add(row["prompt"], row["video_id"])
        return store


def retrieve(store: PromptStore, query_text: str) -> tuple[str, float]:
    entry, score = store.retrieve(query_text)
    return entry.video_id, score
