"""Pre-tokenised prompt corpus.

Two on-disk forms:

* text (any suffix but ``.bin``): one record per line, whitespace-separated
  integer token ids; blank lines are skipped.
* binary (``.bin``): repeated ``u32 length`` + ``length`` x ``u32`` ids,
  all little-endian.

Prompts are fixed-length windows cut from records long enough to hold them.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, InputError


def read_token_file(path: str | os.PathLike) -> list[np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read token file {path}: {exc}") from exc
    if path.suffix == ".bin":
        return _parse_binary(raw, path)
    records = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(np.array([int(t) for t in line.split()], dtype=np.int64))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-integer token") from exc
    return records


def _parse_binary(raw: bytes, path: Path) -> list[np.ndarray]:
    words = np.frombuffer(raw[: len(raw) - len(raw) % 4], dtype="<u4")
    if len(raw) % 4:
        raise DataError(f"{path}: size is not a multiple of 4 bytes")
    records, i = [], 0
    while i < words.size:
        n = int(words[i])
        if i + 1 + n > words.size:
            raise DataError(f"{path}: record at word {i} overruns the file")
        records.append(words[i + 1 : i + 1 + n].astype(np.int64))
        i += 1 + n
    return records


def write_token_file(path: str | os.PathLike, records: Sequence[Sequence[int]]) -> None:
    path = Path(path)
    if path.suffix == ".bin":
        parts = []
        for r in records:
            parts.append(np.array([len(r)], dtype="<u4"))
            parts.append(np.asarray(r, dtype="<u4"))
        path.write_bytes(b"".join(p.tobytes() for p in parts))
    else:
        path.write_text("".join(" ".join(str(int(t)) for t in r) + "\n" for r in records))


@dataclass(frozen=True, eq=False)
class Corpus:
    records: tuple[np.ndarray, ...]
    seq_len: int = 10

    def __post_init__(self):
        if self.seq_len < 1:
            raise InputError("seq_len must be >= 1")
        usable = tuple(i for i, r in enumerate(self.records) if r.size >= self.seq_len)
        if not usable:
            raise DataError(f"no record holds {self.seq_len} tokens")
        object.__setattr__(self, "_usable", usable)

    @classmethod
    def from_file(cls, path: str | os.PathLike, seq_len: int = 10) -> Corpus:
        return cls(tuple(read_token_file(path)), seq_len)

    def sample(self, rng: np.random.Generator) -> tuple[str, np.ndarray]:
        """A random window; returns ``("record:offset", tokens)``."""
        rec = self._usable[int(rng.integers(len(self._usable)))]
        r = self.records[rec]
        off = int(rng.integers(r.size - self.seq_len + 1))
        return f"{rec}:{off}", r[off : off + self.seq_len]

    def prompt(self, prompt_id: str) -> np.ndarray:
        rec, off = (int(x) for x in prompt_id.split(":"))
        return self.records[rec][off : off + self.seq_len]
