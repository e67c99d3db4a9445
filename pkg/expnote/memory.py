# expnote/memory.py

import json
import re
import logging
import threading
from enum import Enum
from pathlib import Path
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterator, List, Optional

from .exceptions import EmptyField, FileOperationError, FormatError

logger = logging.getLogger(__name__)

_TOKEN_SPLIT = re.compile(r"[\W_]+")
_RECORD_FIELDS = ("id", "key", "value", "polarity", "source_case_id", "mode")


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"

    @classmethod
    def from_verdict(cls, correct: bool) -> "Polarity":
        """Map a pre-feedback correctness verdict to the experience polarity."""
        return cls.POSITIVE if correct else cls.NEGATIVE


class NoteMode(str, Enum):
    ABSTRACT = "abstract"
    CASE = "case"


def tokenize(text: str) -> FrozenSet[str]:
    """
    Split text into the set of lowercase alphanumeric tokens.

    Every non-alphanumeric character is a separator; empty fragments are
    dropped and duplicates collapse.
    """
    if not text:
        return frozenset()
    return frozenset(t for t in _TOKEN_SPLIT.split(text.lower()) if t)


@dataclass(frozen=True)
class Experience:
    """A noted key/value experience with its polarity and provenance."""
    id: int
    key: str
    value: str
    polarity: Polarity
    source_case_id: str
    mode: NoteMode

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'key': self.key,
            'value': self.value,
            'polarity': self.polarity.value,
            'source_case_id': self.source_case_id,
            'mode': self.mode.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Experience':
        missing = [name for name in _RECORD_FIELDS if name not in data]
        if missing:
            raise ValueError(f"missing fields: {', '.join(missing)}")
        if not isinstance(data['id'], int) or isinstance(data['id'], bool):
            raise ValueError("id must be an integer")
        for name in ('key', 'value', 'source_case_id'):
            if not isinstance(data[name], str):
                raise ValueError(f"{name} must be a string")
        if not data['key'].strip() or not data['value'].strip():
            raise ValueError("key and value must be non-empty")
        return cls(
            id=data['id'],
            key=data['key'],
            value=data['value'],
            polarity=Polarity(data['polarity']),
            source_case_id=data['source_case_id'],
            mode=NoteMode(data['mode']),
        )


@dataclass(frozen=True)
class RetrievalResult:
    experience: Experience
    score: int


class MemoryStore:
    """
    The experience notebook: an ordered, append-only store of experiences.

    Notes are serialized through a lock (single writer); recall works on a
    snapshot and may be called from any number of threads. When the store is
    bound to a path every accepted note is appended to that file immediately,
    so an interrupted training pass still leaves a loadable store behind.
    """

    def __init__(self, experiences: Optional[List[Experience]] = None, path: Optional[str] = None):
        self._experiences: List[Experience] = []
        self._key_tokens: Dict[int, FrozenSet[str]] = {}
        self._lock = threading.Lock()
        self.path = Path(path) if path else None
        for experience in experiences or []:
            self._append(experience)

    def _append(self, experience: Experience):
        if self._experiences and experience.id <= self._experiences[-1].id:
            raise ValueError(f"Experience ids must be strictly increasing, got {experience.id}")
        self._experiences.append(experience)
        self._key_tokens[experience.id] = tokenize(experience.key)

    def _next_id(self) -> int:
        return self._experiences[-1].id + 1 if self._experiences else 0

    def note(self, key: str, value: str, polarity: Polarity, source_case_id: str,
             mode: NoteMode = NoteMode.ABSTRACT) -> Experience:
        """
        Store a new experience under the next ordinal id.

        Raises:
            EmptyField: If key or value is blank after trimming
            FileOperationError: If the bound store file cannot be appended to
        """
        key = (key or "").strip()
        value = (value or "").strip()
        if not key:
            raise EmptyField("Experience key cannot be empty.")
        if not value:
            raise EmptyField("Experience value cannot be empty.")

        with self._lock:
            experience = Experience(
                id=self._next_id(),
                key=key,
                value=value,
                polarity=Polarity(polarity),
                source_case_id=str(source_case_id),
                mode=NoteMode(mode),
            )
            if self.path is not None:
                self._append_to_file(experience)
            self._append(experience)

        logger.debug(f"Noted experience {experience.id} ({experience.polarity.value}, {experience.mode.value}): {key}")
        return experience

    def recall(self, query: str, k: int, polarity_filter: Optional[Polarity] = None,
               mode_filter: Optional[NoteMode] = None) -> List[RetrievalResult]:
        """
        Retrieve up to k experiences whose keys share words with the query.

        The score is the number of distinct tokens shared by the query and the
        key. Results are ordered by score descending, then by id ascending.
        Experiences with no shared token are never returned.
        """
        if k < 1:
            raise ValueError(f"k must be a positive integer, got {k}")

        query_tokens = tokenize(query)
        if not query_tokens:
            return []

        with self._lock:
            snapshot = list(self._experiences)

        results = []
        for experience in snapshot:
            if polarity_filter is not None and experience.polarity != polarity_filter:
                continue
            if mode_filter is not None and experience.mode != mode_filter:
                continue
            score = len(query_tokens & self._key_tokens[experience.id])
            if score >= 1:
                results.append(RetrievalResult(experience=experience, score=score))

        results.sort(key=lambda r: (-r.score, r.experience.id))
        return results[:k]

    def store_count(self) -> int:
        return len(self._experiences)

    def count_by_polarity(self) -> Dict[str, int]:
        counts = {Polarity.POSITIVE.value: 0, Polarity.NEGATIVE.value: 0}
        for experience in self._experiences:
            counts[experience.polarity.value] += 1
        return counts

    @property
    def experiences(self) -> List[Experience]:
        return list(self._experiences)

    def __len__(self) -> int:
        return len(self._experiences)

    def __iter__(self) -> Iterator[Experience]:
        return iter(self.experiences)

    # --- Persistence ---

    def _append_to_file(self, experience: Experience):
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(_encode(experience) + "\n")
        except OSError as e:
            logger.error(f"Failed to append experience to {self.path}: {e}")
            raise FileOperationError(f"Failed to append to memory file {self.path}: {e}") from e

    def save(self, path: str):
        """Atomically write the whole store, one JSON object per line."""
        target = Path(path)
        temp_file = target.with_suffix(target.suffix + ".tmp")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(temp_file, 'w', encoding='utf-8') as f:
                for experience in self.experiences:
                    f.write(_encode(experience) + "\n")
            temp_file.replace(target)
            logger.info(f"Saved {len(self)} experiences to {target}")
        except OSError as e:
            logger.error(f"Failed to save memory to {target}: {e}")
            raise FileOperationError(f"Failed to save memory file {target}: {e}") from e

    @classmethod
    def load(cls, path: str) -> 'MemoryStore':
        """
        Load a store written by save() or by an autosaving training run.

        Raises:
            FileOperationError: If the file cannot be read
            FormatError: On the first malformed line (1-based line number)
        """
        source = Path(path)
        try:
            with open(source, 'r', encoding='utf-8') as f:
                lines = f.read().split("\n")
        except OSError as e:
            logger.error(f"Failed to read memory file {source}: {e}")
            raise FileOperationError(f"Failed to read memory file {source}: {e}") from e

        store = cls()
        for line_number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                if not isinstance(data, dict):
                    raise ValueError("record is not an object")
                store._append(Experience.from_dict(data))
            except (json.JSONDecodeError, ValueError, TypeError) as e:
                raise FormatError(f"malformed experience record in {source}: {e}", line=line_number) from e

        logger.info(f"Loaded {len(store)} experiences from {source}")
        return store

    @classmethod
    def open(cls, path: str) -> 'MemoryStore':
        """Load the store at path if it exists and keep appending new notes to it."""
        target = Path(path)
        store = cls.load(str(target)) if target.exists() else cls()
        store.path = target
        return store


def _encode(experience: Experience) -> str:
    return json.dumps(experience.to_dict(), ensure_ascii=False)
