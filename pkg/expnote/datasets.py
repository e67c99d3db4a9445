# expnote/datasets.py

import json
import random
import logging
from pathlib import Path
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .agent import TaskInstance
from .exceptions import FileOperationError, FormatError, IndexOutOfRange, InvalidVocabulary

logger = logging.getLogger(__name__)

DEFAULT_VOCABULARY_PATH = Path(__file__).parent / "data" / "vocabulary.txt"
VOCABULARY_SIZE = 100
MIN_WORD_LENGTH = 4
MAX_WORD_LENGTH = 10
WORDS_PER_QUESTION = 3


@dataclass(frozen=True)
class Vocabulary:
    """Exactly 100 distinct lowercase alphabetic words of length 4-10."""
    words: Tuple[str, ...]

    def __post_init__(self):
        words = tuple(self.words)
        object.__setattr__(self, 'words', words)
        if len(words) != VOCABULARY_SIZE:
            raise InvalidVocabulary(f"Vocabulary must hold exactly {VOCABULARY_SIZE} words, got {len(words)}.")
        if len(set(words)) != len(words):
            raise InvalidVocabulary("Vocabulary words must be distinct.")
        for word in words:
            if not (word.isascii() and word.isalpha() and word.islower()):
                raise InvalidVocabulary(f"Vocabulary word {word!r} is not lowercase alphabetic.")
            if not (MIN_WORD_LENGTH <= len(word) <= MAX_WORD_LENGTH):
                raise InvalidVocabulary(
                    f"Vocabulary word {word!r} has length {len(word)}, "
                    f"outside [{MIN_WORD_LENGTH}, {MAX_WORD_LENGTH}].")


@dataclass(frozen=True)
class LetsInstance:
    words: Tuple[str, ...]
    indexes: Tuple[int, ...]
    question: str
    answer: str

    def to_task(self, task_id: str) -> TaskInstance:
        return TaskInstance(id=task_id, question=self.question, answer=self.answer)


def load_vocabulary(path: str = str(DEFAULT_VOCABULARY_PATH)) -> Vocabulary:
    """One word per line; blank lines are ignored."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            words = [line.strip() for line in f if line.strip()]
    except OSError as e:
        raise FileOperationError(f"Failed to read vocabulary {path}: {e}") from e
    return Vocabulary(tuple(words))


def ordinal_suffix(n: int) -> str:
    """English ordinal: 1st, 2nd, 3rd, 4th ... 11th, 12th, 13th ... 21st."""
    if n < 1:
        raise ValueError(f"Ordinals start at 1, got {n}")
    if 11 <= n % 100 <= 13:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


def lets_oracle(words: Sequence[str], indexes: Sequence[int]) -> str:
    """
    Concatenate the 1-based indexed letter of each word.

    Raises:
        IndexOutOfRange: If an index falls outside its word
    """
    if len(words) != len(indexes):
        raise IndexOutOfRange(f"Got {len(words)} words but {len(indexes)} indexes.")
    letters = []
    for word, index in zip(words, indexes):
        if not (1 <= index <= len(word)):
            raise IndexOutOfRange(f"Index {index} is outside the word {word!r} (length {len(word)}).")
        letters.append(word[index - 1])
    return "".join(letters)


def render_lets_question(words: Sequence[str], indexes: Sequence[int]) -> str:
    parts = [f'the {ordinal_suffix(i)} letter of "{w}"' for w, i in zip(words, indexes)]
    if len(parts) == 1:
        joined = parts[0]
    elif len(parts) == 2:
        joined = f"{parts[0]} and {parts[1]}"
    else:
        joined = ", ".join(parts[:-1]) + f", and {parts[-1]}"
    return f"Splice {joined} together."


def make_lets_instance(words: Sequence[str], indexes: Sequence[int]) -> LetsInstance:
    return LetsInstance(
        words=tuple(words),
        indexes=tuple(indexes),
        question=render_lets_question(words, indexes),
        answer=lets_oracle(words, indexes),
    )


def gen_lets(count: int, seed: int, vocab: Vocabulary) -> List[LetsInstance]:
    """
    Generate count letter-splicing instances, deterministic under (seed, vocab).
    Each instance draws 3 distinct words and a uniform index per word.
    """
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    if not isinstance(vocab, Vocabulary):
        vocab = Vocabulary(tuple(vocab))

    rng = random.Random(seed)
    instances = []
    for _ in range(count):
        words = rng.sample(vocab.words, WORDS_PER_QUESTION)
        indexes = [rng.randint(1, len(word)) for word in words]
        instances.append(make_lets_instance(words, indexes))
    logger.info(f"Generated {count} LETS instances with seed {seed}")
    return instances


def lets_tasks(instances: Sequence[LetsInstance], prefix: str = "lets") -> List[TaskInstance]:
    width = max(4, len(str(len(instances))))
    return [instance.to_task(f"{prefix}-{i:0{width}d}") for i, instance in enumerate(instances)]


# --- Task files ---

def load_tasks(path: str) -> List[TaskInstance]:
    """
    Read a task file: one {id, question, answer} object per line, file order kept.

    Raises:
        FileOperationError: If the file cannot be read
        FormatError: On a malformed record or duplicate id (1-based line number)
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.read().split("\n")
    except OSError as e:
        logger.error(f"Failed to read task file {path}: {e}")
        raise FileOperationError(f"Failed to read task file {path}: {e}") from e

    instances: List[TaskInstance] = []
    seen = set()
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            instance = TaskInstance(id=str(data['id']), question=data['question'], answer=data['answer'])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as e:
            raise FormatError(f"malformed task record in {path}: {e}", line=line_number) from e
        if instance.id in seen:
            raise FormatError(f"duplicate task id {instance.id!r} in {path}", line=line_number)
        seen.add(instance.id)
        instances.append(instance)

    logger.info(f"Loaded {len(instances)} tasks from {path}")
    return instances


def write_tasks(path: str, instances: Sequence[TaskInstance]):
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w', encoding='utf-8') as f:
            for instance in instances:
                f.write(json.dumps(instance.to_dict(), ensure_ascii=False) + "\n")
        logger.info(f"Wrote {len(instances)} tasks to {target}")
    except OSError as e:
        logger.error(f"Failed to write task file {path}: {e}")
        raise FileOperationError(f"Failed to write task file {path}: {e}") from e


def split(instances: Sequence[TaskInstance], train_ratio: float, seed: int) -> Tuple[List[TaskInstance], List[TaskInstance]]:
    """Seeded shuffle, then the first round(len * train_ratio) cases become the training set."""
    if not (0 < train_ratio < 1):
        raise ValueError(f"train_ratio must lie strictly between 0 and 1, got {train_ratio}")
    shuffled = list(instances)
    random.Random(seed).shuffle(shuffled)
    n_train = round(len(shuffled) * train_ratio)
    return shuffled[:n_train], shuffled[n_train:]
