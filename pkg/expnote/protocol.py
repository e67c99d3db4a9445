# expnote/protocol.py

import re
import logging
from pathlib import Path
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .exceptions import FileOperationError, TemplateError, UnparsableAction

logger = logging.getLogger(__name__)

NO_RELEVANT_EXPERIENCE = "No relevant experience"

FORMAT_REMINDER = (
    "Please reply with exactly one command on its own line: "
    "THINK[your thoughts], NOTE[key words]: experience, or ANSWER[your answer]."
)
RECALL_REMINDER = "RECALL is not available during training. Use THINK or NOTE instead."
RECALL_AT_TEST_REMINDER = "Relevant experiences were already recalled for you above. Give your ANSWER."
NOTE_AT_TEST_REMINDER = "NOTE is not available during testing. Give your ANSWER."
ANSWER_FIRST_REMINDER = "Please give your answer first, as ANSWER[your answer]."
THINK_ACK = "OK."
NOTE_ACK = "Experience noted."

SLOT_PATTERN = re.compile(r"\{(demonstrations|question|experiences|feedback)\}")
DEMONSTRATION_SEPARATOR = "###"

BUNDLE_FILES = {
    'train_template': "train.txt",
    'reflect_template': "reflect.txt",
    'test_template': "test.txt",
    'train_demonstrations': "train_demos.txt",
    'test_demonstrations': "test_demos.txt",
}


# --- Commands ---

@dataclass(frozen=True)
class Think:
    text: str


@dataclass(frozen=True)
class Note:
    key: str
    value: str

    def __post_init__(self):
        if not self.key.strip() or not self.value.strip():
            raise ValueError("NOTE requires a non-empty key and value")


@dataclass(frozen=True)
class Recall:
    query: str


@dataclass(frozen=True)
class Answer:
    text: str


Command = Union[Think, Note, Recall, Answer]

_KEYWORDS = {"THINK": Think, "RECALL": Recall, "ANSWER": Answer, "NOTE": Note}
# A command starts a line, after optional indentation; its argument may span lines.
_COMMAND_START = re.compile(r"^[^\S\n]*(THINK|RECALL|ANSWER|NOTE)\[", re.IGNORECASE | re.MULTILINE)
_NOTE_COLON = re.compile(r"[^\S\n]*:")


def _bracket_argument(text: str, start: int) -> Optional[Tuple[str, int]]:
    """Return the bracketed argument opening at text[start] and the index after its ']'."""
    depth = 0
    for index in range(start, len(text)):
        char = text[index]
        if char == "[":
            depth += 1
        elif char == "]":
            depth -= 1
            if depth == 0:
                return text[start + 1:index], index + 1
    return None


def _parse_command_at(raw: str, match: re.Match) -> Optional[Command]:
    keyword = match.group(1).upper()
    parsed = _bracket_argument(raw, match.end() - 1)
    if parsed is None:
        return None
    argument, rest_start = parsed

    if keyword != "NOTE":
        return _KEYWORDS[keyword](argument)

    colon = _NOTE_COLON.match(raw, rest_start)
    if colon is None:
        return None
    # The value runs to the next line that opens a command, or to the end of the reply.
    following = _COMMAND_START.search(raw, colon.end())
    value_end = following.start() if following else len(raw)
    key, value = argument.strip(), raw[colon.end():value_end].strip()
    if not key or not value:
        return None
    return Note(key=key, value=value)


def parse_action(raw: str) -> Command:
    """
    Parse an LLM reply into its first well-formed command.

    Recognized forms (case-insensitive, at the start of a line):
    THINK[...], RECALL[...], ANSWER[...] and NOTE[key]: value. Bracketed
    arguments may nest brackets and span lines; a NOTE value continues
    until the next line starting with a command.

    Raises:
        UnparsableAction: If the reply carries no well-formed command
    """
    text = raw or ""
    for match in _COMMAND_START.finditer(text):
        command = _parse_command_at(text, match)
        if command is not None:
            return command
    raise UnparsableAction(text)


def serialize(command: Command) -> str:
    """Render a command in the grammar accepted by parse_action."""
    if isinstance(command, Note):
        return f"NOTE[{command.key}]: {command.value}"
    if isinstance(command, Think):
        return f"THINK[{command.text}]"
    if isinstance(command, Recall):
        return f"RECALL[{command.query}]"
    if isinstance(command, Answer):
        return f"ANSWER[{command.text}]"
    raise TypeError(f"Not a command: {command!r}")


# --- Prompt bundles ---

@dataclass(frozen=True)
class PromptBundle:
    """
    The prompts of one task.

    train_template carries {demonstrations} and {question}; reflect_template is
    the follow-up training turn carrying {feedback}; test_template carries
    {demonstrations}, {question} and {experiences}.
    """
    name: str
    train_template: str
    reflect_template: str
    test_template: str
    train_demonstrations: Tuple[str, ...]
    test_demonstrations: Tuple[str, ...]

    def validate(self):
        _check_slots("train", self.train_template, ("demonstrations", "question"))
        _check_slots("reflect", self.reflect_template, ("feedback",))
        _check_slots("test", self.test_template, ("demonstrations", "question", "experiences"))


def _check_slots(label: str, template: str, required: Sequence[str]):
    found = SLOT_PATTERN.findall(template)
    for slot in required:
        occurrences = found.count(slot)
        if occurrences != 1:
            raise TemplateError(f"The {label} template must contain {{{slot}}} exactly once (found {occurrences}).")
    unexpected = sorted(set(found) - set(required))
    if unexpected:
        raise TemplateError(f"The {label} template has unsupported slots: {', '.join(unexpected)}")


def _fill(label: str, template: str, slots: Dict[str, str]) -> str:
    _check_slots(label, template, tuple(slots))
    # Single pass so slot markers inside filled values are left alone.
    return SLOT_PATTERN.sub(lambda m: slots[m.group(1)], template)


def _require_question(question: str):
    if not question or not question.strip():
        raise TemplateError("Cannot render a prompt for an empty question.")


def render_train_prompt(bundle: PromptBundle, question: str) -> str:
    _require_question(question)
    return _fill("train", bundle.train_template, {
        'demonstrations': "\n\n".join(bundle.train_demonstrations),
        'question': question,
    })


def render_reflect_prompt(bundle: PromptBundle, feedback_text: str) -> str:
    return _fill("reflect", bundle.reflect_template, {'feedback': feedback_text})


def render_experiences(values: Sequence[str]) -> str:
    if not values:
        return NO_RELEVANT_EXPERIENCE
    return "\n".join(values)


def render_test_prompt(bundle: PromptBundle, question: str, experiences: Sequence[str]) -> str:
    """
    Render the testing prompt with the retrieved experience values, one per line.
    An empty list embeds the failure prompt instead.
    """
    _require_question(question)
    return _fill("test", bundle.test_template, {
        'demonstrations': "\n\n".join(bundle.test_demonstrations),
        'question': question,
        'experiences': render_experiences(list(experiences)),
    })


# --- Feedback and judging ---

def feedback(y_hat: Optional[str], y: str, correct: bool) -> str:
    """Verdict plus the gold answer; nothing else is revealed."""
    if correct:
        return f"Your answer is correct. The answer is {y}."
    return f"Your answer is wrong. The correct answer is {y}."


def normalize_answer(text: Optional[str]) -> str:
    return " ".join((text or "").split()).lower()


def judge(y_hat: Optional[str], y: str) -> bool:
    """Exact match after lowercasing, trimming and collapsing internal whitespace."""
    if y_hat is None:
        return False
    return normalize_answer(y_hat) == normalize_answer(y)


# --- Loading bundles from disk ---

def _read_text(path: Path) -> str:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return f.read()
    except OSError as e:
        logger.error(f"Failed to read prompt file {path}: {e}")
        raise FileOperationError(f"Failed to read prompt file {path}: {e}") from e


def split_demonstrations(text: str) -> Tuple[str, ...]:
    blocks: List[str] = []
    current: List[str] = []
    for line in text.splitlines():
        if line.strip() == DEMONSTRATION_SEPARATOR:
            blocks.append("\n".join(current).strip())
            current = []
        else:
            current.append(line)
    blocks.append("\n".join(current).strip())
    return tuple(block for block in blocks if block)


def load_bundle(directory: str) -> PromptBundle:
    """
    Load a prompt bundle from a directory holding train.txt, reflect.txt,
    test.txt, train_demos.txt and test_demos.txt. Demonstrations are separated
    by a line containing only '###'.

    Raises:
        FileOperationError: If a bundle file is missing or unreadable
        TemplateError: If a template lacks one of its slots
    """
    root = Path(directory)
    texts = {field: _read_text(root / filename) for field, filename in BUNDLE_FILES.items()}
    bundle = PromptBundle(
        name=root.name,
        train_template=texts['train_template'].rstrip("\n"),
        reflect_template=texts['reflect_template'].rstrip("\n"),
        test_template=texts['test_template'].rstrip("\n"),
        train_demonstrations=split_demonstrations(texts['train_demonstrations']),
        test_demonstrations=split_demonstrations(texts['test_demonstrations']),
    )
    bundle.validate()
    logger.info(f"Loaded prompt bundle '{bundle.name}' with "
                f"{len(bundle.train_demonstrations)}/{len(bundle.test_demonstrations)} demonstrations")
    return bundle


def discover_bundles(root: str) -> Dict[str, PromptBundle]:
    """Load every bundle directory under root; broken bundles are logged and skipped."""
    bundles: Dict[str, PromptBundle] = {}
    root_path = Path(root)
    if not root_path.is_dir():
        logger.warning(f"Prompt directory not found: {root_path}")
        return bundles

    for candidate in sorted(root_path.iterdir()):
        if not candidate.is_dir() or candidate.name.startswith(("__", ".")):
            continue
        try:
            bundles[candidate.name] = load_bundle(str(candidate))
        except (FileOperationError, TemplateError) as e:
            logger.warning(f"Skipping prompt bundle {candidate.name}: {e}")
    return bundles
