# expnote/llm_backends.py

import json
import hashlib
import logging
import threading
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import backoff
import requests

from .config import ExperimentConfig
from .exceptions import (
    BackendAuthError,
    BackendFailure,
    CassetteMiss,
    ConfigurationError,
    FileOperationError,
    FormatError,
    ScriptMiss,
)

logger = logging.getLogger(__name__)


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def to_dict(self) -> Dict[str, str]:
        return {'role': Role(self.role).value, 'content': self.content}


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: Sequence[ChatMessage]
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if not self.messages:
            raise ValueError("A chat request needs at least one message.")
        if Role(self.messages[-1].role) != Role.USER:
            raise ValueError("The last message of a chat request must come from the user.")
        if self.temperature < 0:
            raise ValueError("Temperature cannot be negative.")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive.")

    @property
    def last_user_message(self) -> str:
        return self.messages[-1].content

    def wire_messages(self) -> List[Dict[str, str]]:
        return [message.to_dict() for message in self.messages]


def request_digest(messages: Sequence[ChatMessage]) -> str:
    """SHA-256 over the canonical JSON form of the message list."""
    canonical = json.dumps([[Role(m.role).value, m.content] for m in messages],
                           ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


class LLMBackend(ABC):
    """Uniform completion interface shared by every backend."""

    name = "abstract"

    @abstractmethod
    def complete(self, request: ChatRequest) -> str:
        """Return the assistant reply for the request."""
        pass

    def close(self):
        pass


# --- Live HTTP chat-completion client ---

class _TransientError(Exception):
    """A transport failure worth retrying."""


class LiveBackend(LLMBackend):
    """
    Chat-completion client for any endpoint speaking the common JSON shape.

    Posts {model, messages, temperature, max_tokens} to <base_url>/chat/completions
    and reads the first choice's message content. Timeouts, connection errors,
    429 and 5xx responses are retried with exponential backoff; the number of
    requests in flight is bounded by a semaphore.
    """

    name = "live"

    def __init__(self, base_url: str, api_key: str = "", timeout_seconds: float = 60.0,
                 max_in_flight: int = 4, max_attempts: int = 3, backoff_factor: float = 1.0):
        if not base_url or not base_url.strip():
            raise ConfigurationError("The live backend needs a base_url.")
        if max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be at least 1.")

        self.url = f"{base_url.rstrip('/')}/chat/completions"
        self.timeout_seconds = timeout_seconds
        self.max_attempts = max_attempts
        self._in_flight = threading.BoundedSemaphore(max_in_flight)

        self.session = requests.Session()
        self.session.headers.update({"Content-Type": "application/json"})
        if api_key:
            self.session.headers.update({"Authorization": f"Bearer {api_key}"})

        self._post_with_retry = backoff.on_exception(
            backoff.expo,
            _TransientError,
            max_tries=max_attempts,
            factor=backoff_factor,
            jitter=None,
            logger=logger,
        )(self._post_once)

        logger.info(f"Live backend initialized for {self.url} (max in flight: {max_in_flight})")

    def _post_once(self, payload: Dict[str, Any]) -> requests.Response:
        try:
            response = self.session.post(self.url, json=payload, timeout=self.timeout_seconds)
        except requests.exceptions.Timeout as e:
            logger.warning(f"Timeout calling {self.url}: {e}")
            raise _TransientError(f"Request timed out: {e}") from e
        except requests.exceptions.ConnectionError as e:
            logger.warning(f"Connection error calling {self.url}: {e}")
            raise _TransientError(f"Connection failed: {e}") from e
        except requests.exceptions.RequestException as e:
            raise BackendFailure(f"An unexpected request error occurred: {e}") from e

        status_code = response.status_code
        if status_code == 429 or status_code >= 500:
            logger.warning(f"Retryable HTTP {status_code} from {self.url}")
            raise _TransientError(f"HTTP {status_code}: {response.text[:200]}")
        if status_code in (401, 403):
            raise BackendAuthError(f"Authentication failed ({status_code}). Check EXPNOTE_API_KEY.",
                                   status_code=status_code)
        if status_code >= 400:
            raise BackendFailure(f"HTTP Error {status_code}: {response.text[:200]}", status_code=status_code)
        return response

    def complete(self, request: ChatRequest) -> str:
        payload = {
            'model': request.model_name,
            'messages': request.wire_messages(),
            'temperature': request.temperature,
            'max_tokens': request.max_tokens,
        }
        with self._in_flight:
            try:
                response = self._post_with_retry(payload)
            except _TransientError as e:
                logger.error(f"Giving up on {self.url} after {self.max_attempts} attempts: {e}")
                raise BackendFailure(f"Completion failed after {self.max_attempts} attempts: {e}") from e

        try:
            data = response.json()
            content = data['choices'][0]['message']['content']
        except (ValueError, KeyError, IndexError, TypeError) as e:
            logger.error(f"Malformed completion response from {self.url}: {e}")
            raise BackendFailure(f"Malformed completion response: {e}") from e
        return content or ""

    def close(self):
        self.session.close()


# --- Scripted backend ---

@dataclass
class ScriptEntry:
    """A canned reply for any last user message containing `matcher`."""
    matcher: str
    reply: str
    consume_once: bool = False

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScriptEntry':
        return cls(matcher=data['matcher'], reply=data['reply'], consume_once=bool(data.get('consume_once', False)))


class ScriptedBackend(LLMBackend):
    """
    Deterministic stand-in for an LLM. Entries are checked in declaration
    order against the last user message; consume_once entries answer a single
    time, which lets a script play a fixed sequence of replies.
    """

    name = "scripted"

    def __init__(self, entries: Sequence[ScriptEntry]):
        self.entries: List[ScriptEntry] = list(entries)
        self._consumed: set = set()
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str) -> 'ScriptedBackend':
        return cls(_read_jsonl(path, ScriptEntry.from_dict, "script"))

    def complete(self, request: ChatRequest) -> str:
        message = request.last_user_message
        with self._lock:
            for index, entry in enumerate(self.entries):
                if index in self._consumed:
                    continue
                if entry.matcher in message:
                    if entry.consume_once:
                        self._consumed.add(index)
                    return entry.reply
        preview = message if len(message) <= 80 else message[-80:]
        raise ScriptMiss(f"No script entry matches the last user message: {preview!r}")


# --- Cassettes ---

@dataclass(frozen=True)
class CassetteRecord:
    request_digest: str
    reply: str

    def to_dict(self) -> Dict[str, str]:
        return {'request_digest': self.request_digest, 'reply': self.reply}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CassetteRecord':
        return cls(request_digest=data['request_digest'], reply=data['reply'])


class CassetteBackend(LLMBackend):
    """Replays replies recorded by RecordingBackend, keyed by message-list digest."""

    name = "cassette"

    def __init__(self, records: Sequence[CassetteRecord]):
        self.replies: Dict[str, str] = {}
        for record in records:
            self.replies.setdefault(record.request_digest, record.reply)

    @classmethod
    def from_file(cls, path: str) -> 'CassetteBackend':
        records = _read_jsonl(path, CassetteRecord.from_dict, "cassette")
        logger.info(f"Loaded {len(records)} cassette records from {path}")
        return cls(records)

    def complete(self, request: ChatRequest) -> str:
        digest = request_digest(request.messages)
        if digest not in self.replies:
            raise CassetteMiss(f"No recorded reply for request digest {digest[:12]}")
        return self.replies[digest]


class RecordingBackend(LLMBackend):
    """Wraps another backend and appends every exchange to a cassette file."""

    def __init__(self, inner: LLMBackend, cassette_path: str):
        self.inner = inner
        self.name = f"{inner.name}+recording"
        self.cassette_path = Path(cassette_path)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        reply = self.inner.complete(request)
        record = CassetteRecord(request_digest=request_digest(request.messages), reply=reply)
        with self._lock:
            try:
                self.cassette_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.cassette_path, 'a', encoding='utf-8') as f:
                    f.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
            except OSError as e:
                logger.error(f"Failed to append to cassette {self.cassette_path}: {e}")
                raise FileOperationError(f"Failed to write cassette {self.cassette_path}: {e}") from e
        return reply

    def close(self):
        self.inner.close()


def _read_jsonl(path: str, parse, label: str) -> list:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.read().split("\n")
    except OSError as e:
        raise FileOperationError(f"Failed to read {label} file {path}: {e}") from e

    items = []
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            items.append(parse(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise FormatError(f"malformed {label} record in {path}: {e}", line=line_number) from e
    return items


def create_backend(config: ExperimentConfig) -> LLMBackend:
    """
    Factory function to build the backend named by the configuration.

    Live runs are wrapped in a RecordingBackend when record_cassette is set so
    they can be replayed later with the cassette backend.
    """
    if config.backend == "live":
        backend: LLMBackend = LiveBackend(
            base_url=config.base_url,
            api_key=config.api_key,
            timeout_seconds=config.timeout_seconds,
            max_in_flight=config.max_in_flight,
            max_attempts=config.max_attempts,
            backoff_factor=config.backoff_factor,
        )
        if config.record_cassette and config.cassette_path:
            backend = RecordingBackend(backend, config.cassette_path)
        return backend
    if config.backend == "scripted":
        if not config.script_path:
            raise ConfigurationError("The scripted backend needs script_path.")
        return ScriptedBackend.from_file(config.script_path)
    if config.backend == "cassette":
        if not config.cassette_path:
            raise ConfigurationError("The cassette backend needs cassette_path.")
        return CassetteBackend.from_file(config.cassette_path)
    raise ConfigurationError(f"Unsupported backend: {config.backend}")
