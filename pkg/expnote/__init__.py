# expnote/__init__.py

"""
ExpNote - experience notebook for black-box LLM agents.

This package provides the core functionality for:
- Storing and retrieving reusable experiences
- The THINK / NOTE / RECALL / ANSWER action protocol
- Training and testing episodes against pluggable LLM backends
- Task datasets and the LETS generator
- Accuracy, improvement and efficiency analysis
- Error handling
"""

from .config import ExperimentConfig
from .exceptions import (
    ExpNoteException,
    ConfigurationError,
    FileOperationError,
    FormatError,
    MemoryStoreError,
    EmptyField,
    ProtocolError,
    UnparsableAction,
    TemplateError,
    BackendError,
    BackendFailure,
    BackendAuthError,
    ScriptMiss,
    CassetteMiss,
    DatasetError,
    InvalidVocabulary,
    IndexOutOfRange,
    EvaluationError,
    EmptyRun,
    IdMismatch,
    ZeroCount,
    NonMonotoneCheckpoints
)
from .memory import Experience, MemoryStore, NoteMode, Polarity, RetrievalResult, tokenize
from .protocol import (
    Answer,
    Note,
    PromptBundle,
    Recall,
    Think,
    feedback,
    judge,
    load_bundle,
    parse_action,
    render_test_prompt,
    render_train_prompt,
    serialize
)
from .llm_backends import (
    CassetteBackend,
    ChatRequest,
    LiveBackend,
    LLMBackend,
    RecordingBackend,
    ScriptedBackend,
    create_backend
)
from .agent import (
    ExperimentResult,
    TaskInstance,
    Trajectory,
    Variant,
    VariantConfig,
    run_experiment,
    run_test_episode,
    run_train_episode
)
from .datasets import Vocabulary, gen_lets, lets_oracle, load_tasks, load_vocabulary, split, write_tasks
from .evaluation import RunReport, BucketCounts, accuracy, efficiency, improvement_analysis, training_curve
from .history import RunManifest, TrajectoryLog

__version__ = "1.0.0"
__author__ = "ExpNote Development Team"

__all__ = [
    "ExperimentConfig",
    "ExpNoteException",
    "ConfigurationError",
    "FileOperationError",
    "FormatError",
    "MemoryStoreError",
    "EmptyField",
    "ProtocolError",
    "UnparsableAction",
    "TemplateError",
    "BackendError",
    "BackendFailure",
    "BackendAuthError",
    "ScriptMiss",
    "CassetteMiss",
    "DatasetError",
    "InvalidVocabulary",
    "IndexOutOfRange",
    "EvaluationError",
    "EmptyRun",
    "IdMismatch",
    "ZeroCount",
    "NonMonotoneCheckpoints",
    "Experience",
    "MemoryStore",
    "NoteMode",
    "Polarity",
    "RetrievalResult",
    "tokenize",
    "Answer",
    "Note",
    "PromptBundle",
    "Recall",
    "Think",
    "feedback",
    "judge",
    "load_bundle",
    "parse_action",
    "render_test_prompt",
    "render_train_prompt",
    "serialize",
    "CassetteBackend",
    "ChatRequest",
    "LiveBackend",
    "LLMBackend",
    "RecordingBackend",
    "ScriptedBackend",
    "create_backend",
    "ExperimentResult",
    "TaskInstance",
    "Trajectory",
    "Variant",
    "VariantConfig",
    "run_experiment",
    "run_test_episode",
    "run_train_episode",
    "Vocabulary",
    "gen_lets",
    "lets_oracle",
    "load_tasks",
    "load_vocabulary",
    "split",
    "write_tasks",
    "RunReport",
    "BucketCounts",
    "accuracy",
    "efficiency",
    "improvement_analysis",
    "training_curve",
    "RunManifest",
    "TrajectoryLog"
]
