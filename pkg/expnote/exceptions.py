# expnote/exceptions.py

class ExpNoteException(Exception):
    """Base exception class for all ExpNote-related errors."""
    pass

class ConfigurationError(ExpNoteException):
    """Raised when there's a configuration problem."""
    pass

class FileOperationError(ExpNoteException):
    """Raised when reading or writing a run artifact fails."""
    pass

class FormatError(ExpNoteException):
    """
    Raised when a line-delimited file contains a malformed record.
    Carries the 1-based line number of the offending record.
    """
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

class MemoryStoreError(ExpNoteException):
    """Base class for experience memory errors."""
    pass

class EmptyField(MemoryStoreError):
    """Raised when an experience key or value is blank after trimming."""
    pass

class ProtocolError(ExpNoteException):
    """Base class for action grammar and prompt rendering errors."""
    pass

class UnparsableAction(ProtocolError):
    """Raised when an LLM reply contains no recognizable command."""
    def __init__(self, raw: str):
        preview = raw if len(raw) <= 80 else raw[:77] + "..."
        super().__init__(f"No command found in reply: {preview!r}")
        self.raw = raw

class TemplateError(ProtocolError):
    """Raised when a prompt template is missing a required slot."""
    pass

class BackendError(ExpNoteException):
    """Base class for LLM backend errors."""
    pass

class BackendFailure(BackendError):
    """
    Raised when the completion backend cannot produce a reply.
    Contains the HTTP status code when the failure came from the server.
    """
    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code

class BackendAuthError(BackendFailure):
    """Raised when the completion endpoint rejects the credential."""
    pass

class ScriptMiss(BackendError):
    """Raised when no scripted entry matches the last user message."""
    pass

class CassetteMiss(BackendError):
    """Raised when a replayed request digest was never recorded."""
    pass

class DatasetError(ExpNoteException):
    """Base class for dataset generation errors."""
    pass

class InvalidVocabulary(DatasetError):
    pass

class IndexOutOfRange(DatasetError):
    pass

class EvaluationError(ExpNoteException):
    """Base class for report and analysis errors."""
    pass

class EmptyRun(EvaluationError):
    pass

class IdMismatch(EvaluationError):
    pass

class ZeroCount(EvaluationError):
    pass

class NonMonotoneCheckpoints(EvaluationError):
    pass
