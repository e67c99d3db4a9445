# expnote/history.py

import json
import hashlib
import logging
import threading
from pathlib import Path
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .agent import Trajectory
from .exceptions import FileOperationError, FormatError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


class TrajectoryLog:
    """Append-only JSON-lines sink for trajectories; writes are serialized."""

    def __init__(self, path: str):
        self.path = Path(path)
        self._file_lock = threading.Lock()
        self.count = 0

    def reset(self):
        """Truncate the log so a rerun produces the same bytes."""
        with self._file_lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_text("", encoding='utf-8')
                self.count = 0
            except OSError as e:
                raise FileOperationError(f"Failed to reset trajectory log {self.path}: {e}") from e

    def append(self, trajectory: Trajectory):
        line = json.dumps(trajectory.to_dict(), ensure_ascii=False)
        with self._file_lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, 'a', encoding='utf-8') as f:
                    f.write(line + "\n")
                self.count += 1
            except OSError as e:
                logger.error(f"Failed to append to trajectory log {self.path}: {e}")
                raise FileOperationError(f"Failed to write trajectory log {self.path}: {e}") from e

    __call__ = append


def read_trajectory_records(path: str) -> List[Dict[str, Any]]:
    records = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise FormatError(f"malformed trajectory record in {path}: {e.msg}", line=line_number) from e
    except OSError as e:
        raise FileOperationError(f"Failed to read trajectory log {path}: {e}") from e
    return records


def digest_file(path: str) -> str:
    sha = hashlib.sha256()
    try:
        with open(path, 'rb') as f:
            for chunk in iter(lambda: f.read(65536), b""):
                sha.update(chunk)
    except OSError as e:
        raise FileOperationError(f"Failed to digest {path}: {e}") from e
    return sha.hexdigest()


@dataclass
class RunManifest:
    """What a run was given and what it produced, enough to reproduce it."""
    command: str
    config: Dict[str, Any]
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    def add_input(self, name: str, path: Optional[str]):
        if path and Path(path).is_file():
            self.inputs[name] = f"sha256:{digest_file(path)}"

    def add_output(self, name: str, path: str):
        if Path(path).is_file():
            self.outputs[name] = f"sha256:{digest_file(path)}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'seed': self.seed,
            'config': self.config,
            'inputs': dict(sorted(self.inputs.items())),
            'outputs': dict(sorted(self.outputs.items())),
        }

    def save(self, out_dir: str) -> Path:
        target = Path(out_dir) / MANIFEST_FILE
        temp_file = target.with_suffix(".tmp")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(temp_file, 'w', encoding='utf-8') as f:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
                f.write("\n")
            temp_file.replace(target)
        except OSError as e:
            logger.error(f"Failed to save manifest: {e}", exc_info=True)
            raise FileOperationError(f"Failed to save manifest {target}: {e}") from e
        logger.info(f"Wrote run manifest to {target}")
        return target
