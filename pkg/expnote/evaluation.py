# expnote/evaluation.py

import csv
import json
import logging
from pathlib import Path
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .exceptions import (
    EmptyRun,
    FileOperationError,
    FormatError,
    IdMismatch,
    NonMonotoneCheckpoints,
    ZeroCount,
)

logger = logging.getLogger(__name__)

DATASETS = ("CLUTRR", "METS", "EMOJI", "LETS")

# Accuracy (%) and number of stored experiences per variant and dataset.
REFERENCE_VARIANT_RESULTS: Dict[str, Dict[str, Tuple[int, int]]] = {
    "disabled": {"CLUTRR": (35, 0), "METS": (49, 0), "EMOJI": (57, 0), "LETS": (50, 0)},
    "case": {"CLUTRR": (49, 128), "METS": (59, 279), "EMOJI": (58, 20), "LETS": (51, 87)},
    "positive": {"CLUTRR": (51, 73), "METS": (56, 166), "EMOJI": (66, 14), "LETS": (64, 41)},
    "negative": {"CLUTRR": (55, 55), "METS": (52, 113), "EMOJI": (60, 6), "LETS": (71, 46)},
    "full": {"CLUTRR": (61, 128), "METS": (66, 279), "EMOJI": (74, 20), "LETS": (89, 87)},
}


@dataclass(frozen=True)
class CaseResult:
    prediction: Optional[str]
    correct: bool


@dataclass
class RunReport:
    """Outcome of one variant's test pass."""
    variant: str
    per_case: Dict[str, CaseResult] = field(default_factory=dict)
    memory_count: int = 0
    positive_count: int = 0
    negative_count: int = 0

    @property
    def n_cases(self) -> int:
        return len(self.per_case)

    @property
    def n_correct(self) -> int:
        return sum(1 for result in self.per_case.values() if result.correct)

    @property
    def accuracy(self) -> Fraction:
        return accuracy(self)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'variant': self.variant,
            'n_cases': self.n_cases,
            'n_correct': self.n_correct,
            'accuracy': None,
            'accuracy_percent': None,
            'memory_count': self.memory_count,
            'positive_count': self.positive_count,
            'negative_count': self.negative_count,
            'per_case': {
                case_id: {'prediction': result.prediction, 'correct': result.correct}
                for case_id, result in self.per_case.items()
            },
        }
        if self.n_cases:
            data['accuracy'] = str(self.accuracy)
            data['accuracy_percent'] = format_percent(self.accuracy)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunReport':
        per_case = {
            str(case_id): CaseResult(prediction=result.get('prediction'), correct=bool(result['correct']))
            for case_id, result in data.get('per_case', {}).items()
        }
        return cls(
            variant=data['variant'],
            per_case=per_case,
            memory_count=int(data.get('memory_count', 0)),
            positive_count=int(data.get('positive_count', 0)),
            negative_count=int(data.get('negative_count', 0)),
        )

    def save(self, path: str):
        try:
            target = Path(path)
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, 'w', encoding='utf-8') as f:
                json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
                f.write("\n")
        except OSError as e:
            logger.error(f"Failed to save report to {path}: {e}")
            raise FileOperationError(f"Failed to save report {path}: {e}") from e

    @classmethod
    def load(cls, path: str) -> 'RunReport':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except OSError as e:
            raise FileOperationError(f"Failed to read report {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise FormatError(f"report {path} is not valid JSON: {e.msg}", line=e.lineno) from e
        try:
            return cls.from_dict(data)
        except (KeyError, TypeError, AttributeError, ValueError) as e:
            raise FormatError(f"report {path} is missing fields: {e}") from e


@dataclass(frozen=True)
class BucketCounts:
    """Cases split by (correct without experiences, correct with experiences)."""
    ff: int = 0
    ft: int = 0
    tt: int = 0
    tf: int = 0

    @property
    def n_cases(self) -> int:
        return self.ff + self.ft + self.tt + self.tf

    def fractions(self) -> Dict[str, Fraction]:
        if self.n_cases == 0:
            raise EmptyRun("No cases to split into buckets.")
        return {name: Fraction(getattr(self, name), self.n_cases) for name in ("ff", "ft", "tt", "tf")}


@dataclass(frozen=True)
class CurvePoint:
    n_train_samples: int
    accuracy: Fraction


def accuracy(report: RunReport) -> Fraction:
    """Exact fraction of correct cases."""
    if report.n_cases < 1:
        raise EmptyRun(f"Report for variant '{report.variant}' has no cases.")
    return Fraction(report.n_correct, report.n_cases)


def improvement_analysis(base: RunReport, treated: RunReport) -> BucketCounts:
    """
    Compare a run without experiences (base) against one with experiences.

    Raises:
        IdMismatch: If the two reports cover different cases
    """
    base_ids, treated_ids = set(base.per_case), set(treated.per_case)
    if base_ids != treated_ids:
        only_base = sorted(base_ids - treated_ids)[:3]
        only_treated = sorted(treated_ids - base_ids)[:3]
        raise IdMismatch(f"Reports cover different cases (only in base: {only_base}, only in treated: {only_treated})")

    counts = {"ff": 0, "ft": 0, "tt": 0, "tf": 0}
    for case_id in base_ids:
        before = "t" if base.per_case[case_id].correct else "f"
        after = "t" if treated.per_case[case_id].correct else "f"
        counts[before + after] += 1
    return BucketCounts(**counts)


def efficiency(perf_type: float, perf_disabled: float, count: int) -> float:
    """Accuracy lift per stored experience of one type; may be negative."""
    if count < 1:
        raise ZeroCount(f"Efficiency needs at least one experience, got {count}.")
    return (perf_type - perf_disabled) / count


def efficiency_table(table: Mapping[str, Mapping[str, Tuple[float, int]]],
                     types: Sequence[str] = ("positive", "negative")) -> Dict[str, Dict[str, float]]:
    """Efficiency of each experience type per dataset, from a variant → dataset → (perf, count) table."""
    disabled = table["disabled"]
    result: Dict[str, Dict[str, float]] = {}
    for experience_type in types:
        result[experience_type] = {
            dataset: efficiency(perf, disabled[dataset][0], count)
            for dataset, (perf, count) in table[experience_type].items()
        }
    return result


def training_curve(checkpoints: Sequence[Tuple[int, Any]]) -> List[CurvePoint]:
    """
    Validate checkpoint (n_train_samples, accuracy) pairs into curve rows.

    Raises:
        NonMonotoneCheckpoints: If n does not start at 0 or does not strictly increase
    """
    if not checkpoints:
        raise NonMonotoneCheckpoints("A training curve needs at least one checkpoint.")
    if checkpoints[0][0] != 0:
        raise NonMonotoneCheckpoints(f"The first checkpoint must be at 0 samples, got {checkpoints[0][0]}.")
    for (previous, _), (current, _) in zip(checkpoints, checkpoints[1:]):
        if current <= previous:
            raise NonMonotoneCheckpoints(f"Checkpoint {current} does not follow {previous}.")
    return [CurvePoint(n_train_samples=int(n), accuracy=Fraction(value)) for n, value in checkpoints]


# --- Rendering ---

def format_percent(value: Fraction) -> str:
    """A [0, 1] fraction as a percentage with 3 significant figures."""
    text = f"{float(value) * 100:#.3g}"
    return text.rstrip(".")


def render_aligned(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Plain-text table with left-aligned first column and right-aligned others."""
    table = [[str(cell) for cell in header]] + [[str(cell) for cell in row] for row in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for index, row in enumerate(table):
        cells = [row[0].ljust(widths[0])] + [cell.rjust(width) for cell, width in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def write_delimited(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]], delimiter: str = ","):
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, delimiter=delimiter, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        logger.error(f"Failed to write table {path}: {e}")
        raise FileOperationError(f"Failed to write table {path}: {e}") from e


def report_rows(reports: Sequence[RunReport]) -> Tuple[List[str], List[List[Any]]]:
    """Variant / accuracy (memory count) rows in the shape of the variants table."""
    header = ["variant", "accuracy", "memory", "positive", "negative", "n_cases"]
    rows = [
        [r.variant, format_percent(r.accuracy), r.memory_count, r.positive_count, r.negative_count, r.n_cases]
        for r in reports
    ]
    return header, rows


def bucket_rows(label: str, buckets: BucketCounts) -> Tuple[List[str], List[List[Any]]]:
    header = ["dataset", "F=>F", "F=>T", "T=>T", "T=>F", "n_cases"]
    fractions = buckets.fractions()
    rows = [
        [label, buckets.ff, buckets.ft, buckets.tt, buckets.tf, buckets.n_cases],
        [f"{label} (%)"] + [format_percent(fractions[name]) for name in ("ff", "ft", "tt", "tf")] + [""],
    ]
    return header, rows


def curve_rows(points: Sequence[CurvePoint]) -> Tuple[List[str], List[List[Any]]]:
    header = ["n_train_samples", "accuracy", "accuracy_percent"]
    rows = [[p.n_train_samples, f"{float(p.accuracy):.6f}", format_percent(p.accuracy)] for p in points]
    return header, rows


def variant_table_rows(table: Mapping[str, Mapping[str, Tuple[float, int]]],
                       datasets: Sequence[str] = DATASETS) -> Tuple[List[str], List[List[Any]]]:
    header = ["variant"] + list(datasets)
    rows = []
    for variant, cells in table.items():
        rows.append([variant] + [f"{_format_number(cells[d][0])} ({cells[d][1]})" for d in datasets])
    return header, rows


def efficiency_rows(table: Mapping[str, Mapping[str, float]],
                    datasets: Sequence[str] = DATASETS) -> Tuple[List[str], List[List[Any]]]:
    header = ["type"] + list(datasets)
    rows = [[experience_type] + [f"{cells[d]:.3f}" for d in datasets] for experience_type, cells in table.items()]
    return header, rows


def _format_number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else f"{value:.1f}"


def load_variant_table(path: str) -> Dict[str, Dict[str, Tuple[float, int]]]:
    """
    Read a delimiter-separated variants file with columns
    dataset, variant, accuracy, count (accuracy in percent).
    """
    table: Dict[str, Dict[str, Tuple[float, int]]] = {}
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            for line_number, row in enumerate(reader, start=2):
                try:
                    table.setdefault(row['variant'].strip(), {})[row['dataset'].strip()] = (
                        float(row['accuracy']), int(row['count']))
                except (KeyError, ValueError, AttributeError) as e:
                    raise FormatError(f"bad variants row in {path}: {e}", line=line_number) from e
    except OSError as e:
        raise FileOperationError(f"Failed to read variants table {path}: {e}") from e
    if "disabled" not in table:
        raise FormatError(f"variants table {path} has no 'disabled' rows")
    return table
