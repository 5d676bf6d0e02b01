"""On-disk formats. Binary integers are little-endian uint32; feature payloads
are float32, model parameters float64 (IEEE-754, little-endian)."""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConstraintWindows, FeatureSequence, TaskSpec
from .evalkit import GroundTruth, Prediction
from .model import ComponentClassifierBank
from .text_constraints import TimedTranscript

FEATURE_MAGIC = b"CTFT"
MODEL_MAGIC = b"CTMD"


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte (binary) or line (text) position."""

    def __init__(self, message: str, offset: int = 0, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at offset {offset})")
        self.offset = offset
        self.path = path


def _read_header(buf: bytes, magic: bytes, path) -> tuple[int, int]:
    if len(buf) < 12:
        raise FormatError("truncated header", len(buf), path)
    if buf[:4] != magic:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {magic!r}", 0, path)
    return struct.unpack_from("<II", buf, 4)


# -- features ---------------------------------------------------------------


def encode_features(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ValueError(f"features must be a non-empty 2-D matrix, got {values.shape}")
    payload = np.ascontiguousarray(values, dtype="<f4")
    if not np.isfinite(payload).all():
        raise ValueError("features contain non-finite values")
    return FEATURE_MAGIC + struct.pack("<II", *values.shape) + payload.tobytes()


def decode_features(buf: bytes, path=None) -> np.ndarray:
    T, D = _read_header(buf, FEATURE_MAGIC, path)
    if T == 0:
        raise FormatError("T = 0", 4, path)
    if D == 0:
        raise FormatError("D = 0", 8, path)
    need = 12 + 4 * T * D
    if len(buf) != need:
        raise FormatError(f"payload holds {len(buf) - 12} bytes, expected {4 * T * D}", min(len(buf), need), path)
    values = np.frombuffer(buf, dtype="<f4", offset=12).reshape(T, D)
    bad = np.flatnonzero(~np.isfinite(values.ravel()))
    if bad.size:
        raise FormatError("non-finite feature value", 12 + 4 * int(bad[0]), path)
    return values.astype(np.float32)


def write_features(path, values) -> None:
    Path(path).write_bytes(encode_features(getattr(values, "values", values)))


def read_features(path, seconds_per_segment: float = 1.0) -> FeatureSequence:
    return FeatureSequence(decode_features(Path(path).read_bytes(), path), seconds_per_segment)


# -- model ------------------------------------------------------------------


def encode_model(bank: ComponentClassifierBank) -> bytes:
    return (
        MODEL_MAGIC
        + struct.pack("<II", bank.M, bank.D)
        + np.ascontiguousarray(bank.weights, dtype="<f8").tobytes()
        + np.ascontiguousarray(bank.biases, dtype="<f8").tobytes()
        + struct.pack("<d", bank.dropout_rate)
    )


def decode_model(buf: bytes, path=None) -> ComponentClassifierBank:
    M, D = _read_header(buf, MODEL_MAGIC, path)
    if M == 0 or D == 0:
        raise FormatError("empty model dimensions", 4, path)
    need = 12 + 8 * (M * D + M + 1)
    if len(buf) != need:
        raise FormatError(f"model file has {len(buf)} bytes, expected {need}", min(len(buf), need), path)
    W = np.frombuffer(buf, dtype="<f8", count=M * D, offset=12).reshape(M, D).astype(np.float64)
    b = np.frombuffer(buf, dtype="<f8", count=M, offset=12 + 8 * M * D).astype(np.float64)
    (rate,) = struct.unpack_from("<d", buf, need - 8)
    try:
        return ComponentClassifierBank(W, b, rate)
    except ValueError as exc:
        raise FormatError(str(exc), 12, path) from None


def write_model(path, bank: ComponentClassifierBank) -> None:
    Path(path).write_bytes(encode_model(bank))


def read_model(path) -> ComponentClassifierBank:
    return decode_model(Path(path).read_bytes(), path)


# -- text formats -------------------------------------------------------------


def _lines(path):
    return Path(path).read_text(encoding="utf-8").splitlines()


def format_tasks(tasks) -> str:
    blocks = []
    for t in tasks:
        for s in t.steps:
            if "|" in s or "\t" in s or "\n" in s:
                raise ValueError(f"step {s!r} cannot be stored in a task file")
        blocks.append(f"{t.id}\t{t.title}\nsteps:\t{'|'.join(t.steps)}\n")
    return "\n".join(blocks)


def parse_tasks(text: str, path=None) -> list[TaskSpec]:
    lines = text.splitlines()
    tasks, i = [], 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split("\t")
        if len(head) != 2 or not head[0]:
            raise FormatError("expected 'id<TAB>title'", i + 1, path)
        if i + 1 >= len(lines):
            raise FormatError("missing steps line", i + 2, path)
        steps = lines[i + 1].split("\t")
        if len(steps) != 2 or steps[0] != "steps:":
            raise FormatError("expected 'steps:<TAB>step1|step2|...'", i + 2, path)
        try:
            tasks.append(TaskSpec(head[0], head[1], tuple(steps[1].split("|"))))
        except ValueError as exc:
            raise FormatError(str(exc), i + 2, path) from None
        i += 2
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate task id", 0, path)
    return tasks


def write_tasks(path, tasks) -> None:
    Path(path).write_text(format_tasks(tasks), encoding="utf-8")


def read_tasks(path) -> list[TaskSpec]:
    return parse_tasks(Path(path).read_text(encoding="utf-8"), path)


def write_transcript(path, transcript: TimedTranscript) -> None:
    Path(path).write_text("".join(f"{t!r}\t{w}\n" for w, t in transcript.words), encoding="utf-8")


def read_transcript(path) -> TimedTranscript:
    words = []
    for n, line in enumerate(_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError("expected 'time_sec<TAB>token'", n, path)
        try:
            t = float(parts[0])
        except ValueError:
            raise FormatError(f"bad time {parts[0]!r}", n, path) from None
        words.append((parts[1], t))
    try:
        return TimedTranscript(tuple(words))
    except ValueError as exc:
        raise FormatError(str(exc), 0, path) from None


def write_constraints(path, windows: ConstraintWindows) -> None:
    rows = []
    for k, iv in enumerate(windows.intervals):
        rows.append(f"{k}\t-\t-\n" if iv is None else f"{k}\t{iv[0]}\t{iv[1]}\n")
    Path(path).write_text("".join(rows), encoding="utf-8")


def read_constraints(path, K: Optional[int] = None) -> ConstraintWindows:
    found = {}
    for n, line in enumerate(_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError("expected 'step_index<TAB>lo<TAB>hi'", n, path)
        try:
            k = int(parts[0])
            found[k] = None if parts[1] == "-" else (int(parts[1]), int(parts[2]))
        except ValueError:
            raise FormatError("non-integer field", n, path) from None
    K = (max(found) + 1 if found else 0) if K is None else K
    if any(k < 0 or k >= K for k in found):
        raise FormatError(f"step index outside 0..{K - 1}", 0, path)
    try:
        return ConstraintWindows(tuple(found.get(k) for k in range(K)))
    except ValueError as exc:
        raise FormatError(str(exc), 0, path) from None


def write_annotation(path, gt: GroundTruth) -> None:
    rows = [f"{k}\t{a!r}\t{b!r}\n" for k, ivs in enumerate(gt.intervals) for a, b in ivs]
    Path(path).write_text("".join(rows), encoding="utf-8")


def read_annotation(path, K: int) -> GroundTruth:
    steps: list[list] = [[] for _ in range(K)]
    for n, line in enumerate(_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError("expected 'step_index<TAB>start_sec<TAB>end_sec'", n, path)
        try:
            k, a, b = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError("bad numeric field", n, path) from None
        if not 0 <= k < K:
            raise FormatError(f"step index {k} outside 0..{K - 1}", n, path)
        if not (math.isfinite(a) and math.isfinite(b)) or b < a:
            raise FormatError(f"bad interval [{a}, {b}]", n, path)
        steps[k].append((a, b))
    return GroundTruth(tuple(tuple(s) for s in steps))


def write_prediction(path, task_id: str, pred: Prediction) -> None:
    """Header ``task<TAB>id<TAB>T<TAB>K``, K ``pred`` lines, then T ``score`` lines."""
    K = len(pred.times)
    scores = pred.scores
    T = 0 if scores is None else scores.shape[0]
    rows = [f"task\t{task_id}\t{T}\t{K}\n"]
    rows += [f"pred\t{k}\t{t}\n" for k, t in enumerate(pred.times)]
    if scores is not None:
        rows += ["score\t" + "\t".join(repr(float(x)) for x in row) + "\n" for row in scores]
    Path(path).write_text("".join(rows), encoding="utf-8")


def read_prediction(path) -> tuple[str, int, Prediction]:
    """Returns ``(task_id, T, prediction)``; T is 0 when no scores were stored."""
    lines = [l for l in _lines(path) if l.strip()]
    if not lines:
        raise FormatError("empty prediction file", 0, path)
    head = lines[0].split("\t")
    if len(head) != 4 or head[0] != "task":
        raise FormatError("expected 'task<TAB>id<TAB>T<TAB>K' header", 1, path)
    try:
        T, K = int(head[2]), int(head[3])
    except ValueError:
        raise FormatError("bad T/K in header", 1, path) from None
    if len(lines) != 1 + K + T:
        raise FormatError(f"expected {1 + K + T} lines, found {len(lines)}", len(lines), path)
    times = []
    for n in range(K):
        parts = lines[1 + n].split("\t")
        if len(parts) != 3 or parts[0] != "pred" or int(parts[1]) != n:
            raise FormatError("expected 'pred<TAB>k<TAB>segment'", n + 2, path)
        times.append(int(parts[2]))
    scores = None
    if T:
        rows = []
        for n in range(T):
            parts = lines[1 + K + n].split("\t")
            if parts[0] != "score" or len(parts) != K + 1:
                raise FormatError("expected a score row", n + K + 2, path)
            rows.append([float(x) for x in parts[1:]])
        scores = np.array(rows)
    return head[1], T, Prediction(tuple(times), scores)


def read_manifest(path) -> list[tuple[str, Path, Optional[Path]]]:
    """``task_id<TAB>feature_file<TAB>transcript_or_constraint_file_or_dash``;
    relative paths resolve against the manifest's directory."""
    base = Path(path).parent
    rows = []
    for n, line in enumerate(_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError("expected 3 tab-separated fields", n, path)
        side = None if parts[2] == "-" else base / parts[2]
        rows.append((parts[0], base / parts[1], side))
    return rows


def write_manifest(path, rows) -> None:
    Path(path).write_text(
        "".join(f"{t}\t{f}\t{'-' if s is None else s}\n" for t, f, s in rows), encoding="utf-8"
    )


def is_constraint_file(path) -> bool:
    """Constraint files have three fields per line, transcripts two."""
    for line in _lines(path):
        if line.strip():
            return len(line.split("\t")) == 3
    return False
