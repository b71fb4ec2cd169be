"""Dataset ingestion, wrapping, outlier filtering, splitting and windowing.

Dataset files are JSON Lines, one object per frame::

    {"seq_id": "s0", "person_id": "p0", "frame_idx": 0, "timestamp_s": 0.0,
     "trans": [x, y, z], "pose": [72 radians], "shape": [10],
     "ground_z": 0.0, "action": "walk"}

``action`` is optional.  Rows are grouped by (seq_id, person_id) and sorted
by frame_idx.  Pose components are wrapped into [0, 2*pi) on ingest.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body_model import NUM_POSE, NUM_SHAPE, canonical_components, geodesic_angle, rodrigues
from .errors import DataIOError, EmptyDataset, SchemaError, TooFewSequences

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
ACTIONS = ("walk", "cup", "carry-left", "phone", "push-bike", "cycling", "other")
STATE_DIM = 3 + NUM_POSE
ANGLE_CONVENTION = "wrap_diff/pi"


def wrap_angle(x):
    """Map radians into [0, 2*pi); 2*pi itself maps to 0."""
    out = np.mod(np.asarray(x, dtype=float), TWO_PI)
    out = np.where(out >= TWO_PI, 0.0, out)
    return float(out) if out.ndim == 0 else out


def wrap_diff(a, b):
    """Minimal signed displacement from b to a, in (-pi, pi]."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    out = math.pi - np.mod(math.pi - d, TWO_PI)
    out = np.where(out <= -math.pi, out + TWO_PI, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FrameRecord:
    seq_id: str
    person_id: str
    frame_idx: int
    timestamp_s: float
    trans: tuple
    pose: tuple
    shape: tuple
    ground_z: float
    action: str | None = None


@dataclass
class PoseSequence:
    seq_id: str
    person_id: str
    frame_idx: np.ndarray     # (T,)
    timestamps: np.ndarray    # (T,)
    trans: np.ndarray         # (T, 3)
    pose: np.ndarray          # (T, 72) wrapped into [0, 2*pi)
    shape: np.ndarray         # (T, 10)
    ground_z: np.ndarray      # (T,)
    action: str | None = None

    def __len__(self) -> int:
        return len(self.frame_idx)

    @property
    def key(self) -> tuple[str, str]:
        return self.seq_id, self.person_id

    @property
    def states(self) -> np.ndarray:
        """(T, 75) translation plus wrapped pose."""
        return np.concatenate([self.trans, self.pose], axis=1)

    def slice(self, start: int, stop: int, suffix: str = "") -> PoseSequence:
        return PoseSequence(
            self.seq_id + suffix, self.person_id,
            self.frame_idx[start:stop], self.timestamps[start:stop],
            self.trans[start:stop], self.pose[start:stop], self.shape[start:stop],
            self.ground_z[start:stop], self.action,
        )

    def records(self):
        for t in range(len(self)):
            yield {
                "seq_id": self.seq_id,
                "person_id": self.person_id,
                "frame_idx": int(self.frame_idx[t]),
                "timestamp_s": float(self.timestamps[t]),
                "trans": self.trans[t].tolist(),
                "pose": self.pose[t].tolist(),
                "shape": self.shape[t].tolist(),
                "ground_z": float(self.ground_z[t]),
                "action": self.action,
            }


def _vector(row: dict, key: str, size: int, lineno: int) -> tuple:
    val = row.get(key)
    if not isinstance(val, list) or len(val) != size:
        raise SchemaError(f"line {lineno}: '{key}' must be a list of {size} numbers")
    try:
        out = tuple(float(v) for v in val)
    except (TypeError, ValueError):
        raise SchemaError(f"line {lineno}: '{key}' contains non-numeric entries") from None
    if not all(math.isfinite(v) for v in out):
        raise SchemaError(f"line {lineno}: '{key}' contains non-finite values")
    return out


def parse_record(row: dict, lineno: int) -> FrameRecord:
    if not isinstance(row, dict):
        raise SchemaError(f"line {lineno}: expected a JSON object")
    for key in ("seq_id", "person_id", "frame_idx", "timestamp_s", "ground_z"):
        if key not in row:
            raise SchemaError(f"line {lineno}: missing field '{key}'")
    action = row.get("action")
    if action is not None and action not in ACTIONS:
        raise SchemaError(f"line {lineno}: unknown action {action!r}")
    try:
        frame_idx = int(row["frame_idx"])
        ts = float(row["timestamp_s"])
        gz = float(row["ground_z"])
    except (TypeError, ValueError):
        raise SchemaError(f"line {lineno}: frame_idx/timestamp_s/ground_z must be numeric") from None
    return FrameRecord(
        seq_id=str(row["seq_id"]),
        person_id=str(row["person_id"]),
        frame_idx=frame_idx,
        timestamp_s=ts,
        trans=_vector(row, "trans", 3, lineno),
        pose=_vector(row, "pose", NUM_POSE, lineno),
        shape=_vector(row, "shape", NUM_SHAPE, lineno),
        ground_z=gz,
        action=action,
    )


def group_records(records: list[FrameRecord], fps_tolerance: float = 0.25) -> list[PoseSequence]:
    groups: dict[tuple[str, str], list[FrameRecord]] = {}
    for rec in records:
        groups.setdefault((rec.seq_id, rec.person_id), []).append(rec)
    sequences = []
    for key in sorted(groups):
        rows = sorted(groups[key], key=lambda r: r.frame_idx)
        frames = [r.frame_idx for r in rows]
        if len(set(frames)) != len(frames):
            dup = next(f for f in frames if frames.count(f) > 1)
            raise SchemaError(f"duplicate key (seq_id={key[0]}, person_id={key[1]}, frame_idx={dup})")
        ts = np.array([r.timestamp_s for r in rows])
        if np.any(np.diff(ts) <= 0):
            raise SchemaError(f"timestamps not strictly increasing in sequence {key}")
        if len(ts) > 2:
            dt = np.diff(ts)
            if np.max(np.abs(dt - np.median(dt))) > fps_tolerance * np.median(dt):
                log.warning("sequence %s/%s has non-uniform frame spacing", *key)
        actions = {r.action for r in rows}
        sequences.append(PoseSequence(
            seq_id=key[0],
            person_id=key[1],
            frame_idx=np.array(frames, dtype=int),
            timestamps=ts,
            trans=np.array([r.trans for r in rows]),
            pose=wrap_angle(np.array([r.pose for r in rows])),
            shape=np.array([r.shape for r in rows]),
            ground_z=np.array([r.ground_z for r in rows]),
            action=rows[0].action if len(actions) == 1 else "other",
        ))
    return sequences


def ingest(path: str | Path) -> list[PoseSequence]:
    """Read a JSON Lines dataset into sorted per-pedestrian sequences."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read dataset {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        records.append(parse_record(row, lineno))
    if not records:
        raise EmptyDataset(f"no records in {path}")
    return group_records(records)


def write_jsonl(sequences, path: str | Path) -> int:
    n = 0
    try:
        with open(path, "w") as fh:
            for seq in sequences:
                for rec in seq.records():
                    fh.write(json.dumps(rec) + "\n")
                    n += 1
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    return n


# --- outlier filtering -----------------------------------------------------------

@dataclass
class FilterReport:
    transitions: int = 0
    translation_breaks: int = 0
    orientation_breaks: int = 0
    fragments_kept: int = 0
    fragments_dropped: int = 0

    def merge(self, other: FilterReport) -> None:
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))


def filter_outliers(seq: PoseSequence, s_trans: float = 0.6, s_orient: float = math.pi / 2,
                    min_length: int = 2) -> tuple[list[PoseSequence], FilterReport]:
    """Break a sequence at implausible transitions.

    A transition is broken when the translation jumps by more than ``s_trans``
    meters or the root orientation turns by more than ``s_orient`` radians.
    Fragments shorter than ``min_length`` frames are dropped.
    """
    report = FilterReport(transitions=max(len(seq) - 1, 0))
    if len(seq) < 2:
        cuts = []
    else:
        jump = np.linalg.norm(np.diff(seq.trans, axis=0), axis=1)
        R = rodrigues(canonical_components(seq.pose[:, :3]))
        turn = geodesic_angle(R[:-1], R[1:])
        bad_t = jump > s_trans
        bad_o = turn > s_orient
        report.translation_breaks = int(bad_t.sum())
        report.orientation_breaks = int((bad_o & ~bad_t).sum())
        cuts = list(np.nonzero(bad_t | bad_o)[0] + 1)
    bounds = [0] + cuts + [len(seq)]
    out = []
    for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        if b - a >= min_length:
            out.append(seq.slice(a, b, suffix="" if not cuts else f"#{k}"))
            report.fragments_kept += 1
        else:
            report.fragments_dropped += 1
    return out, report


def filter_all(sequences, lookback: int, s_trans: float = 0.6, s_orient: float = math.pi / 2):
    kept, total = [], FilterReport()
    for seq in sequences:
        frags, rep = filter_outliers(seq, s_trans, s_orient, min_length=lookback + 1)
        kept.extend(frags)
        total.merge(rep)
    return kept, total


# --- splitting ------------------------------------------------------------------------

def split(sequences, ratios=(0.85, 0.10, 0.05), seed: int = 0) -> dict[str, list[PoseSequence]]:
    """Split at sequence granularity.

    Validation and test sizes are floor(n * ratio) with a minimum of one each;
    the remainder goes to training.
    """
    n = len(sequences)
    if n < 3:
        raise TooFewSequences(f"need at least 3 sequences to split, got {n}")
    n_val = max(1, int(math.floor(n * ratios[1] + 1e-9)))
    n_test = max(1, int(math.floor(n * ratios[2] + 1e-9)))
    order = np.random.default_rng(seed).permutation(n)
    val = [sequences[i] for i in order[:n_val]]
    test = [sequences[i] for i in order[n_val:n_val + n_test]]
    train = [sequences[i] for i in order[n_val + n_test:]]
    return {"train": train, "val": val, "test": test}


# --- normalization ---------------------------------------------------------------------

def state_diffs(states: np.ndarray) -> np.ndarray:
    """Frame differences of (..., T, 75) states; angles via wrap_diff."""
    d = np.empty(states.shape[:-2] + (states.shape[-2] - 1, STATE_DIM))
    d[..., :3] = states[..., 1:, :3] - states[..., :-1, :3]
    d[..., 3:] = wrap_diff(states[..., 1:, 3:], states[..., :-1, 3:])
    return d


def _padded_range(lo: np.ndarray, hi: np.ndarray, pad: float = 1e-3):
    lo, hi = lo.astype(float).copy(), hi.astype(float).copy()
    narrow = hi - lo < pad
    mid = (hi + lo) / 2
    lo[narrow] = mid[narrow] - pad / 2
    hi[narrow] = mid[narrow] + pad / 2
    return lo, hi


@dataclass
class NormalizationStats:
    trans_diff_min: np.ndarray
    trans_diff_max: np.ndarray
    trans_min: np.ndarray
    trans_max: np.ndarray
    median_diff: np.ndarray                 # (75,)
    joints_min: np.ndarray | None = None
    joints_max: np.ndarray | None = None
    angle_convention: str = ANGLE_CONVENTION

    # differences: symmetric scaling keeps zero at zero
    @property
    def trans_diff_scale(self) -> np.ndarray:
        return np.maximum(np.maximum(np.abs(self.trans_diff_min), np.abs(self.trans_diff_max)), 1e-3)

    def diff_scale(self, part: str) -> np.ndarray:
        return self.trans_diff_scale if part == "trans" else np.full(NUM_POSE, math.pi)

    def normalize_diff(self, part: str, d: np.ndarray) -> np.ndarray:
        return d / self.diff_scale(part)

    def denormalize_diff(self, part: str, d: np.ndarray) -> np.ndarray:
        return d * self.diff_scale(part)

    # absolute values: min/max onto [-1, 1]
    def _abs_range(self, part: str):
        if part == "trans":
            return self.trans_min, self.trans_max
        if part == "joints":
            return np.tile(self.joints_min, 24), np.tile(self.joints_max, 24)
        return np.full(NUM_POSE, -math.pi), np.full(NUM_POSE, math.pi)

    def normalize_abs(self, part: str, x: np.ndarray) -> np.ndarray:
        if part == "pose":
            x = canonical_components(x)
        lo, hi = self._abs_range(part)
        return 2.0 * (x - lo) / (hi - lo) - 1.0

    def denormalize_abs(self, part: str, y: np.ndarray) -> np.ndarray:
        lo, hi = self._abs_range(part)
        return (y + 1.0) / 2.0 * (hi - lo) + lo

    def to_dict(self) -> dict:
        out = {}
        for k, v in vars(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> NormalizationStats:
        kw = {}
        for k, v in doc.items():
            kw[k] = np.asarray(v, dtype=float) if isinstance(v, list) else v
        return cls(**kw)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["statistic", "index", "value"])
            for k, v in vars(self).items():
                if isinstance(v, np.ndarray):
                    for i, x in enumerate(v):
                        w.writerow([k, i, repr(float(x))])
                elif v is not None:
                    w.writerow([k, "", v])


def compute_stats(train_sequences, model=None) -> NormalizationStats:
    """Statistics from the training split only.

    With ``model`` given, also records the per-axis range of global joint
    positions (needed by the skeleton-joints baseline).
    """
    if not train_sequences:
        raise TooFewSequences("cannot compute statistics from an empty training split")
    diffs = [state_diffs(s.states) for s in train_sequences if len(s) > 1]
    diffs = np.concatenate(diffs) if diffs else np.zeros((1, STATE_DIM))
    trans = np.concatenate([s.trans for s in train_sequences])
    dlo, dhi = _padded_range(diffs[:, :3].min(0), diffs[:, :3].max(0))
    tlo, thi = _padded_range(trans.min(0), trans.max(0))
    stats = NormalizationStats(dlo, dhi, tlo, thi, np.median(diffs, axis=0))
    if model is not None:
        from .body_model import fk_batch
        pts = np.concatenate([
            fk_batch(s.trans, s.pose, model)[0].reshape(-1, 3) for s in train_sequences
        ])
        stats.joints_min, stats.joints_max = _padded_range(pts.min(0), pts.max(0))
    return stats


# --- windowing ------------------------------------------------------------------------------

@dataclass
class Windows:
    """All length-(l+1) windows of a set of sequences.

    ``states`` holds the raw windows (N, l+1, 75); ``diffs`` the l frame
    differences, of which the first l-1 are network inputs and the last is
    the target.
    """

    lookback: int
    states: np.ndarray
    diffs: np.ndarray
    shape: np.ndarray         # (N, 10) shape of the last observed frame
    ground_z: np.ndarray      # (N,) ground at the target frame
    seq_index: np.ndarray     # (N,)
    target_frame: np.ndarray  # (N,)
    actions: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def prev(self) -> np.ndarray:
        return self.states[:, -2]

    @property
    def next(self) -> np.ndarray:
        return self.states[:, -1]

    @property
    def history(self) -> np.ndarray:
        return self.states[:, :-1]

    def inputs(self, part: str, stats: NormalizationStats) -> np.ndarray:
        sl = slice(0, 3) if part == "trans" else slice(3, STATE_DIM)
        return stats.normalize_diff(part, self.diffs[:, :-1, sl])

    def targets(self, part: str, stats: NormalizationStats) -> np.ndarray:
        sl = slice(0, 3) if part == "trans" else slice(3, STATE_DIM)
        return stats.normalize_diff(part, self.diffs[:, -1, sl])


def window(sequences, lookback: int) -> Windows:
    if lookback < 1:
        raise ValueError("look-back window must be at least 1")
    span = lookback + 1
    states, shapes, ground, idx, frames, actions = [], [], [], [], [], []
    for k, seq in enumerate(sequences):
        st = seq.states
        for start in range(len(seq) - span + 1):
            states.append(st[start:start + span])
            shapes.append(seq.shape[start + span - 2])
            ground.append(seq.ground_z[start + span - 1])
            idx.append(k)
            frames.append(seq.frame_idx[start + span - 1])
            actions.append(seq.action)
    if states:
        states = np.stack(states)
    else:
        states = np.zeros((0, span, STATE_DIM))
    return Windows(
        lookback=lookback,
        states=states,
        diffs=state_diffs(states) if len(states) else np.zeros((0, lookback, STATE_DIM)),
        shape=np.array(shapes).reshape(-1, NUM_SHAPE),
        ground_z=np.array(ground, dtype=float),
        seq_index=np.array(idx, dtype=int),
        target_frame=np.array(frames, dtype=int),
        actions=actions,
    )
