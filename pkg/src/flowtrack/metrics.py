"""Tracking evaluation: per-frame matching, CLEAR counts and recall sweeps.

Ground truth and results are compared per frame by box IoU.  A ground-truth
identity keeps its previous partner whenever their IoU still clears the
threshold; the remaining boxes are matched by maximum total IoU.  Sequence
counts (FP, FN, identity switches, fragmentations) aggregate over frames,
and the averaged metrics sweep a set of target recall levels by filtering
results on their confidence scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .assignment import max_similarity_assignment
from .geometry import Box3D, iou3d


class EvaluationInputError(ValueError):
    """Raised for malformed evaluation inputs."""


@dataclass
class TrackedBox:
    """One box of a track file: identity plus geometry plus optional score."""

    track_id: int
    box: Box3D
    score: float | None = None


@dataclass
class EvalConfig:
    """Evaluation parameters.

    ``smota_mode`` selects between the two scaled-accuracy normalizations in
    circulation: ``"ratio"`` divides the accuracy at a recall level by that
    recall, ``"adjusted"`` removes the share of misses expected at that
    recall before normalizing.  Both clamp to [0, 1].
    """

    iou_thres: float = 0.25
    category: str = "Car"
    num_recall_steps: int = 40
    smota_mode: str = "ratio"

    def __post_init__(self) -> None:
        if self.smota_mode not in ("ratio", "adjusted"):
            raise ValueError(f"unknown smota_mode {self.smota_mode!r}")
        if self.num_recall_steps < 1:
            raise ValueError("num_recall_steps must be positive")


@dataclass
class FrameMatch:
    """Matching of one frame: index pairs plus the frame's FP and FN."""

    matches: list[tuple[int, int]]
    fp: int
    fn: int


@dataclass
class SequenceCounts:
    """CLEAR counts accumulated over one or more sequences."""

    fp: int = 0
    fn: int = 0
    ids: int = 0
    frag: int = 0
    num_gt: int = 0
    num_matches: int = 0
    iou_sum: float = 0.0

    def merge(self, other: "SequenceCounts") -> "SequenceCounts":
        """Pure fold of two count sets."""
        return SequenceCounts(
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            ids=self.ids + other.ids,
            frag=self.frag + other.frag,
            num_gt=self.num_gt + other.num_gt,
            num_matches=self.num_matches + other.num_matches,
            iou_sum=self.iou_sum + other.iou_sum,
        )

    @property
    def mota(self) -> float:
        """1 - (FP + FN + IDS) / num_gt."""
        return 1.0 - (self.fp + self.fn + self.ids) / self.num_gt

    @property
    def motp(self) -> float:
        """Mean IoU over matched pairs; 0 with no matches."""
        return self.iou_sum / self.num_matches if self.num_matches else 0.0

    @property
    def recall(self) -> float:
        return self.num_matches / self.num_gt


@dataclass
class RecallRow:
    """Metrics of one recall level of the sweep."""

    recall_target: float
    threshold: float
    mota: float
    motp: float
    smota: float
    fp: int
    fn: int
    ids: int


@dataclass
class MetricsReport:
    """Sweep rows plus the aggregated headline numbers.

    ``samota``, ``amota`` and ``amotp`` are means over the sweep rows on a
    0-100 scale; ``mota``/``motp``/``ids``/``frag`` describe the best
    single threshold (highest accuracy row) on their natural scales.
    """

    iou_thres: float
    category: str
    rows: list[RecallRow] = field(default_factory=list)
    samota: float = 0.0
    amota: float = 0.0
    amotp: float = 0.0
    mota: float = 0.0
    motp: float = 0.0
    ids: int = 0
    frag: int = 0

    def to_dict(self) -> dict:
        """Machine-readable key-value form."""
        return {
            "iou_thres": self.iou_thres,
            "category": self.category,
            "sAMOTA": round(self.samota, 2),
            "AMOTA": round(self.amota, 2),
            "AMOTP": round(self.amotp, 2),
            "MOTA": round(self.mota, 2),
            "MOTP": round(self.motp, 2),
            "IDS": self.ids,
            "FRAG": self.frag,
            "rows": [
                {
                    "recall_target": round(r.recall_target, 4),
                    "threshold": r.threshold,
                    "MOTA": round(r.mota, 4),
                    "MOTP": round(r.motp, 4),
                    "sMOTA": round(r.smota, 4),
                    "FP": r.fp,
                    "FN": r.fn,
                    "IDS": r.ids,
                }
                for r in self.rows
            ],
        }

    def to_text(self) -> str:
        """Fixed two-decimal table."""
        header = (
            f"category={self.category} iou_thres={self.iou_thres:.2f}\n"
            f"{'sAMOTA':>8} {'AMOTA':>8} {'AMOTP':>8} {'MOTA':>8} {'MOTP':>8} "
            f"{'IDS':>6} {'FRAG':>6}\n"
        )
        values = (
            f"{self.samota:8.2f} {self.amota:8.2f} {self.amotp:8.2f} "
            f"{self.mota:8.2f} {self.motp:8.2f} {self.ids:6d} {self.frag:6d}\n"
        )
        return header + values


Frames = Mapping[int, Sequence[TrackedBox]]


def _check_unique_ids(frames: Frames, kind: str) -> None:
    for frame, boxes in frames.items():
        seen: set[int] = set()
        for tracked in boxes:
            if tracked.track_id in seen:
                raise EvaluationInputError(
                    f"duplicate {kind} row for frame {frame}, id {tracked.track_id}"
                )
            seen.add(tracked.track_id)


def match_frame(
    gt: Sequence[TrackedBox],
    pred: Sequence[TrackedBox],
    iou_thres: float,
    prev_pairs: Mapping[int, int] | None = None,
) -> FrameMatch:
    """Match one frame of ground truth against one frame of predictions.

    Pairs that were matched in the previous frame are kept first whenever
    their IoU still reaches ``iou_thres``; the remaining boxes are matched
    by maximum total IoU and pairs below the threshold are dropped.

    Parameters
    ----------
    gt, pred : sequence of TrackedBox
        Boxes of a single frame and category.
    iou_thres : float
        Minimum IoU of a valid match.
    prev_pairs : mapping, optional
        Previous-frame assignment as ``gt_id -> pred_id``.

    Returns
    -------
    FrameMatch
        Matched index pairs ``(gt_index, pred_index)`` plus the frame's FP
        (unmatched predictions) and FN (unmatched ground truth).
    """
    prev_pairs = prev_pairs or {}
    pred_index_by_id = {p.track_id: j for j, p in enumerate(pred)}

    matches: list[tuple[int, int]] = []
    taken_gt: set[int] = set()
    taken_pred: set[int] = set()
    for i, truth in enumerate(gt):
        j = pred_index_by_id.get(prev_pairs.get(truth.track_id))
        if j is None or j in taken_pred:
            continue
        if iou3d(truth.box, pred[j].box) >= iou_thres:
            matches.append((i, j))
            taken_gt.add(i)
            taken_pred.add(j)

    free_gt = [i for i in range(len(gt)) if i not in taken_gt]
    free_pred = [j for j in range(len(pred)) if j not in taken_pred]
    if free_gt and free_pred:
        similarity = np.zeros((len(free_gt), len(free_pred)))
        for a, i in enumerate(free_gt):
            for b, j in enumerate(free_pred):
                similarity[a, b] = iou3d(gt[i].box, pred[j].box)
        for a, b in max_similarity_assignment(similarity):
            if similarity[a, b] >= iou_thres:
                matches.append((free_gt[a], free_pred[b]))

    matches.sort()
    return FrameMatch(
        matches=matches, fp=len(pred) - len(matches), fn=len(gt) - len(matches)
    )


def evaluate_sequence(gt: Frames, pred: Frames, iou_thres: float) -> SequenceCounts:
    """CLEAR counts of one sequence.

    An identity switch is counted when a ground-truth identity's matched
    prediction id differs between two consecutive matched frames, no matter
    how many unmatched or absent frames lie between them.  A fragmentation
    is counted when a trajectory goes matched, then unmatched for at least
    one present frame, then matched again.

    Parameters
    ----------
    gt, pred : mapping
        Frame index to boxes.  ``(frame, id)`` pairs must be unique.
    iou_thres : float
        Minimum IoU of a valid match.

    Raises
    ------
    EvaluationInputError
        On duplicate ``(frame, id)`` rows or empty ground truth.
    """
    _check_unique_ids(gt, "ground-truth")
    _check_unique_ids(pred, "result")
    if sum(len(boxes) for boxes in gt.values()) == 0:
        raise EvaluationInputError("ground truth holds no boxes")

    counts = SequenceCounts()
    prev_pairs: dict[int, int] = {}
    # Per ground-truth identity: prediction id of its most recent matched
    # frame (kept through gaps), and whether an interruption is open.
    last_id: dict[int, int] = {}
    in_gap: dict[int, bool] = {}

    frames = sorted(set(gt) | set(pred))
    for frame in frames:
        gt_boxes = list(gt.get(frame, []))
        pred_boxes = list(pred.get(frame, []))
        frame_match = match_frame(gt_boxes, pred_boxes, iou_thres, prev_pairs)

        counts.fp += frame_match.fp
        counts.fn += frame_match.fn
        counts.num_gt += len(gt_boxes)
        counts.num_matches += len(frame_match.matches)

        matched_pred: dict[int, int] = {}
        for i, j in frame_match.matches:
            counts.iou_sum += iou3d(gt_boxes[i].box, pred_boxes[j].box)
            matched_pred[gt_boxes[i].track_id] = pred_boxes[j].track_id

        for truth in gt_boxes:
            gid = truth.track_id
            pid = matched_pred.get(gid)
            if pid is not None:
                previous = last_id.get(gid)
                if previous is not None and previous != pid:
                    counts.ids += 1
                if in_gap.get(gid, False):
                    counts.frag += 1
                    in_gap[gid] = False
                last_id[gid] = pid
            elif gid in last_id:
                in_gap[gid] = True

        prev_pairs = matched_pred

    return counts


def evaluate_sequences(
    gt_by_sequence: Mapping[str, Frames],
    pred_by_sequence: Mapping[str, Frames],
    iou_thres: float,
) -> SequenceCounts:
    """Evaluate each sequence independently and fold the counts."""
    total = SequenceCounts()
    for name in sorted(gt_by_sequence):
        pred = pred_by_sequence.get(name, {})
        total = total.merge(evaluate_sequence(gt_by_sequence[name], pred, iou_thres))
    return total


def _filter_by_score(frames: Frames, threshold: float) -> dict[int, list[TrackedBox]]:
    return {
        frame: [b for b in boxes if b.score >= threshold]
        for frame, boxes in frames.items()
    }


def smota_value(
    counts: SequenceCounts, recall_target: float, mode: str = "ratio"
) -> float:
    """Scaled accuracy at one recall level, clamped to [0, 1].

    ``"ratio"`` computes ``MOTA / r``; ``"adjusted"`` first credits the
    ``(1 - r)`` share of ground truth that is expected to be missed at
    recall ``r``.
    """
    n = counts.num_gt
    if mode == "adjusted":
        value = 1.0 - (counts.fn + counts.fp + counts.ids - (1.0 - recall_target) * n) / (
            recall_target * n
        )
    else:
        value = counts.mota / recall_target
    return min(1.0, max(0.0, value))


def recall_sweep(
    gt: Frames | Mapping[str, Frames],
    pred: Frames | Mapping[str, Frames],
    cfg: EvalConfig,
) -> MetricsReport:
    """Averaged tracking accuracy over a sweep of target recall levels.

    For each target recall ``r`` in ``{1/L, 2/L, ..., 1}`` the sweep picks
    the confidence threshold whose filtered results reach the smallest
    recall at or above ``r`` and evaluates the filtered results at the
    configured IoU threshold.  Targets that no threshold reaches reuse the
    lowest threshold.  The accuracy of each row is scaled by its target
    recall (see :func:`smota_value`) and the averages are reported on a
    0-100 scale.

    Parameters
    ----------
    gt, pred : mapping
        Either ``frame -> boxes`` for a single sequence or
        ``sequence -> frame -> boxes`` for several.  Every result box needs
        a confidence score.
    cfg : EvalConfig
        Thresholds, category tag and sweep length.

    Raises
    ------
    EvaluationInputError
        If any result box lacks a score.
    """
    gt_seqs = _normalize_sequences(gt)
    pred_seqs = _normalize_sequences(pred)
    for frames in pred_seqs.values():
        for frame, boxes in frames.items():
            for tracked in boxes:
                if tracked.score is None:
                    raise EvaluationInputError(
                        f"result box in frame {frame} has no confidence score; "
                        "the recall sweep needs scores"
                    )

    scores = sorted(
        {
            float(b.score)
            for frames in pred_seqs.values()
            for boxes in frames.values()
            for b in boxes
        },
        reverse=True,
    )
    if not scores:
        scores = [0.0]

    counts_cache: dict[float, SequenceCounts] = {}

    def counts_at(threshold: float) -> SequenceCounts:
        if threshold not in counts_cache:
            filtered = {
                name: _filter_by_score(frames, threshold)
                for name, frames in pred_seqs.items()
            }
            counts_cache[threshold] = evaluate_sequences(gt_seqs, filtered, cfg.iou_thres)
        return counts_cache[threshold]

    candidates = [(threshold, counts_at(threshold)) for threshold in scores]
    lowest_threshold = scores[-1]

    rows: list[RecallRow] = []
    best: tuple[float, SequenceCounts] | None = None
    steps = cfg.num_recall_steps
    for k in range(1, steps + 1):
        target = k / steps
        eligible = [
            (counts.recall, threshold, counts)
            for threshold, counts in candidates
            if counts.recall >= target - 1e-12
        ]
        if eligible:
            _, threshold, counts = min(eligible, key=lambda item: (item[0], -item[1]))
        else:
            threshold, counts = lowest_threshold, counts_at(lowest_threshold)
        row = RecallRow(
            recall_target=target,
            threshold=threshold,
            mota=counts.mota,
            motp=counts.motp,
            smota=smota_value(counts, target, cfg.smota_mode),
            fp=counts.fp,
            fn=counts.fn,
            ids=counts.ids,
        )
        rows.append(row)
        if best is None or counts.mota > best[1].mota:
            best = (threshold, counts)

    assert best is not None
    report = MetricsReport(
        iou_thres=cfg.iou_thres,
        category=cfg.category,
        rows=rows,
        samota=100.0 * _mean(r.smota for r in rows),
        amota=100.0 * _mean(r.mota for r in rows),
        amotp=100.0 * _mean(r.motp for r in rows),
        mota=best[1].mota,
        motp=best[1].motp,
        ids=best[1].ids,
        frag=best[1].frag,
    )
    return report


def _mean(values: Iterable[float]) -> float:
    items = list(values)
    return math.fsum(items) / len(items)


def _normalize_sequences(data: Frames | Mapping[str, Frames]) -> dict[str, Frames]:
    """Accept either a single sequence (frame -> boxes) or a mapping of
    named sequences and return the latter."""
    if not data:
        return {"": {}}
    first_value = next(iter(data.values()))
    if isinstance(first_value, Mapping):
        return dict(data)  # type: ignore[arg-type]
    return {"": data}  # type: ignore[dict-item]
