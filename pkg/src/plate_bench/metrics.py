"""Recognition accuracy metrics.

Two headline numbers: plate-level accuracy (exact string match) and
character-level accuracy (aligned match count over total truth characters,
the complement of character error rate). Alignment is minimum edit distance
with unit costs; among minimum-cost alignments the one maximizing matches is
chosen, with a deterministic traceback tie-break of
Match > Substitute > Delete > Insert.

Character accuracy counts insertions in the prediction against nothing: the
denominator is ground-truth characters only. Reports flag this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .labels import ALPHABET, PlateLabel

CHAR_ACCURACY_CONVENTION = (
    "character accuracy = aligned matches / ground-truth characters; "
    "inserted characters are not counted against the denominator"
)


class OpKind(Enum):
    MATCH = "match"
    SUBSTITUTE = "substitute"
    INSERT = "insert"
    DELETE = "delete"


@dataclass(frozen=True)
class AlignmentOp:
    kind: OpKind
    truth_char: str | None = None
    pred_char: str | None = None

    def __post_init__(self) -> None:
        if self.kind is OpKind.MATCH and self.truth_char != self.pred_char:
            raise ValueError("match op requires equal characters")
        if self.kind is OpKind.INSERT and self.truth_char is not None:
            raise ValueError("insert op carries no truth character")
        if self.kind is OpKind.DELETE and self.pred_char is not None:
            raise ValueError("delete op carries no predicted character")


def align(truth: PlateLabel, pred: PlateLabel) -> list[AlignmentOp]:
    """Minimum-edit-distance alignment of prediction against truth.

    Among all unit-cost minimum alignments, maximizes the match count; the
    traceback prefers Match > Substitute > Delete > Insert so the op list is
    deterministic.
    """
    t, p = truth.chars, pred.chars
    m, n = len(t), len(p)

    # dp[i][j] = (cost, -matches) for aligning t[:i] with p[:j]; minimizing
    # the tuple gives minimum cost, then maximum matches.
    dp = [[(0, 0)] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        dp[i][0] = (i, 0)
    for j in range(1, n + 1):
        dp[0][j] = (j, 0)
    for i in range(1, m + 1):
        row, above = dp[i], dp[i - 1]
        ti = t[i - 1]
        for j in range(1, n + 1):
            dc, dm = above[j - 1]
            if ti == p[j - 1]:
                best = (dc, dm - 1)
            else:
                best = (dc + 1, dm)
            up = (above[j][0] + 1, above[j][1])
            if up < best:
                best = up
            left = (row[j - 1][0] + 1, row[j - 1][1])
            if left < best:
                best = left
            row[j] = best

    ops: list[AlignmentOp] = []
    i, j = m, n
    while i > 0 or j > 0:
        cost, matches = dp[i][j]
        if i > 0 and j > 0 and t[i - 1] == p[j - 1] and dp[i - 1][j - 1] == (cost, matches + 1):
            ops.append(AlignmentOp(OpKind.MATCH, t[i - 1], p[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and t[i - 1] != p[j - 1] and dp[i - 1][j - 1] == (cost - 1, matches):
            ops.append(AlignmentOp(OpKind.SUBSTITUTE, t[i - 1], p[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i - 1][j] == (cost - 1, matches):
            ops.append(AlignmentOp(OpKind.DELETE, truth_char=t[i - 1]))
            i -= 1
        else:
            ops.append(AlignmentOp(OpKind.INSERT, pred_char=p[j - 1]))
            j -= 1
    ops.reverse()
    return ops


def alignment_cost(ops: Iterable[AlignmentOp]) -> int:
    return sum(1 for op in ops if op.kind is not OpKind.MATCH)


def match_count(ops: Iterable[AlignmentOp]) -> int:
    return sum(1 for op in ops if op.kind is OpKind.MATCH)


@dataclass(frozen=True)
class PlateEval:
    truth: PlateLabel
    pred: PlateLabel
    matched_chars: int
    truth_len: int
    exact: bool

    def __post_init__(self) -> None:
        if not 0 <= self.matched_chars <= self.truth_len:
            raise ValueError("matched_chars must lie in [0, truth_len]")
        if self.exact != (self.truth.chars == self.pred.chars):
            raise ValueError("exact flag inconsistent with labels")


def eval_plate(truth: PlateLabel, pred: PlateLabel) -> PlateEval:
    if not truth.chars:
        raise ValueError("ground-truth label must be non-empty")
    ops = align(truth, pred)
    return PlateEval(
        truth=truth,
        pred=pred,
        matched_chars=match_count(ops),
        truth_len=len(truth.chars),
        exact=truth.chars == pred.chars,
    )


@dataclass(frozen=True)
class ClassScore:
    correct: int
    total: int

    @property
    def accuracy_pct(self) -> float:
        return 100.0 * self.correct / self.total


@dataclass(frozen=True)
class EvalReport:
    per_plate: tuple[PlateEval, ...]
    char_correct: int
    char_total: int
    plate_correct: int
    plate_total: int
    per_class: Mapping[str, ClassScore] = field(default_factory=dict)

    @property
    def char_accuracy_pct(self) -> float:
        return 100.0 * self.char_correct / self.char_total

    @property
    def plate_accuracy_pct(self) -> float:
        return 100.0 * self.plate_correct / self.plate_total


def aggregate(per_plate: Sequence[PlateEval]) -> EvalReport:
    """Sum per-plate evals into dataset-level counts and per-class tallies.

    Per-class tallies attribute every aligned op to its truth character:
    a substitution or deletion counts against the truth class.
    """
    if not per_plate:
        raise ValueError("cannot aggregate an empty evaluation list")
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    for ev in per_plate:
        for op in align(ev.truth, ev.pred):
            if op.truth_char is None:
                continue
            total[op.truth_char] = total.get(op.truth_char, 0) + 1
            if op.kind is OpKind.MATCH:
                correct[op.truth_char] = correct.get(op.truth_char, 0) + 1
    per_class = {
        ch: ClassScore(correct.get(ch, 0), total[ch]) for ch in sorted(total)
    }
    return EvalReport(
        per_plate=tuple(per_plate),
        char_correct=sum(ev.matched_chars for ev in per_plate),
        char_total=sum(ev.truth_len for ev in per_plate),
        plate_correct=sum(1 for ev in per_plate if ev.exact),
        plate_total=len(per_plate),
        per_class=per_class,
    )


def heatmap_table(reports: Mapping[str, EvalReport]) -> dict[str, dict[str, float | None]]:
    """Backend x 36-class accuracy matrix; None marks classes absent from truth."""
    table: dict[str, dict[str, float | None]] = {}
    for backend_id, report in reports.items():
        row: dict[str, float | None] = {}
        for ch in ALPHABET:
            score = report.per_class.get(ch)
            row[ch] = None if score is None else score.accuracy_pct
        table[backend_id] = row
    return table


def heatmap_csv(table: Mapping[str, Mapping[str, float | None]]) -> str:
    """CSV render of a heatmap table; absent classes serialize as empty cells."""
    lines = ["backend," + ",".join(ALPHABET)]
    for backend_id in sorted(table):
        row = table[backend_id]
        cells = ["" if row[ch] is None else f"{row[ch]:.2f}" for ch in ALPHABET]
        lines.append(backend_id + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def round_percent(value_pct: float, decimals: int) -> float:
    """Round half-up at the given number of decimals (report formatting only)."""
    q = Decimal(1).scaleb(-decimals) if decimals > 0 else Decimal(1)
    return float(Decimal(repr(value_pct)).quantize(q, rounding=ROUND_HALF_UP))


def accuracy_table(rows: Mapping[str, EvalReport]) -> str:
    """Human-readable character- and plate-level accuracy table.

    One row per backend, sorted by plate accuracy descending (ties by name).
    """
    header = f"{'method':<24} {'chars ok':>9} {'char acc %':>11} {'plates ok':>10} {'plate acc %':>12}"
    sep = "-" * len(header)
    ordered = sorted(rows.items(), key=lambda kv: (-kv[1].plate_accuracy_pct, kv[0]))
    lines = [header, sep]
    for backend_id, rep in ordered:
        lines.append(
            f"{backend_id:<24} {rep.char_correct:>9} {round_percent(rep.char_accuracy_pct, 2):>11.2f}"
            f" {rep.plate_correct:>10} {round_percent(rep.plate_accuracy_pct, 2):>12.2f}"
        )
    lines.append(sep)
    lines.append(f"note: {CHAR_ACCURACY_CONVENTION}")
    return "\n".join(lines) + "\n"


def summary_dict(rows: Mapping[str, EvalReport]) -> dict:
    """Machine-readable accuracy summary (full precision, no rounding)."""
    return {
        "convention": CHAR_ACCURACY_CONVENTION,
        "backends": {
            backend_id: {
                "char_correct": rep.char_correct,
                "char_total": rep.char_total,
                "char_accuracy_pct": rep.char_accuracy_pct,
                "plate_correct": rep.plate_correct,
                "plate_total": rep.plate_total,
                "plate_accuracy_pct": rep.plate_accuracy_pct,
                "per_class": {
                    ch: {"correct": sc.correct, "total": sc.total}
                    for ch, sc in rep.per_class.items()
                },
            }
            for backend_id, rep in sorted(rows.items())
        },
    }
