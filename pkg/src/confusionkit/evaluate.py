"""Corpus-level statistics: quadrant counts, confusion rates, margin analysis.

Every sample is evaluated twice, with each speaker set as the target in
turn, yielding per-sample SI-SDRi pairs plus the embedding similarities
needed to reproduce the scatter analyses externally.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .embedding import ToyEncoder, cosine_similarity, encode
from .postfilter import (
    PostFilterParams,
    apply_postfilter,
    decide_confused,
    si_sdri_of,
    similarity_features,
)
from .simulate import Corpus, confusion_draw, swap_roles, toy_separator

EVAL_FIELDS = [
    "sample_id",
    "si_sdri_1",
    "si_sdri_2",
    "pi_1",
    "phi_1",
    "pi_2",
    "phi_2",
    "cos_tgt_1",
    "cos_int_1",
    "cos_tgt_2",
    "cos_int_2",
    "flagged_1",
    "flagged_2",
    "confused_1",
    "confused_2",
]


@dataclass
class EvalRecord:
    """Both-roles evaluation of one mixture.

    Role 1 keeps the generated target assignment; role 2 swaps speakers.
    cos_tgt/cos_int are enrollment-to-source cosine similarities; confused_*
    are the simulator's ground-truth flags (None when unavailable).
    """

    sample_id: str
    si_sdri_1: float
    si_sdri_2: float
    pi_1: float
    phi_1: float
    pi_2: float
    phi_2: float
    cos_tgt_1: float
    cos_int_1: float
    cos_tgt_2: float
    cos_int_2: float
    flagged_1: bool
    flagged_2: bool
    confused_1: bool | None = None
    confused_2: bool | None = None


def paired_eval_records(
    corpus: Corpus,
    enc: ToyEncoder,
    params: PostFilterParams | None = None,
) -> list[EvalRecord]:
    """Evaluate every sample with both speakers as target, optionally filtered.

    Without params, records carry the raw separator performance
    (flagged_* stay False); with params, the post-filtered one.
    """
    records = []
    for sample in corpus.samples:
        sides = {}
        for role, s in ((1, sample), (2, swap_roles(sample))):
            est = toy_separator(s, corpus.confusion)
            pair = similarity_features(
                est, s.enroll_target, s.enroll_interferer, enc, s.index
            )
            flagged = decide_confused(pair, params) if params is not None else False
            final = apply_postfilter(s.mixture, est, flagged)
            enroll_emb = encode(enc, s.enroll_target)
            sides[role] = {
                "si_sdri": si_sdri_of(final, s),
                "pi": pair.pi,
                "phi": pair.phi,
                "cos_tgt": cosine_similarity(enroll_emb, encode(enc, s.source_target)),
                "cos_int": cosine_similarity(
                    enroll_emb, encode(enc, s.source_interferer)
                ),
                "flagged": flagged,
                "confused": confusion_draw(s, corpus.confusion),
            }
        records.append(
            EvalRecord(
                sample_id=f"sample_{sample.index:05d}",
                si_sdri_1=sides[1]["si_sdri"],
                si_sdri_2=sides[2]["si_sdri"],
                pi_1=sides[1]["pi"],
                phi_1=sides[1]["phi"],
                pi_2=sides[2]["pi"],
                phi_2=sides[2]["phi"],
                cos_tgt_1=sides[1]["cos_tgt"],
                cos_int_1=sides[1]["cos_int"],
                cos_tgt_2=sides[2]["cos_tgt"],
                cos_int_2=sides[2]["cos_int"],
                flagged_1=sides[1]["flagged"],
                flagged_2=sides[2]["flagged"],
                confused_1=sides[1]["confused"],
                confused_2=sides[2]["confused"],
            )
        )
    return records


def quadrant_stats(records: list[EvalRecord], threshold: float = 5.0) -> dict[str, int]:
    """Partition SI-SDRi pairs by which roles clear the threshold."""
    if not records:
        raise ValueError("no records to partition")
    counts = {"both_above": 0, "s1_below": 0, "s2_below": 0, "both_below": 0}
    for r in records:
        a, b = r.si_sdri_1 > threshold, r.si_sdri_2 > threshold
        if a and b:
            counts["both_above"] += 1
        elif b:
            counts["s1_below"] += 1
        elif a:
            counts["s2_below"] += 1
        else:
            counts["both_below"] += 1
    return counts


def confusion_rate(records: list[EvalRecord], threshold_db: float = -5.0) -> float:
    """Fraction of roles (two per record) whose SI-SDRi falls below the threshold."""
    if not records:
        raise ValueError("no records")
    below = sum(
        (r.si_sdri_1 < threshold_db) + (r.si_sdri_2 < threshold_db) for r in records
    )
    return below / (2 * len(records))


def margin_analysis(records: list[EvalRecord], margin: float = 0.1) -> dict[str, float]:
    """Enrollment-side similarity margins over all roles.

    fraction_correct_side: roles whose enrollment is closer (by cosine) to
    the target source than to the interferer. fraction_beyond_margin: roles
    where that similarity gap exceeds the margin. confusion_fraction_beyond:
    among ground-truth confused roles, the fraction whose gap does NOT
    exceed the margin (0.0 when no role is confused).
    """
    if not records:
        raise ValueError("no records")
    gaps = []
    confused = []
    for r in records:
        gaps.append(r.cos_tgt_1 - r.cos_int_1)
        gaps.append(r.cos_tgt_2 - r.cos_int_2)
        confused.append(bool(r.confused_1))
        confused.append(bool(r.confused_2))
    gaps = np.asarray(gaps)
    confused = np.asarray(confused)
    n_confused = int(confused.sum())
    beyond_among_confused = (
        float((gaps[confused] <= margin).sum() / n_confused) if n_confused else 0.0
    )
    return {
        "fraction_correct_side": float((gaps > 0.0).mean()),
        "fraction_beyond_margin": float((gaps > margin).mean()),
        "confusion_fraction_beyond": beyond_among_confused,
    }


def _record_to_row(r: EvalRecord) -> list:
    row = [r.sample_id]
    for name in EVAL_FIELDS[1:11]:
        row.append(repr(getattr(r, name)))
    row.append(int(r.flagged_1))
    row.append(int(r.flagged_2))
    for v in (r.confused_1, r.confused_2):
        row.append("" if v is None else int(v))
    return row


def _row_to_record(row: dict[str, str]) -> EvalRecord:
    kwargs = {"sample_id": row["sample_id"]}
    for name in EVAL_FIELDS[1:11]:
        kwargs[name] = float(row[name])
    kwargs["flagged_1"] = bool(int(row["flagged_1"]))
    kwargs["flagged_2"] = bool(int(row["flagged_2"]))
    for name in ("confused_1", "confused_2"):
        kwargs[name] = None if row[name] == "" else bool(int(row[name]))
    return EvalRecord(**kwargs)


def emit_report(
    records: list[EvalRecord],
    stats: dict,
    path: str | os.PathLike,
    format: str = "json",
) -> None:
    """Write records and stats to disk, as one JSON document or as CSV.

    CSV mode writes the record table to `path` (plot-ready columns) and the
    stats to `path` + '.stats.json'. Refuses to write empty reports.
    """
    if not records:
        raise ValueError("refusing to emit a report with no records")
    if not stats:
        raise ValueError("refusing to emit a report with no stats")
    if format == "json":
        doc = {"stats": stats, "records": [asdict(r) for r in records]}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EVAL_FIELDS)
            for r in records:
                writer.writerow(_record_to_row(r))
        with open(f"{path}.stats.json", "w") as fh:
            json.dump(stats, fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {format!r}")


def read_report_csv(path: str | os.PathLike) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        return [_row_to_record(row) for row in csv.DictReader(fh)]


def read_report_json(path: str | os.PathLike) -> tuple[list[EvalRecord], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    return [EvalRecord(**r) for r in doc["records"]], doc["stats"]
