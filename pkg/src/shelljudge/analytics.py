"""Post-contest CSV exports computed from a closed event log."""

from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

from .events import read_events
from .scoring import format_minutes, problem_stats, score
from .state import ContestState, replay

RESULT_COLUMNS = ["contestant", "solved", "penalty_minutes", "last_accept_s",
                  "hints_total", "failed_total"]
PROBLEM_COLUMNS = ["problem", "correct", "failed", "hints", "checks", "stopped_here"]


def load_state(log_path, pack=None) -> ContestState:
    return replay(read_events(log_path), pack)


def _write_atomic(out_csv, header, rows) -> int:
    out_csv = Path(out_csv)
    fd, tmp = tempfile.mkstemp(dir=out_csv.parent or ".", prefix=f".{out_csv.name}.")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, out_csv)
    except BaseException:
        os.unlink(tmp)
        raise
    return len(rows)


def result_rows(state: ContestState) -> list[list]:
    rows = []
    for r in score(state):
        cs = state.contestants[r.contestant]
        rows.append([r.contestant, r.solved, format_minutes(r.penalty_minutes),
                     f"{r.last_accept:g}",
                     sum(p.hints_taken for p in cs.problems.values()),
                     sum(p.failed_attempts for p in cs.problems.values())])
    return rows


def problem_rows(state: ContestState) -> list[list]:
    stopped = {pid: 0 for pid in state.info.problem_order}
    for cs in state.contestants.values():
        if not cs.finished:
            stopped[cs.active_problem(state.info.problem_order)] += 1
    return [[s.problem, s.correct, s.failed, s.hints, s.checks, stopped[s.problem]]
            for s in problem_stats(state)]


def export_results(log_path, out_csv, pack=None) -> int:
    """One row per contestant in final ranking order; returns the row count."""
    state = load_state(log_path, pack)
    return _write_atomic(out_csv, RESULT_COLUMNS, result_rows(state))


def export_problem_stats(log_path, out_csv, pack=None) -> int:
    state = load_state(log_path, pack)
    return _write_atomic(out_csv, PROBLEM_COLUMNS, problem_rows(state))
