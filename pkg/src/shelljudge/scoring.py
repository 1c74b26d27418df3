"""Live ranking.

Contestants are ordered by problems solved; ties go to the smaller penalty,
then to the contestant id.  Penalty, in minutes::

    minutes from contest start to the last accepted submission
    + wrong_attempt_penalty * failed attempts on solved problems
    + hint_penalty * every hint taken

Penalties are kept as exact fractions and only rounded when rendered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .state import ContestInfo, ContestState, ContestantState


@dataclass(frozen=True)
class Cell:
    problem: str
    solved: bool
    attempts: int  # failed attempts (before the accept, when solved)
    hints: int
    at: float | None = None

    def to_dict(self) -> dict:
        return {"problem": self.problem, "solved": self.solved, "attempts": self.attempts,
                "hints": self.hints, "at": self.at}


@dataclass(frozen=True)
class RankingRow:
    contestant: str
    solved: int
    penalty_minutes: Fraction
    last_accept: float
    cells: tuple[Cell, ...]

    @property
    def sort_key(self):
        return (-self.solved, self.penalty_minutes, self.contestant)

    @property
    def penalty_text(self) -> str:
        return format_minutes(self.penalty_minutes)

    def to_dict(self) -> dict:
        return {"contestant": self.contestant, "solved": self.solved,
                "penalty_minutes": float(self.penalty_minutes), "penalty": self.penalty_text,
                "last_accept": self.last_accept, "cells": [c.to_dict() for c in self.cells]}


def seconds_fraction(seconds: float) -> Fraction:
    """Contest times carry millisecond resolution."""
    return Fraction(round(seconds * 1000), 1000)


def format_minutes(value: Fraction) -> str:
    tenths = math.floor(Fraction(value) * 10 + Fraction(1, 2))
    return f"{tenths // 10}.{tenths % 10}"


def contestant_penalty(cs: ContestantState, config) -> Fraction:
    solved = [p for p in cs.problems.values() if p.solved_at is not None]
    last = max((p.solved_at for p in solved), default=0.0)
    failed = sum(p.failed_attempts for p in solved)
    if config.count_unsolved_failures:
        failed = sum(p.failed_attempts for p in cs.problems.values())
    hints = sum(p.hints_taken for p in cs.problems.values())
    return (seconds_fraction(last) / 60
            + config.wrong_attempt_penalty * failed
            + config.hint_penalty * hints)


def ranking_row(cs: ContestantState, order, config) -> RankingRow:
    cells = []
    for pid in order:
        p = cs.problems[pid]
        cells.append(Cell(pid, p.solved_at is not None, p.failed_attempts, p.hints_taken,
                          p.solved_at))
    last = max((c.at for c in cells if c.solved), default=0.0)
    return RankingRow(cs.id, sum(c.solved for c in cells), contestant_penalty(cs, config),
                      last, tuple(cells))


def score(state: ContestState, config=None) -> list[RankingRow]:
    """Ranking rows, best first.  ``config`` defaults to the contest's own."""
    config = config or state.info
    rows = [ranking_row(cs, state.info.problem_order, config)
            for cs in state.contestants.values()]
    rows.sort(key=lambda r: r.sort_key)
    return rows


@dataclass(frozen=True)
class ProblemStats:
    problem: str
    correct: int
    failed: int
    hints: int
    checks: int

    def to_dict(self) -> dict:
        return {"problem": self.problem, "correct": self.correct, "failed": self.failed,
                "hints": self.hints, "checks": self.checks}


def problem_stats(state: ContestState) -> list[ProblemStats]:
    """Per-problem totals; check runs are counted apart from submissions."""
    out = []
    for pid in state.info.problem_order:
        progress = [cs.problems[pid] for cs in state.contestants.values()]
        out.append(ProblemStats(
            problem=pid,
            correct=sum(p.solved_at is not None for p in progress),
            failed=sum(p.failed_attempts for p in progress),
            hints=sum(p.hints_taken for p in progress),
            checks=sum(p.checks for p in progress),
        ))
    return out


def render_ranking(rows: list[RankingRow], info: ContestInfo) -> str:
    """Plain-text scoreboard; byte-stable for equal input."""
    header = ["#", "contestant", "solved", "penalty"] + list(info.problem_order)
    table = [header]
    for rank, row in enumerate(rows, 1):
        cells = []
        for c in row.cells:
            if c.solved:
                cells.append(f"+{c.attempts or ''}@{int(c.at // 60)}"
                             + (f"h{c.hints}" if c.hints else ""))
            elif c.attempts or c.hints:
                cells.append(f"-{c.attempts}" + (f"h{c.hints}" if c.hints else ""))
            else:
                cells.append(".")
        table.append([str(rank), row.contestant, str(row.solved), row.penalty_text] + cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in table]
    return f"{info.name}\n" + "\n".join(lines) + "\n"
