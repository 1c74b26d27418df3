"""Judging: run a script over a problem's cases and classify the outcome."""

from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import sandbox
from .pack import CaseSet, ComparisonMode, ContestPack, TestCase

log = logging.getLogger(__name__)


class Verdict(str, enum.Enum):
    ACCEPTED = "Accepted"
    WRONG_ANSWER = "WrongAnswer"
    TIME_LIMIT_EXCEEDED = "TimeLimitExceeded"
    RUNTIME_ERROR = "RuntimeError"
    OUTPUT_LIMIT_EXCEEDED = "OutputLimitExceeded"
    JUDGE_ERROR = "JudgeError"


class UnknownProblem(KeyError):
    pass


class NoPublicCases(Exception):
    pass


class LogWriteFailure(Exception):
    pass


@dataclass(frozen=True)
class TestResult:
    case_id: str
    verdict: Verdict
    wall_time: int
    produced_stdout: bytes = b""
    exit_code: int | None = None

    __test__ = False


@dataclass(frozen=True)
class EvaluationResult:
    submission_id: int
    problem_id: str
    case_set: CaseSet
    per_test: tuple[TestResult, ...]
    aggregate: Verdict
    judged_at: float = 0.0
    contestant: str | None = None
    script: bytes = field(default=b"", repr=False)

    @property
    def accepted(self) -> bool:
        return self.aggregate is Verdict.ACCEPTED


def compare_output(produced: bytes, expected: bytes, mode=ComparisonMode.NEWLINE_TOLERANT) -> bool:
    if ComparisonMode(mode) is ComparisonMode.EXACT:
        return produced == expected
    return produced.removesuffix(b"\n") == expected.removesuffix(b"\n")


def aggregate_verdict(per_test) -> Verdict:
    verdicts = [t.verdict for t in per_test]
    if Verdict.JUDGE_ERROR in verdicts:
        return Verdict.JUDGE_ERROR
    for v in verdicts:
        if v is not Verdict.ACCEPTED:
            return v
    return Verdict.ACCEPTED


def classify(outcome: sandbox.ExecutionOutcome, expected: bytes, mode) -> Verdict:
    if outcome.killed is sandbox.KillReason.TIMEOUT:
        return Verdict.TIME_LIMIT_EXCEEDED
    if outcome.killed is sandbox.KillReason.OUTPUT_LIMIT:
        return Verdict.OUTPUT_LIMIT_EXCEEDED
    if compare_output(outcome.stdout, expected, mode):
        return Verdict.ACCEPTED
    # only stdout is judged; a nonzero exit matters once the output is wrong
    return Verdict.RUNTIME_ERROR if outcome.exit_code else Verdict.WRONG_ANSWER


def _run_case(backend, problem, case: TestCase, script: bytes, output_limit: int,
              shared_files) -> TestResult:
    spec = sandbox.ExecutionSpec(
        script=script, argv=case.argv, stdin=case.stdin, time_limit=problem.time_limit,
        output_limit=output_limit, shared_files=shared_files)
    try:
        outcome = backend.execute(spec)
    except sandbox.SandboxSetupFailure as exc:
        log.error("sandbox failure on %s/%s: %s", problem.id, case.id, exc)
        return TestResult(case.id, Verdict.JUDGE_ERROR, 0)
    verdict = classify(outcome, case.expected_stdout, problem.comparison_mode)
    return TestResult(case.id, verdict, outcome.wall_time, outcome.stdout, outcome.exit_code)


def evaluate(pack: ContestPack, problem_id: str, script: bytes,
             case_set: CaseSet = CaseSet.HIDDEN, *, backend=None, shared_files=None,
             submission_id: int = 0, contestant: str | None = None,
             judged_at: float = 0.0, workers: int = 1) -> EvaluationResult:
    """Run ``script`` over every case of the set; no fail-fast."""
    if problem_id not in pack.problems:
        raise UnknownProblem(problem_id)
    problem = pack.problems[problem_id]
    case_set = CaseSet(case_set)
    cases = problem.public_cases if case_set is CaseSet.PUBLIC else problem.hidden_cases
    if not cases:
        raise NoPublicCases(problem_id)
    if not isinstance(backend, sandbox.PortableBackend):
        backend = sandbox.get_backend(backend)
    if shared_files is None:
        shared_files = pack.files_dir if pack.files_dir.is_dir() else None
    limit = pack.config.output_limit

    if workers > 1 and len(cases) > 1:
        with ThreadPoolExecutor(min(workers, len(cases))) as pool:
            per_test = list(pool.map(
                lambda c: _run_case(backend, problem, c, script, limit, shared_files), cases))
    else:
        per_test = [_run_case(backend, problem, c, script, limit, shared_files) for c in cases]

    return EvaluationResult(
        submission_id=submission_id, problem_id=problem_id, case_set=case_set,
        per_test=tuple(per_test), aggregate=aggregate_verdict(per_test),
        judged_at=judged_at, contestant=contestant, script=script)


# -- instructor logs ------------------------------------------------------------

def instructor_log_path(log_root, contestant: str, problem_id: str, submission_id: int) -> Path:
    return Path(log_root) / contestant / problem_id / f"{submission_id}.log"


def write_instructor_log(result: EvaluationResult, log_root) -> Path:
    """Write the per-case record and the submitted script next to it.

    Produced output is stored length-prefixed, so arbitrary bytes survive
    a round trip through :func:`read_instructor_log`.
    """
    contestant = result.contestant or "anonymous"
    path = instructor_log_path(log_root, contestant, result.problem_id, result.submission_id)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "xb") as fh:
            header = (
                f"submission: {result.submission_id}\n"
                f"contestant: {contestant}\n"
                f"problem: {result.problem_id}\n"
                f"case_set: {result.case_set.value}\n"
                f"judged_at: {result.judged_at}\n"
                f"aggregate: {result.aggregate.value}\n"
                f"cases: {len(result.per_test)}\n"
            )
            fh.write(header.encode())
            for t in result.per_test:
                fh.write(f"\n=== case {t.case_id}: {t.verdict.value} "
                         f"wall={t.wall_time}ms exit={t.exit_code} "
                         f"stdout={len(t.produced_stdout)}\n".encode())
                fh.write(t.produced_stdout)
            fh.flush()
            os.fsync(fh.fileno())
        with open(path.with_suffix(".script"), "xb") as fh:
            fh.write(result.script)
    except OSError as exc:
        raise LogWriteFailure(f"{path}: {exc}") from exc
    return path


@dataclass
class InstructorLog:
    header: dict[str, str]
    cases: list[dict]

    @property
    def aggregate(self) -> Verdict:
        return Verdict(self.header["aggregate"])


def read_instructor_log(path) -> InstructorLog:
    data = Path(path).read_bytes()
    head, _, rest = data.partition(b"\n\n")
    header = dict(line.split(": ", 1) for line in head.decode().splitlines())
    cases = []
    pos = 0
    rest = b"\n" + rest if rest else rest
    while pos < len(rest):
        assert rest.startswith(b"\n=== case ", pos), "corrupt instructor log"
        eol = rest.index(b"\n", pos + 1)
        line = rest[pos + len(b"\n=== case "):eol].decode()
        ident, _, tail = line.partition(": ")
        fields = tail.split(" ")
        meta = dict(f.split("=", 1) for f in fields[1:])
        size = int(meta["stdout"])
        out = rest[eol + 1:eol + 1 + size]
        cases.append({"case": ident, "verdict": Verdict(fields[0]),
                      "wall_ms": int(meta["wall"].removesuffix("ms")), "stdout": out})
        pos = eol + 1 + size
    return InstructorLog(header, cases)
