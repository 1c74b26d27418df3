"""Contest state machine.

Every mutation is an event appended to the log first and then applied to
the in-memory :class:`ContestState` by the same :meth:`ContestState.apply`
that :func:`replay` uses, so a live contest and a replayed log can never
disagree.
"""

from __future__ import annotations

import copy
import hashlib
import hmac
import logging
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from . import judge
from .events import ContestEvent, EventLog, MemoryLog, check_dense
from .judge import EvaluationResult, NoPublicCases, TestResult, Verdict
from .pack import FILES_PLACEHOLDER, CaseSet, ContestPack, Hint

log = logging.getLogger(__name__)

_CONTESTANT_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]{0,63}$")


class ContestError(Exception):
    code = "error"


class NotRegistered(ContestError):
    code = "not_registered"


class DuplicateContestant(ContestError):
    code = "duplicate_contestant"


class InvalidContestant(ContestError):
    code = "invalid_contestant"


class ContestNotRunning(ContestError):
    code = "contest_not_running"


class ContestEnded(ContestNotRunning):
    code = "contest_ended"


class AlreadyFinished(ContestError):
    code = "already_finished"


class ContestantBusy(ContestError):
    code = "busy"


class NoMoreHints(ContestError):
    code = "no_more_hints"


class WorkspaceWriteFailure(ContestError):
    code = "workspace"


class PackDigestMismatch(ContestError):
    code = "pack_digest"


class InvalidEvent(ContestError):
    code = "invalid_event"


# -- clocks -------------------------------------------------------------------

class ContestClock:
    """Wall clock relative to ``start_time`` (epoch seconds), never going backwards."""

    def __init__(self, start_time: float | None = None, source: Callable[[], float] = time.time):
        self.start_time = source() if start_time is None else start_time
        self._source = source
        self._last = 0.0
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            self._last = max(self._last, round(self._source() - self.start_time, 3))
            return self._last


class ManualClock:
    """Test clock: time moves only when told to."""

    def __init__(self, t: float = 0.0):
        self.start_time = 0.0
        self.t = float(t)

    def now(self) -> float:
        return round(self.t, 3)

    def set(self, t: float):
        if t < self.t:
            raise ValueError("clock cannot go backwards")
        self.t = float(t)

    def advance(self, dt: float):
        self.set(self.t + dt)


# -- derived state ------------------------------------------------------------

@dataclass(frozen=True)
class ContestInfo:
    name: str
    duration: int  # minutes
    problem_order: tuple[str, ...]
    hints_available: dict[str, int]
    wrong_attempt_penalty: int
    hint_penalty: int
    count_unsolved_failures: bool = False
    pack_digest: str = ""
    start_wall: float = 0.0

    @classmethod
    def from_pack(cls, pack: ContestPack, start_wall: float = 0.0,
                  duration: int | None = None) -> "ContestInfo":
        cfg = pack.config
        return cls(
            name=cfg.name, duration=duration or cfg.duration,
            problem_order=tuple(cfg.problem_order),
            hints_available={pid: pack.hints_available(pid) for pid in cfg.problem_order},
            wrong_attempt_penalty=cfg.wrong_attempt_penalty, hint_penalty=cfg.hint_penalty,
            count_unsolved_failures=cfg.count_unsolved_failures, pack_digest=pack.digest,
            start_wall=start_wall)

    def to_payload(self) -> dict:
        return {"name": self.name, "duration": self.duration,
                "problem_order": list(self.problem_order),
                "hints_available": dict(self.hints_available),
                "wrong_attempt_penalty": self.wrong_attempt_penalty,
                "hint_penalty": self.hint_penalty,
                "count_unsolved_failures": self.count_unsolved_failures,
                "pack_digest": self.pack_digest, "start_wall": self.start_wall}

    @classmethod
    def from_payload(cls, data: dict) -> "ContestInfo":
        return cls(name=data["name"], duration=int(data["duration"]),
                   problem_order=tuple(data["problem_order"]),
                   hints_available={k: int(v) for k, v in data["hints_available"].items()},
                   wrong_attempt_penalty=int(data["wrong_attempt_penalty"]),
                   hint_penalty=int(data["hint_penalty"]),
                   count_unsolved_failures=bool(data.get("count_unsolved_failures", False)),
                   pack_digest=data.get("pack_digest", ""),
                   start_wall=float(data.get("start_wall", 0.0)))


@dataclass
class ProblemProgress:
    failed_attempts: int = 0
    submissions: int = 0
    judge_errors: int = 0
    checks: int = 0
    hints_taken: int = 0
    solved_at: float | None = None


@dataclass
class ContestantState:
    id: str
    token_hash: str
    registered_at: float
    problems: dict[str, ProblemProgress]
    active_problem_index: int = 0
    unlocked: list[str] = field(default_factory=list)
    finished: bool = False

    def active_problem(self, order) -> str | None:
        if self.finished:
            return None
        return order[self.active_problem_index]

    @property
    def solved(self) -> int:
        return sum(1 for p in self.problems.values() if p.solved_at is not None)


@dataclass
class PendingEvaluation:
    contestant: str
    problem: str
    at: float
    check: bool


@dataclass
class ContestState:
    info: ContestInfo | None = None
    contestants: dict[str, ContestantState] = field(default_factory=dict)
    pending: dict[int, PendingEvaluation] = field(default_factory=dict)
    ended: bool = False
    last_seq: int = 0

    def busy(self, contestant: str) -> bool:
        return any(p.contestant == contestant for p in self.pending.values())

    def apply(self, ev: ContestEvent):
        if ev.seq != self.last_seq + 1:
            raise InvalidEvent(f"event seq {ev.seq} after {self.last_seq}")
        handler = getattr(self, "_on_" + ev.kind, None)
        if handler is None:
            raise InvalidEvent(f"unknown event kind {ev.kind}")
        if ev.kind != "ContestStarted" and self.info is None:
            raise InvalidEvent(f"{ev.kind} before ContestStarted")
        try:
            handler(ev)
        except KeyError as exc:
            raise InvalidEvent(f"seq {ev.seq}: unknown reference {exc}") from None
        self.last_seq = ev.seq

    def _contestant(self, ev) -> ContestantState:
        return self.contestants[ev.data["contestant"]]

    def _on_ContestStarted(self, ev):
        if self.info is not None:
            raise InvalidEvent("contest started twice")
        self.info = ContestInfo.from_payload(ev.data)

    def _on_ContestantRegistered(self, ev):
        cid = ev.data["contestant"]
        if cid in self.contestants:
            raise InvalidEvent(f"{cid} registered twice")
        self.contestants[cid] = ContestantState(
            id=cid, token_hash=ev.data["token_hash"], registered_at=ev.at,
            problems={pid: ProblemProgress() for pid in self.info.problem_order})

    def _on_ProblemUnlocked(self, ev):
        cs = self._contestant(ev)
        expected = self.info.problem_order[len(cs.unlocked)]
        if ev.data["problem"] != expected:
            raise InvalidEvent(f"seq {ev.seq}: unlock of {ev.data['problem']}, expected {expected}")
        cs.unlocked.append(expected)

    def _on_SubmissionReceived(self, ev):
        cs = self._contestant(ev)
        self.pending[ev.seq] = PendingEvaluation(
            cs.id, ev.data["problem"], ev.at, bool(ev.data.get("check", False)))

    def _on_EvaluationCompleted(self, ev):
        pend = self.pending.pop(ev.data["submission"])
        cs = self.contestants[pend.contestant]
        progress = cs.problems[pend.problem]
        verdict = Verdict(ev.data["aggregate"])
        if pend.check:
            progress.checks += 1
        elif verdict is Verdict.JUDGE_ERROR:
            progress.judge_errors += 1
        elif verdict is Verdict.ACCEPTED:
            if cs.active_problem(self.info.problem_order) != pend.problem:
                raise InvalidEvent(f"seq {ev.seq}: accept for inactive problem")
            progress.submissions += 1
            progress.solved_at = pend.at
            cs.active_problem_index += 1
            if cs.active_problem_index == len(self.info.problem_order):
                cs.finished = True
        else:
            progress.submissions += 1
            progress.failed_attempts += 1

    def _on_HintRequested(self, ev):
        progress = self._contestant(ev).problems[ev.data["problem"]]
        if ev.data["index"] != progress.hints_taken + 1:
            raise InvalidEvent(f"seq {ev.seq}: hint index out of order")
        progress.hints_taken += 1

    def _on_ContestEnded(self, ev):
        self.ended = True


def replay(events, pack: ContestPack | None = None) -> ContestState:
    """Rebuild state from a recorded log; no script is executed."""
    events = list(events)
    check_dense(events)
    state = ContestState()
    if events and events[0].kind != "ContestStarted":
        raise InvalidEvent("log does not begin with ContestStarted")
    if events and pack is not None and events[0].data.get("pack_digest") != pack.digest:
        raise PackDigestMismatch(
            f"log recorded against pack {events[0].data.get('pack_digest', '')[:12]}, "
            f"loaded pack is {pack.digest[:12]}")
    for ev in events:
        state.apply(ev)
    return state


def unlock_invariant_holds(state: ContestState) -> bool:
    total = len(state.info.problem_order)
    for cs in state.contestants.values():
        want = total if cs.finished else cs.solved + 1
        if len(cs.unlocked) != want or cs.active_problem_index != min(cs.solved, total):
            return False
    return True


def hash_token(token: str) -> str:
    return hashlib.sha256(token.encode()).hexdigest()


# -- the live contest ---------------------------------------------------------

@dataclass(frozen=True)
class SubmissionOutcome:
    verdict: Verdict
    problem: str
    attempt: int
    unlocked: str | None
    unlocked_position: int | None
    finished: bool
    penalty_minutes: object
    result: EvaluationResult


Evaluator = Callable[..., EvaluationResult]


class Contest:
    """Single-writer owner of one contest's state and event log."""

    def __init__(self, pack: ContestPack, *, log_sink=None, events=None, clock=None,
                 workspace_root=None, log_root=None, backend=None, evaluator=None,
                 shared_files=None, duration_override=None, case_workers=1):
        self.pack = pack
        self.log = log_sink if log_sink is not None else MemoryLog()
        self.workspace_root = Path(workspace_root) if workspace_root else None
        self.log_root = Path(log_root) if log_root else None
        self.backend = backend
        self.shared_files = Path(shared_files) if shared_files else (
            pack.files_dir if pack.files_dir.is_dir() else None)
        self.case_workers = case_workers
        self._evaluator = evaluator or self._default_evaluator
        self._lock = threading.RLock()
        self.state = ContestState()
        if events:
            self.state = replay(events, pack)
            self.clock = clock or ContestClock(self.state.info.start_wall)
            self._recover_pending()
        else:
            start = time.time()
            self.clock = clock or ContestClock(start)
            info = ContestInfo.from_pack(pack, start_wall=start, duration=duration_override)
            self._emit("ContestStarted", at=0.0, **info.to_payload())

    # plumbing

    def _emit(self, kind: str, at: float | None = None, **data) -> ContestEvent:
        with self._lock:
            ev = ContestEvent(self.state.last_seq + 1,
                              self.clock.now() if at is None else at, kind, data)
            self.log.append(ev)
            self.state.apply(ev)
            return ev

    def _recover_pending(self):
        for sub, pend in sorted(self.state.pending.items()):
            log.warning("submission %d by %s was interrupted; recording JudgeError",
                        sub, pend.contestant)
            self._emit("EvaluationCompleted", contestant=pend.contestant,
                       problem=pend.problem, submission=sub, check=pend.check,
                       aggregate=Verdict.JUDGE_ERROR.value, per_test=[])

    def _default_evaluator(self, problem_id, script, case_set, *, submission_id, contestant):
        return judge.evaluate(self.pack, problem_id, script, case_set, backend=self.backend,
                              shared_files=self.shared_files, submission_id=submission_id,
                              contestant=contestant, workers=self.case_workers)

    @property
    def info(self) -> ContestInfo:
        return self.state.info

    def close(self):
        self.log.close()

    def snapshot(self) -> ContestState:
        with self._lock:
            return copy.deepcopy(self.state)

    def _ensure_running(self):
        if self.state.ended:
            raise ContestEnded("the contest has ended")
        if self.clock.now() >= self.info.duration * 60:
            self._emit("ContestEnded")
            raise ContestEnded("the contest has ended")

    def end_if_expired(self) -> bool:
        with self._lock:
            if not self.state.ended and self.clock.now() >= self.info.duration * 60:
                self._emit("ContestEnded")
            return self.state.ended

    def end(self):
        with self._lock:
            if not self.state.ended:
                self._emit("ContestEnded")

    def _get(self, contestant: str) -> ContestantState:
        try:
            return self.state.contestants[contestant]
        except KeyError:
            raise NotRegistered(f"{contestant!r} is not registered") from None

    def _active(self, contestant: str) -> tuple[ContestantState, str]:
        cs = self._get(contestant)
        self._ensure_running()
        if cs.finished:
            raise AlreadyFinished(f"{contestant} has solved every problem")
        return cs, cs.active_problem(self.info.problem_order)

    def authenticate(self, contestant: str, token: str) -> bool:
        cs = self.state.contestants.get(contestant)
        return cs is not None and hmac.compare_digest(cs.token_hash, hash_token(token or ""))

    # operations

    def register(self, contestant: str, token: str) -> ContestantState:
        if not _CONTESTANT_ID.match(contestant or ""):
            raise InvalidContestant(f"invalid contestant id {contestant!r}")
        with self._lock:
            self._ensure_running()
            if contestant in self.state.contestants:
                raise DuplicateContestant(f"{contestant!r} is already registered")
            self._emit("ContestantRegistered", contestant=contestant,
                       token_hash=hash_token(token))
            self._emit("ProblemUnlocked", contestant=contestant,
                       problem=self.info.problem_order[0])
            self._sync_quietly(contestant)
            return copy.deepcopy(self.state.contestants[contestant])

    def _begin(self, contestant: str, check: bool) -> tuple[int, str]:
        with self._lock:
            cs, problem = self._active(contestant)
            if self.state.busy(contestant):
                raise ContestantBusy("an evaluation is already in progress")
            if check and not self.pack.problems[problem].public_cases:
                raise NoPublicCases(problem)
            ev = self._emit("SubmissionReceived", contestant=contestant, problem=problem,
                            check=check)
            return ev.seq, problem

    def _judge(self, problem, script, case_set, submission_id, contestant) -> EvaluationResult:
        try:
            return self._evaluator(problem, script, case_set, submission_id=submission_id,
                                   contestant=contestant)
        except Exception:
            log.exception("evaluation of submission %d failed", submission_id)
            return EvaluationResult(submission_id, problem, CaseSet(case_set), (),
                                    Verdict.JUDGE_ERROR, contestant=contestant, script=script)

    def _commit(self, result: EvaluationResult, contestant: str, problem: str,
                submission_id: int, check: bool) -> EvaluationResult:
        result = replace(result, submission_id=submission_id, judged_at=self.clock.now(),
                         contestant=contestant, script=result.script)
        self._emit("EvaluationCompleted", contestant=contestant, problem=problem,
                   submission=submission_id, check=check, aggregate=result.aggregate.value,
                   per_test=[{"case": t.case_id, "verdict": t.verdict.value,
                              "wall_ms": t.wall_time} for t in result.per_test])
        return result

    def _write_log(self, result: EvaluationResult):
        if self.log_root is None:
            return
        try:
            judge.write_instructor_log(result, self.log_root)
        except judge.LogWriteFailure as exc:
            log.error("instructor log not written: %s", exc)

    def submit(self, contestant: str, script: bytes) -> SubmissionOutcome:
        submission_id, problem = self._begin(contestant, check=False)
        result = self._judge(problem, script, CaseSet.HIDDEN, submission_id, contestant)
        with self._lock:
            result = self._commit(result, contestant, problem, submission_id, check=False)
            cs = self.state.contestants[contestant]
            unlocked = position = None
            if result.accepted and not cs.finished:
                unlocked = self.info.problem_order[cs.active_problem_index]
                position = cs.active_problem_index + 1
                self._emit("ProblemUnlocked", contestant=contestant, problem=unlocked)
            if result.accepted:
                self._sync_quietly(contestant)
            progress = cs.problems[problem]
            outcome = SubmissionOutcome(
                verdict=result.aggregate, problem=problem, attempt=progress.submissions,
                unlocked=unlocked, unlocked_position=position, finished=cs.finished,
                penalty_minutes=self.penalty(contestant), result=result)
        self._write_log(result)
        return outcome

    def check(self, contestant: str, script: bytes) -> EvaluationResult:
        submission_id, problem = self._begin(contestant, check=True)
        result = self._judge(problem, script, CaseSet.PUBLIC, submission_id, contestant)
        with self._lock:
            result = self._commit(result, contestant, problem, submission_id, check=True)
        self._write_log(result)
        return result

    def request_hint(self, contestant: str) -> Hint:
        with self._lock:
            cs, problem = self._active(contestant)
            taken = cs.problems[problem].hints_taken
            if taken >= self.info.hints_available[problem]:
                raise NoMoreHints(f"no hints remain for {problem}")
            self._emit("HintRequested", contestant=contestant, problem=problem,
                       index=taken + 1)
            return self.pack.problems[problem].hints[taken]

    def penalty(self, contestant: str):
        from .scoring import contestant_penalty
        with self._lock:
            return contestant_penalty(self.state.contestants[contestant], self.info)

    def status(self, contestant: str) -> dict:
        from .scoring import score
        with self._lock:
            cs = self._get(contestant)
            order = self.info.problem_order
            active = cs.active_problem(order)
            rows = score(self.state)
            rank = next(i for i, r in enumerate(rows, 1) if r.contestant == contestant)
            now = self.clock.now()
            data = {
                "contestant": contestant,
                "active_problem": active,
                "active_position": None if active is None else cs.active_problem_index + 1,
                "problems_total": len(order),
                "solved": cs.solved,
                "finished": cs.finished,
                "unlocked": list(cs.unlocked),
                "failed_attempts": 0 if active is None else cs.problems[active].failed_attempts,
                "hints_taken": 0 if active is None else cs.problems[active].hints_taken,
                "hints_available": 0 if active is None else self.info.hints_available[active],
                "penalty_minutes": float(rows[rank - 1].penalty_minutes),
                "rank": rank,
                "elapsed": now,
                "remaining": max(0.0, self.info.duration * 60 - now),
                "ended": self.state.ended,
                "busy": self.state.busy(contestant),
            }
            if active is not None:
                data["title"] = self.pack.problems[active].title
                data["workspace"] = (str(self.workspace_root / contestant)
                                     if self.workspace_root else None)
            return data

    # workspaces

    def _sync_quietly(self, contestant: str):
        if self.workspace_root is None:
            return
        try:
            self.sync_workspace(contestant)
        except WorkspaceWriteFailure as exc:
            log.error("workspace sync for %s failed: %s", contestant, exc)

    def sync_workspace(self, contestant: str, workspace_root=None) -> list[Path]:
        """Materialize statement + public cases of every unlocked problem.

        Hidden cases and hints are never written.  Unchanged files are left
        untouched, so repeated calls are no-ops.
        """
        with self._lock:
            cs = self._get(contestant)
            unlocked = list(cs.unlocked)
        if workspace_root is None:
            if self.workspace_root is None:
                raise WorkspaceWriteFailure("no workspace root configured")
            workspace_root = self.workspace_root / contestant
        root = Path(workspace_root)
        files_path = str(self.shared_files) if self.shared_files else FILES_PLACEHOLDER
        written = []
        try:
            for pos, pid in enumerate(unlocked, 1):
                problem = self.pack.problems[pid]
                pdir = root / f"{pos:02d}-{pid}"
                entries = {"statement.txt": problem.statement.replace(
                    FILES_PLACEHOLDER, files_path).encode()}
                for case in problem.public_cases:
                    args = "".join(a.replace(FILES_PLACEHOLDER, files_path) + "\n"
                                   for a in case.argv)
                    entries[f"public/{case.id}.args"] = args.encode()
                    if case.stdin:
                        entries[f"public/{case.id}.stdin"] = case.stdin
                    entries[f"public/{case.id}.out"] = case.expected_stdout
                for rel, data in entries.items():
                    target = pdir / rel
                    if not (target.is_file() and target.read_bytes() == data):
                        target.parent.mkdir(parents=True, exist_ok=True)
                        target.write_bytes(data)
                    written.append(target)
        except OSError as exc:
            raise WorkspaceWriteFailure(str(exc)) from exc
        return written


def open_contest(pack: ContestPack, workdir, **kwargs) -> Contest:
    """Contest backed by ``<workdir>/events.jsonl``; resumes if the log exists."""
    from .events import read_events
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    log_path = workdir / "events.jsonl"
    events = read_events(log_path) if log_path.exists() else None
    kwargs.setdefault("workspace_root", workdir / "workspaces")
    kwargs.setdefault("log_root", workdir / "logs")
    return Contest(pack, log_sink=EventLog(log_path), events=events, **kwargs)
