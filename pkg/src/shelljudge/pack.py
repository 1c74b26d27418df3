"""On-disk contest packs.

Layout::

    contest.json
    problems/<id>/statement.txt
    problems/<id>/problem.json          (optional)
    problems/<id>/hints/<n>.txt
    problems/<id>/public/NN.{args,stdin,out}
    problems/<id>/hidden/NN.{args,stdin,out}
    files/                              (shared read-only data)

``NN.args`` holds one argument per line and is never shell-interpreted.
The placeholder ``{FILES}`` inside an argument is replaced at run time with
the path where the shared files are visible.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

MANIFEST = "contest.json"
FILES_PLACEHOLDER = "{FILES}"

DEFAULT_TIME_LIMIT_MS = 5000
DEFAULT_OUTPUT_LIMIT = 1 << 20
DEFAULT_WRONG_ATTEMPT_PENALTY = 10
DEFAULT_HINT_PENALTY = 15

_SLUG = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class PackError(Exception):
    """Base class for contest-pack loading errors."""


class MissingManifest(PackError):
    def __init__(self, path):
        super().__init__(f"no {MANIFEST} in {path}")
        self.path = path


class MalformedManifest(PackError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class MissingProblem(PackError):
    def __init__(self, problem_id):
        super().__init__(f"problem directory missing for {problem_id!r}")
        self.problem_id = problem_id


class MissingHiddenCases(PackError):
    def __init__(self, problem_id):
        super().__init__(f"problem {problem_id!r} has no hidden test cases")
        self.problem_id = problem_id


class HintGap(PackError):
    def __init__(self, problem_id, index):
        super().__init__(f"problem {problem_id!r}: hint {index} is missing")
        self.problem_id = problem_id
        self.index = index


class MalformedProblem(PackError):
    def __init__(self, problem_id, reason):
        super().__init__(f"problem {problem_id!r}: {reason}")
        self.problem_id = problem_id
        self.reason = reason


class ComparisonMode(str, enum.Enum):
    EXACT = "Exact"
    NEWLINE_TOLERANT = "NewlineTolerant"


class CaseSet(str, enum.Enum):
    HIDDEN = "hidden"
    PUBLIC = "public"


@dataclass(frozen=True)
class TestCase:
    id: str
    argv: tuple[str, ...]
    stdin: bytes
    expected_stdout: bytes

    __test__ = False  # not a pytest class

    def resolved_argv(self, files_path) -> list[str]:
        return [a.replace(FILES_PLACEHOLDER, str(files_path)) for a in self.argv]


@dataclass(frozen=True)
class Hint:
    index: int
    body: str


@dataclass(frozen=True)
class Problem:
    id: str
    title: str
    statement: str
    hints: tuple[Hint, ...]
    public_cases: tuple[TestCase, ...]
    hidden_cases: tuple[TestCase, ...]
    time_limit: int = DEFAULT_TIME_LIMIT_MS
    comparison_mode: ComparisonMode = ComparisonMode.NEWLINE_TOLERANT

    def cases(self, case_set: CaseSet) -> tuple[TestCase, ...]:
        if CaseSet(case_set) is CaseSet.PUBLIC:
            return self.public_cases
        return self.hidden_cases


@dataclass(frozen=True)
class ContestConfig:
    name: str
    duration: int
    problem_order: tuple[str, ...]
    wrong_attempt_penalty: int = DEFAULT_WRONG_ATTEMPT_PENALTY
    hint_penalty: int = DEFAULT_HINT_PENALTY
    output_limit: int = DEFAULT_OUTPUT_LIMIT
    max_hints: int | None = None
    count_unsolved_failures: bool = False


@dataclass(frozen=True)
class ContestPack:
    root: Path
    config: ContestConfig
    problems: Mapping[str, Problem]
    digest: str
    extra_problem_dirs: tuple[str, ...] = ()

    @property
    def files_dir(self) -> Path:
        return self.root / "files"

    @property
    def ordered_problems(self) -> list[Problem]:
        return [self.problems[pid] for pid in self.config.problem_order]

    def problem(self, problem_id: str) -> Problem:
        return self.problems[problem_id]

    def hints_available(self, problem_id: str) -> int:
        n = len(self.problems[problem_id].hints)
        if self.config.max_hints is not None:
            n = min(n, self.config.max_hints)
        return n


def _read_json(path: Path, what: str) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedManifest(what, f"invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise MalformedManifest(what, "top level must be an object")
    return data


def _int_field(data: dict, key: str, default=None, *, minimum=0, where=None):
    name = key if where is None else f"{where}:{key}"
    value = data.get(key, default)
    if value is None and default is None:
        raise MalformedManifest(name, "required field missing")
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedManifest(name, "must be an integer")
    if value < minimum:
        raise MalformedManifest(name, f"must be >= {minimum}")
    return value


def _parse_config(data: dict) -> ContestConfig:
    name = data.get("name")
    if not isinstance(name, str) or not name.strip():
        raise MalformedManifest("name", "must be a non-empty string")
    duration = _int_field(data, "duration", minimum=1)
    order = data.get("problem_order")
    if not isinstance(order, list) or not order:
        raise MalformedManifest("problem_order", "must be a non-empty list")
    for pid in order:
        if not isinstance(pid, str) or not _SLUG.match(pid):
            raise MalformedManifest("problem_order", f"invalid problem id {pid!r}")
    if len(set(order)) != len(order):
        raise MalformedManifest("problem_order", "duplicate problem ids")
    max_hints = data.get("max_hints")
    if max_hints is not None:
        max_hints = _int_field(data, "max_hints", minimum=0)
    flag = data.get("count_unsolved_failures", False)
    if not isinstance(flag, bool):
        raise MalformedManifest("count_unsolved_failures", "must be a boolean")
    return ContestConfig(
        name=name,
        duration=duration,
        problem_order=tuple(order),
        wrong_attempt_penalty=_int_field(
            data, "wrong_attempt_penalty", DEFAULT_WRONG_ATTEMPT_PENALTY),
        hint_penalty=_int_field(data, "hint_penalty", DEFAULT_HINT_PENALTY),
        output_limit=_int_field(data, "output_limit", DEFAULT_OUTPUT_LIMIT, minimum=1),
        max_hints=max_hints,
        count_unsolved_failures=flag,
    )


def parse_args_file(raw: bytes) -> tuple[str, ...]:
    """One argument per line; a single trailing newline is not an argument."""
    text = raw.decode("utf-8")
    if not text:
        return ()
    if text.endswith("\n"):
        text = text[:-1]
    return tuple(text.split("\n"))


def _load_cases(problem_id: str, case_dir: Path) -> tuple[TestCase, ...]:
    if not case_dir.is_dir():
        return ()
    stems: dict[str, set[str]] = {}
    for entry in case_dir.iterdir():
        if entry.suffix not in (".args", ".stdin", ".out") or not entry.is_file():
            continue
        stems.setdefault(entry.stem, set()).add(entry.suffix)
    cases = []
    for stem in sorted(stems):
        if ".out" not in stems[stem]:
            raise MalformedProblem(problem_id, f"{case_dir.name}/{stem} has no .out file")
        base = case_dir / stem
        argv = parse_args_file(base.with_suffix(".args").read_bytes()) \
            if ".args" in stems[stem] else ()
        stdin = base.with_suffix(".stdin").read_bytes() if ".stdin" in stems[stem] else b""
        cases.append(TestCase(stem, argv, stdin, base.with_suffix(".out").read_bytes()))
    return tuple(cases)


def _load_hints(problem_id: str, hint_dir: Path) -> tuple[Hint, ...]:
    if not hint_dir.is_dir():
        return ()
    found = {}
    for entry in hint_dir.iterdir():
        if entry.suffix != ".txt" or not entry.stem.isdigit():
            continue
        found[int(entry.stem)] = entry.read_text(encoding="utf-8").rstrip("\n")
    for index in range(1, len(found) + 1):
        if index not in found:
            raise HintGap(problem_id, index)
    return tuple(Hint(i, found[i]) for i in range(1, len(found) + 1))


def _load_problem(problem_id: str, pdir: Path) -> Problem:
    if not pdir.is_dir():
        raise MissingProblem(problem_id)
    statement_path = pdir / "statement.txt"
    if not statement_path.is_file():
        raise MalformedProblem(problem_id, "statement.txt missing")
    statement = statement_path.read_text(encoding="utf-8")
    if not statement.strip():
        raise MalformedProblem(problem_id, "statement.txt is empty")

    meta = {}
    if (pdir / "problem.json").is_file():
        meta = _read_json(pdir / "problem.json", f"{problem_id}/problem.json")
    where = f"{problem_id}/problem.json"
    time_limit = _int_field(meta, "time_limit", DEFAULT_TIME_LIMIT_MS, minimum=1, where=where)
    try:
        mode = ComparisonMode(meta.get("comparison_mode", ComparisonMode.NEWLINE_TOLERANT.value))
    except ValueError:
        raise MalformedManifest(f"{where}:comparison_mode",
                                "must be Exact or NewlineTolerant") from None
    title = meta.get("title", problem_id)
    if not isinstance(title, str):
        raise MalformedManifest(f"{where}:title", "must be a string")

    hidden = _load_cases(problem_id, pdir / "hidden")
    if not hidden:
        raise MissingHiddenCases(problem_id)
    return Problem(
        id=problem_id,
        title=title,
        statement=statement,
        hints=_load_hints(problem_id, pdir / "hints"),
        public_cases=_load_cases(problem_id, pdir / "public"),
        hidden_cases=hidden,
        time_limit=time_limit,
        comparison_mode=mode,
    )


def pack_digest(root: Path) -> str:
    """sha256 over every regular file in the pack (relative path + content)."""
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix().encode()
        data = path.read_bytes()
        h.update(len(rel).to_bytes(4, "big") + rel)
        h.update(len(data).to_bytes(8, "big") + data)
    return h.hexdigest()


def load_pack(path) -> ContestPack:
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise MissingManifest(root)
    config = _parse_config(_read_json(manifest, MANIFEST))
    problems = {pid: _load_problem(pid, root / "problems" / pid)
                for pid in config.problem_order}
    extra = ()
    if (root / "problems").is_dir():
        extra = tuple(sorted(d.name for d in (root / "problems").iterdir()
                             if d.is_dir() and d.name not in problems))
    return ContestPack(root=root.resolve(), config=config, problems=problems,
                       digest=pack_digest(root), extra_problem_dirs=extra)


# -- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    kind: str
    message: str
    problem: str | None = None
    case: str | None = None

    def __str__(self):
        where = "/".join(x for x in (self.problem, self.case) if x)
        return f"[{self.kind}] {where + ': ' if where else ''}{self.message}"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)
    # problem id -> {case id -> produced stdout} for reference runs
    reference_outputs: dict[str, dict[str, bytes]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, kind, message, problem=None, case=None):
        self.findings.append(Finding(kind, message, problem, case))


def validate_pack(pack: ContestPack, reference_solutions: Mapping[str, bytes] | None = None,
                  *, backend=None, shared_files=None) -> ValidationReport:
    """Structural pre-flight checks plus optional reference-solution runs.

    Reference scripts are judged over the hidden cases; every case whose
    produced output differs from the stored ``.out`` becomes a finding.
    """
    from .judge import Verdict, evaluate

    report = ValidationReport()
    for extra in pack.extra_problem_dirs:
        report.add("unlisted-problem", "directory not referenced by problem_order", extra)
    for problem in pack.ordered_problems:
        if not problem.public_cases:
            report.add("no-public-cases", "contestants cannot check against examples",
                       problem.id)
        public_inputs = {(c.argv, c.stdin) for c in problem.public_cases}
        for case in problem.hidden_cases:
            if (case.argv, case.stdin) in public_inputs:
                report.add("hidden-equals-public",
                           "hidden case repeats a public input", problem.id, case.id)
            if FILES_PLACEHOLDER not in "".join(case.argv) and any(
                    a.startswith("/") and not a.startswith("/dev/") for a in case.argv):
                report.add("absolute-path", "argument uses an absolute host path",
                           problem.id, case.id)

    for problem_id, script in (reference_solutions or {}).items():
        if problem_id not in pack.problems:
            report.add("unknown-problem", "reference solution for unknown problem", problem_id)
            continue
        if isinstance(script, str):
            script = script.encode()
        result = evaluate(pack, problem_id, script, CaseSet.HIDDEN,
                          backend=backend, shared_files=shared_files)
        report.reference_outputs[problem_id] = {
            t.case_id: t.produced_stdout for t in result.per_test}
        for t in result.per_test:
            if t.verdict is not Verdict.ACCEPTED:
                report.add("reference-mismatch", f"reference solution got {t.verdict.value}",
                           problem_id, t.case_id)
    return report
