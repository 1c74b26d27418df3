import json
from pathlib import Path

import pytest

from shelljudge import sandbox
from shelljudge.judge import EvaluationResult, TestResult, Verdict, aggregate_verdict
from shelljudge.pack import CaseSet, load_pack

ROOT = Path(__file__).resolve().parent.parent
DEMO_PACK = ROOT / "packs" / "bash-intro"
SOLUTIONS = ROOT / "packs" / "solutions" / "bash-intro"


@pytest.fixture(scope="session")
def demo_pack():
    return load_pack(DEMO_PACK)


@pytest.fixture(scope="session")
def solutions():
    return {p.stem: p.read_bytes() for p in SOLUTIONS.glob("*.sh")}


@pytest.fixture(scope="session")
def backend():
    return sandbox.get_backend("portable")


def write_pack(root: Path, problems: dict, *, name="test contest", duration=60, **config):
    """Build a pack on disk.

    ``problems`` maps id -> dict(statement, hints=[...], public=[(args, stdin, out)],
    hidden=[...], meta={...}).
    """
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"name": name, "duration": duration, "problem_order": list(problems), **config}
    (root / "contest.json").write_text(json.dumps(manifest))
    for pid, spec in problems.items():
        pdir = root / "problems" / pid
        pdir.mkdir(parents=True)
        (pdir / "statement.txt").write_text(spec.get("statement", f"Solve {pid}.\n"))
        if spec.get("meta"):
            (pdir / "problem.json").write_text(json.dumps(spec["meta"]))
        for i, body in enumerate(spec.get("hints", []), 1):
            (pdir / "hints").mkdir(exist_ok=True)
            (pdir / "hints" / f"{i}.txt").write_text(body)
        for kind in ("public", "hidden"):
            cdir = pdir / kind
            cdir.mkdir()
            for i, (args, stdin, out) in enumerate(spec.get(kind, []), 1):
                (cdir / f"{i:02d}.args").write_text("".join(a + "\n" for a in args))
                if stdin:
                    (cdir / f"{i:02d}.stdin").write_bytes(stdin)
                (cdir / f"{i:02d}.out").write_bytes(out)
    return root


class FakeEvaluator:
    """Deterministic stand-in for the judge: the script names its verdict.

    ``b"ok"`` is accepted, ``b"wa"`` wrong, ``b"tle"`` time limit, ``b"err"``
    judge error.  Used where sandbox runs would only slow property tests down.
    """

    VERDICTS = {b"ok": Verdict.ACCEPTED, b"wa": Verdict.WRONG_ANSWER,
                b"tle": Verdict.TIME_LIMIT_EXCEEDED, b"err": Verdict.JUDGE_ERROR}

    def __init__(self, pack):
        self.pack = pack
        self.calls = 0

    def __call__(self, problem_id, script, case_set, *, submission_id, contestant):
        self.calls += 1
        verdict = self.VERDICTS[script]
        cases = self.pack.problems[problem_id].cases(case_set)
        per_test = tuple(TestResult(c.id, verdict, 1, b"") for c in cases)
        return EvaluationResult(submission_id, problem_id, CaseSet(case_set), per_test,
                                aggregate_verdict(per_test), contestant=contestant,
                                script=script)


# -- acceptance summary -------------------------------------------------------

_criteria: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _criteria[n] = (title, status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status, secs = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title} ({secs:.1f} s)")
