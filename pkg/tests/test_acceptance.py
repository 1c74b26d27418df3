"""Acceptance suite: one test per criterion, summarized at the end of the run.

Run alone with ``pytest tests/test_acceptance.py`` (or execute this file).
"""

import contextlib
import io
import os
import shutil
import tempfile
import threading
import time
import uuid
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import DEMO_PACK, SOLUTIONS, FakeEvaluator, write_pack
from oracles import brute_force_order, failed_login_report, penalty_from_events
from shelljudge import cli, sandbox
from shelljudge.client import Client
from shelljudge.events import EventLog, check_dense, read_events
from shelljudge.judge import Verdict, compare_output, evaluate
from shelljudge.pack import CaseSet, load_pack, validate_pack
from shelljudge.scoring import render_ranking, score
from shelljudge.service import build_service
from shelljudge.state import (Contest, ContestError, ManualClock, replay,
                              unlock_invariant_holds)
from strategies import ORDER, states

REPORT_OUTPUT = b"41 root\n18 pi\n9 admin\n8 NL5xUDpV2xRa\n7 craft\n"
GRACE_S = sandbox.GRACE_MS / 1000


def script(name):
    return (SOLUTIONS / f"{name}.sh").read_bytes()


@contextlib.contextmanager
def daemon(workdir, **kw):
    sock_dir = tempfile.mkdtemp(prefix="sj-")
    svc = build_service(DEMO_PACK if "pack" not in kw else kw.pop("pack"), workdir=workdir,
                        listen=f"{sock_dir}/j.sock", http="127.0.0.1:0", **kw)
    try:
        with svc:
            yield svc
    finally:
        shutil.rmtree(sock_dir, ignore_errors=True)


# 1 -------------------------------------------------------------------------------

@pytest.mark.criterion(1, "failed-login report fidelity")
def test_lastb_fidelity():
    t0 = time.monotonic()
    pack = load_pack(DEMO_PACK)
    reference = script("lastb")
    data = (DEMO_PACK / "files/lastb/intentos_acceso.txt").read_text()
    assert failed_login_report(data, 7) == REPORT_OUTPUT

    hidden = evaluate(pack, "lastb", reference, CaseSet.HIDDEN)
    assert hidden.aggregate is Verdict.ACCEPTED
    assert all(t.verdict is Verdict.ACCEPTED for t in hidden.per_test)

    public = evaluate(pack, "lastb", reference, CaseSet.PUBLIC)
    assert public.aggregate is Verdict.ACCEPTED
    produced = public.per_test[0].produced_stdout
    assert compare_output(produced, REPORT_OUTPUT, pack.problems["lastb"].comparison_mode)
    assert produced == REPORT_OUTPUT

    assert validate_pack(pack, {"lastb": reference}).ok
    assert time.monotonic() - t0 < 5.0


# 2 -------------------------------------------------------------------------------

@pytest.mark.criterion(2, "infinite loop on hidden case only")
def test_loop_failure_mode(tmp_path):
    pack = load_pack(DEMO_PACK)
    limit_s = pack.problems["pares"].time_limit / 1000
    n_hidden = len(pack.problems["pares"].hidden_cases)
    with daemon(tmp_path / "run") as svc, Client(svc.socket_address) as c:
        token = c.request("register", "eva")["data"]["token"]
        assert c.call_with_script("submit", "eva", token, script("saludo"))["data"][
            "verdict"] == "Accepted"

        t0 = time.monotonic()
        checked = c.call_with_script("check", "eva", token, script("pares_loop"))["data"]
        check_s = time.monotonic() - t0
        assert checked["verdict"] == "Accepted"
        assert check_s <= len(checked["cases"]) * (limit_s + GRACE_S)

        t0 = time.monotonic()
        submitted = c.call_with_script("submit", "eva", token, script("pares_loop"))["data"]
        submit_s = time.monotonic() - t0
        assert submitted["verdict"] == "TimeLimitExceeded"
        assert submit_s <= n_hidden * (limit_s + GRACE_S)

    done = [e for e in read_events(tmp_path / "run/events.jsonl")
            if e.kind == "EvaluationCompleted" and not e.data["check"]][-1]
    for case in done.data["per_test"]:
        assert case["wall_ms"] <= limit_s * 1000 + sandbox.GRACE_MS
        if case["verdict"] == "TimeLimitExceeded":
            assert case["wall_ms"] >= limit_s * 1000


# 3 -------------------------------------------------------------------------------

# (time in seconds, contestant, op, script); "wrong_hello" says hello in English
FIXTURE_SCRIPT = [
    (300, "bob", "submit", "wrong_hello"),     # WA on saludo
    (360, "carol", "submit", "saludo"),        # carol solves saludo @ 6 min
    (420, "bob", "submit", "saludo"),          # bob solves saludo @ 7 min
    (600, "alice", "check", "saludo"),         # free
    (720, "alice", "submit", "saludo"),        # alice solves saludo @ 12 min
    (900, "alice", "hint", None),              # alice: pares hint 1
    (900, "carol", "check", "pares_loop"),     # free, passes the public case
    (960, "carol", "submit", "pares"),         # carol solves pares @ 16 min
    (1000, "carol", "submit", "lastb_ascending"),  # WA, lastb never solved
    (1200, "bob", "submit", "pares"),          # bob solves pares @ 20 min
    (1500, "alice", "submit", "pares_loop"),   # TLE on pares
    (1800, "alice", "submit", "pares"),        # alice solves pares @ 30 min
    (2400, "bob", "hint", None),               # bob: lastb hint 1
    (2460, "bob", "hint", None),               # bob: lastb hint 2
    (2700, "bob", "submit", "lastb"),          # bob solves lastb @ 45 min
    (3000, "alice", "submit", "lastb_ascending"),  # WA, lastb never solved
]

# Hand-computed with W=10, H=15:
#   bob   3 solved: 45 + 10*1 (saludo) + 15*2          = 85
#   carol 2 solved: 16 + 0 (lastb failure not counted)  = 16
#   alice 2 solved: 30 + 10*1 (pares) + 15*1           = 55
EXPECTED_RANKING = [("bob", 3, Fraction(85)), ("carol", 2, Fraction(16)),
                    ("alice", 2, Fraction(55))]


@pytest.mark.criterion(3, "end-to-end fixture contest over the wire")
def test_end_to_end_fixture_contest(tmp_path):
    import json
    import urllib.request
    t0 = time.monotonic()
    clock = ManualClock()
    scripts = {name: script(name) for name in
               ("saludo", "pares", "pares_loop", "lastb", "lastb_ascending")}
    scripts["wrong_hello"] = b'echo "Hello, $1!"\n'
    with daemon(tmp_path / "run", clock=clock) as svc:
        tokens = {}
        with Client(svc.socket_address) as c:
            for cid in ("alice", "bob", "carol"):
                tokens[cid] = c.request("register", cid)["data"]["token"]
            for at, cid, op, name in FIXTURE_SCRIPT:
                clock.set(at)
                if op == "hint":
                    resp = c.request("hint", cid, tokens[cid])
                else:
                    resp = c.call_with_script(op, cid, tokens[cid], scripts[name])
                assert resp["ok"], resp
        host, port = svc.http_address
        with urllib.request.urlopen(f"http://{host}:{port}/api/ranking", timeout=10) as r:
            doc = json.loads(r.read())
        live = score(svc.contest.snapshot())
        events = list(svc.contest.log.path.read_text().splitlines())

    got = [(r.contestant, r.solved, r.penalty_minutes) for r in live]
    assert got == EXPECTED_RANKING
    assert brute_force_order(EXPECTED_RANKING) == [cid for cid, _, _ in EXPECTED_RANKING]
    assert [(r["contestant"], r["solved"], r["penalty"]) for r in doc["rows"]] == [
        ("bob", 3, "85.0"), ("carol", 2, "16.0"), ("alice", 2, "55.0")]
    # independent recomputation from the raw event list
    evs = read_events(tmp_path / "run/events.jsonl")
    for cid, solved, penalty in EXPECTED_RANKING:
        assert penalty_from_events(evs, cid) == (penalty, solved)
    assert len(events) == len(evs)
    assert time.monotonic() - t0 < 60


# 4 -------------------------------------------------------------------------------

CONTESTANTS = ("ana", "ben", "cai", "dee")
OPS = st.tuples(
    st.sampled_from(CONTESTANTS),
    st.sampled_from(["submit:ok", "submit:wa", "submit:tle", "submit:err",
                     "check:ok", "check:wa", "hint", "register"]),
    st.integers(0, 900),  # seconds to advance before the op
)


def drive(contest, clock, ops, after_step=None):
    for cid, op, dt in ops:
        clock.advance(dt)
        try:
            if op == "register":
                contest.register(cid, "t")
            elif op == "hint":
                contest.request_hint(cid)
            else:
                kind, verdict = op.split(":")
                getattr(contest, kind)(cid, verdict.encode())
        except ContestError:
            pass  # not registered, finished, no hints left, contest over
        if after_step:
            after_step()


@pytest.mark.criterion(4, "replay determinism over 100 random contests")
@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(OPS, min_size=1, max_size=40))
def test_replay_determinism(ops):
    pack = load_pack(DEMO_PACK)
    with tempfile.TemporaryDirectory() as d:
        log_path = Path(d) / "events.jsonl"
        clock = ManualClock()
        contest = Contest(pack, clock=clock, evaluator=FakeEvaluator(pack),
                          log_sink=EventLog(log_path, fsync=False))
        drive(contest, clock, ops)
        contest.close()
        live = score(contest.state)
        rebuilt = replay(read_events(log_path), pack)
        assert rebuilt == contest.state
        assert score(rebuilt) == live
        out = io.StringIO()
        with contextlib.redirect_stdout(out):
            assert cli.main(["admin", "replay", str(log_path), "--pack", str(DEMO_PACK)]) == 0
        assert out.getvalue() == render_ranking(live, contest.info)


# 5 -------------------------------------------------------------------------------

def marker_pack(root: Path):
    """Three problems whose hidden material and hints carry unique markers."""
    problems, secrets, hints = {}, [], []
    for pid in ("m1", "m2", "m3"):
        hidden = []
        for i in range(3):
            tag = f"HIDDEN-{pid}-{i}-{uuid.uuid4().hex}"
            secrets += [f"{tag}-arg".encode(), f"{tag}-in".encode(), f"{tag}-out".encode()]
            hidden.append(([f"{tag}-arg"], f"{tag}-in\n".encode(), f"{tag}-out\n".encode()))
        bodies = [f"HINT-{pid}-{i}-{uuid.uuid4().hex}" for i in range(2)]
        hints += [b.encode() for b in bodies]
        problems[pid] = {"statement": f"Problem {pid}: print the secret.\n",
                         "public": [([f"public-{pid}"], b"visible\n", b"visible\n")],
                         "hidden": hidden, "hints": bodies}
    return load_pack(write_pack(root, problems)), secrets, hints


def scan(root: Path) -> bytes:
    return b"".join(p.read_bytes() for p in root.rglob("*") if p.is_file())


@pytest.mark.criterion(5, "unlock and confinement invariants")
@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(OPS, min_size=1, max_size=40))
def test_unlock_and_confinement(ops):
    with tempfile.TemporaryDirectory() as d:
        pack, secrets, hints = marker_pack(Path(d) / "pack")
        ws = Path(d) / "ws"
        clock = ManualClock()
        contest = Contest(pack, clock=clock, evaluator=FakeEvaluator(pack), workspace_root=ws)

        def invariants():
            state = contest.state
            assert unlock_invariant_holds(state)
            for cs in state.contestants.values():
                total = len(state.info.problem_order)
                assert len(cs.unlocked) == (total if cs.finished else cs.solved + 1)
                dirs = sorted(p.name for p in (ws / cs.id).iterdir())
                assert dirs == [f"{i:02d}-{pid}" for i, pid in enumerate(cs.unlocked, 1)]
            blob = scan(ws) if ws.exists() else b""
            for secret in secrets + hints:
                assert secret not in blob

        drive(contest, clock, ops, invariants)


# 6 -------------------------------------------------------------------------------

def ranks(state):
    return {r.contestant: i for i, r in enumerate(score(state))}


@pytest.mark.criterion(6, "scoring properties over 1000 random states each")
def test_scoring_properties():
    @settings(max_examples=1000, deadline=None)
    @given(states(min_size=2), st.data())
    def monotonicity(state, data):
        cid = data.draw(st.sampled_from(sorted(state.contestants)))
        cs = state.contestants[cid]
        reachable = state.info.problem_order[:min(cs.solved + 1, len(ORDER))]
        pid = data.draw(st.sampled_from(reachable))
        before = ranks(state)[cid]
        if data.draw(st.booleans()):
            cs.problems[pid].hints_taken += 1
        else:
            cs.problems[pid].failed_attempts += 1
        assert ranks(state)[cid] >= before

    @settings(max_examples=1000, deadline=None)
    @given(states())
    def total_order(state):
        rows = score(state)
        keys = [r.sort_key for r in rows]
        assert len(set(keys)) == len(keys) == len(state.contestants)
        assert all(a < b for a, b in zip(keys, keys[1:]))

    @settings(max_examples=1000, deadline=None)
    @given(states(min_size=2))
    def dominance(state):
        pos = ranks(state)
        for a in state.contestants.values():
            for b in state.contestants.values():
                if a.solved > b.solved:
                    assert pos[a.id] < pos[b.id]

    monotonicity()
    total_order()
    dominance()


# 7 -------------------------------------------------------------------------------

FORK_BOMB = "b() {{ b | b & }}; b; sleep 60 # {marker}"
YES = "yes {marker}"


def live_with(marker: str) -> list[int]:
    found = []
    for name in os.listdir("/proc"):
        if name.isdigit():
            try:
                cmd = Path(f"/proc/{name}/cmdline").read_bytes()
                state = Path(f"/proc/{name}/stat").read_text().rsplit(")", 1)[1].split()[0]
            except OSError:
                continue
            if marker.encode() in cmd and state != "Z":
                found.append(int(name))
    return found


@pytest.mark.criterion(7, "sandbox termination under 50 hostile executions")
def test_sandbox_termination():
    backend = sandbox.PortableBackend() if os.environ.get(sandbox.BACKEND_ENV) != "strict" \
        else sandbox.StrictBackend()
    marker = "hostile" + uuid.uuid4().hex[:10]
    limit_ms, out_limit = 500, 4096
    for i in range(50):
        body = (FORK_BOMB if i % 2 == 0 else YES).format(marker=marker)
        t0 = time.monotonic()
        out = backend.execute(sandbox.ExecutionSpec(
            script=body.encode(), time_limit=limit_ms, output_limit=out_limit))
        elapsed_ms = (time.monotonic() - t0) * 1000
        assert elapsed_ms <= limit_ms + sandbox.GRACE_MS, (i, elapsed_ms)
        assert out.wall_time <= limit_ms + sandbox.GRACE_MS
        assert len(out.stdout) <= out_limit
        if i % 2:
            assert out.killed is sandbox.KillReason.OUTPUT_LIMIT
            assert len(out.stdout) == out_limit
        else:
            assert out.killed is sandbox.KillReason.TIMEOUT or out.exit_code is not None
    assert live_with(marker) == []
    assert sandbox.stray_processes(uids=backend.slot_uids()) == []
    leftovers = [p.name for p in backend.scratch_root.iterdir()
                 if p.name.endswith((".work", ".in", ".root"))]
    assert leftovers == []


# 8 -------------------------------------------------------------------------------

@pytest.mark.criterion(8, "throughput: 100 submissions x 5 hidden cases")
def test_throughput(tmp_path):
    hidden = [([str(i)], b"", f"{i * 2}\n".encode()) for i in range(1, 6)]
    root = write_pack(tmp_path / "pack", {
        "double": {"public": [(["1"], b"", b"2\n")], "hidden": hidden},
        "next": {"public": [(["1"], b"", b"1\n")], "hidden": hidden}})
    good = b'echo $(( $1 * 2 ))\n'
    bad = b'echo $(( $1 + 2 ))\n'
    contestants = [f"c{i:02d}" for i in range(50)]
    verdicts = []
    lock = threading.Lock()
    with daemon(tmp_path / "run", pack=root) as svc:
        tokens = {}
        with Client(svc.socket_address) as c:
            for cid in contestants:
                tokens[cid] = c.request("register", cid)["data"]["token"]

        def contestant(cid):
            with Client(svc.socket_address) as c:
                for body in (bad, good):  # 2 submissions each
                    resp = c.call_with_script("submit", cid, tokens[cid], body)
                    with lock:
                        verdicts.append(resp["data"]["verdict"])

        t0 = time.monotonic()
        threads = [threading.Thread(target=contestant, args=(cid,)) for cid in contestants]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        elapsed = time.monotonic() - t0
        events = read_events(svc.contest.log.path)
    assert len(verdicts) == 100
    assert verdicts.count("Accepted") == 50 and verdicts.count("WrongAnswer") == 50
    check_dense(events)
    judged = [e for e in events if e.kind == "EvaluationCompleted"]
    assert len(judged) == 100 and all(len(e.data["per_test"]) == 5 for e in judged)
    print(f"throughput: 100 submissions x 5 cases in {elapsed:.1f} s")
    assert elapsed < 120


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
