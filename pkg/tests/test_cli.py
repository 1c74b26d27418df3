import csv
import json
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import pytest

from conftest import DEMO_PACK, SOLUTIONS, FakeEvaluator, write_pack
from shelljudge import cli
from shelljudge.pack import load_pack
from shelljudge.scoring import render_ranking, score
from shelljudge.service import build_service


@pytest.fixture
def home(tmp_path, monkeypatch):
    h = tmp_path / "home"
    h.mkdir()
    monkeypatch.setenv("HOME", str(h))
    for var in ("SHELLJUDGE_SOCKET", "SHELLJUDGE_ID", "SHELLJUDGE_TOKEN"):
        monkeypatch.delenv(var, raising=False)
    return h


@pytest.fixture
def daemon(tmp_path, backend):
    d = tempfile.mkdtemp(prefix="sj-")
    svc = build_service(DEMO_PACK, workdir=tmp_path / "run", listen=f"{d}/j.sock",
                        backend=backend)
    with svc:
        yield svc
    shutil.rmtree(d, ignore_errors=True)


def sj(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def enrol(capsys, daemon, cid="alice"):
    code, out, _ = sj(capsys, "--socket", daemon.socket_address, "register", cid)
    assert code == 0 and "saludo" in out


def test_register_saves_private_config(home, daemon, capsys):
    enrol(capsys, daemon)
    cfg_file = home / ".shelljudge"
    cfg = json.loads(cfg_file.read_text())
    assert cfg["contestant"] == "alice" and cfg["token"] and cfg["socket"]
    assert cfg_file.stat().st_mode & 0o777 == 0o600


def test_submit_messages_and_exit_codes(home, daemon, capsys):
    enrol(capsys, daemon)
    code, out, _ = sj(capsys, "submit", SOLUTIONS / "saludo.sh")
    assert code == 0 and "Accepted — problem 2 unlocked" in out and "Penalty: " in out
    code, out, _ = sj(capsys, "submit", SOLUTIONS / "pares_loop.sh")
    assert code == 1 and "Time limit exceeded (attempt 1)" in out
    code, out, _ = sj(capsys, "submit", SOLUTIONS / "saludo.sh")
    assert code == 1 and "Wrong answer (attempt 2)" in out
    code, out, _ = sj(capsys, "submit", SOLUTIONS / "pares.sh")
    assert code == 0 and "Accepted — problem 3 unlocked" in out
    assert "Penalty: 20.0 min" in out
    code, out, _ = sj(capsys, "submit", SOLUTIONS / "lastb.sh")
    assert code == 0 and "Accepted — all problems solved" in out


def test_submit_daemon_down(home, capsys, tmp_path):
    code, _, err = sj(capsys, "--socket", tmp_path / "nobody.sock", "--id", "a", "--token",
                      "t", "submit", SOLUTIONS / "saludo.sh")
    assert code == 2 and "connection error" in err


def test_check_pass_and_fail(home, daemon, capsys):
    enrol(capsys, daemon)
    code, out, _ = sj(capsys, "check", SOLUTIONS / "saludo.sh")
    assert code == 0 and "✓" in out and "1/1 public cases passed" in out
    bad = home / "bad.sh"
    bad.write_text('echo "Hello, $1!"\n')
    code, out, _ = sj(capsys, "check", bad)
    assert code == 1 and "✗" in out
    assert "-Hola, mundo!" in out and "+Hello, mundo!" in out
    code, out, _ = sj(capsys, "status")
    assert "failed attempts: 0" in out


def test_check_without_public_cases(home, tmp_path, capsys):
    root = write_pack(tmp_path / "nopub", {"p": {"hidden": [([], b"", b"x\n")]}})
    d = tempfile.mkdtemp(prefix="sj-")
    svc = build_service(root, workdir=tmp_path / "run2", listen=f"{d}/n.sock",
                        evaluator=FakeEvaluator(load_pack(root)))
    with svc:
        enrol_code = cli.main(["--socket", svc.socket_address, "register", "bob"])
        assert enrol_code == 0
        capsys.readouterr()
        script = tmp_path / "s.sh"
        script.write_text("ok")
        code, _, err = sj(capsys, "check", script)
    shutil.rmtree(d, ignore_errors=True)
    assert code == 1 and "no public test cases" in err


def test_hints(home, daemon, capsys):
    enrol(capsys, daemon)
    for script in ("saludo.sh", "pares.sh"):
        sj(capsys, "submit", SOLUTIONS / script)
    code, out, _ = sj(capsys, "hint")
    assert code == 0 and out.startswith("[[ 1 ]]") and "sort" in out
    assert "penalty +15 min" in out
    code, out, _ = sj(capsys, "hint")
    assert code == 0 and "[[ 2 ]]" in out and "hints so far: 30 min" in out
    code, out, _ = sj(capsys, "hint")
    assert code == 1 and "no hints remain" in out


def test_hint_unregistered(home, daemon, capsys):
    code, _, err = sj(capsys, "--socket", daemon.socket_address, "--id", "ghost",
                      "--token", "x", "hint")
    assert code == 2 and "auth" in err
    code, _, _ = sj(capsys, "--socket", daemon.socket_address, "hint")
    assert code == 2


def test_status(home, daemon, capsys):
    enrol(capsys, daemon)
    code, out, _ = sj(capsys, "status")
    assert code == 0
    assert "active problem: 1. saludo" in out and "solved: 0/3" in out


def test_env_and_flag_precedence(home, daemon, capsys, monkeypatch):
    enrol(capsys, daemon)
    token = json.loads((home / ".shelljudge").read_text())["token"]
    (home / ".shelljudge").write_text(json.dumps({"socket": "/nonexistent.sock",
                                                  "contestant": "alice", "token": "bad"}))
    assert sj(capsys, "status")[0] == 2
    monkeypatch.setenv("SHELLJUDGE_SOCKET", daemon.socket_address)
    monkeypatch.setenv("SHELLJUDGE_TOKEN", token)
    assert sj(capsys, "status")[0] == 0
    assert sj(capsys, "--token", "bad", "status")[0] == 2


def test_color_is_opt_in(home, daemon, capsys):
    enrol(capsys, daemon)
    assert "\033[" not in sj(capsys, "check", SOLUTIONS / "saludo.sh")[1]
    assert "\033[32m" in sj(capsys, "--color", "check", SOLUTIONS / "saludo.sh")[1]


def test_admin_pack_validate(capsys, tmp_path):
    code, out, _ = sj(capsys, "admin", "pack-validate", DEMO_PACK)
    assert code == 0 and "pack OK" in out
    broken = write_pack(tmp_path / "broken", {"p1": {"hidden": [([], b"", b"x")]},
                                              "p2": {"hidden": []}})
    code, out, _ = sj(capsys, "admin", "pack-validate", broken)
    assert code != 0 and "MissingHiddenCases" in out and "p2" in out


def test_admin_pack_validate_references(capsys):
    code, out, _ = sj(capsys, "admin", "pack-validate", DEMO_PACK,
                      "--reference", f"lastb={SOLUTIONS / 'lastb_ascending.sh'}")
    assert code == 1 and out.count("reference-mismatch") == 3


def finished_log(tmp_path):
    pack = load_pack(DEMO_PACK)
    from shelljudge.state import ManualClock, open_contest
    clock = ManualClock()
    contest = open_contest(pack, tmp_path / "fixture", clock=clock, evaluator=FakeEvaluator(pack))
    for cid in ("ana", "ben", "cai"):
        contest.register(cid, "t")
    clock.set(600)
    contest.submit("ana", b"ok")
    contest.submit("ben", b"wa")
    clock.set(1200)
    contest.submit("ben", b"ok")
    contest.request_hint("ana")
    contest.end()
    contest.close()
    return tmp_path / "fixture" / "events.jsonl", contest


def test_admin_replay_matches_live(capsys, tmp_path):
    log, contest = finished_log(tmp_path)
    code, out, _ = sj(capsys, "admin", "replay", log, "--pack", DEMO_PACK)
    assert code == 0
    assert out == render_ranking(score(contest.state), contest.info)


def test_admin_replay_corrupt(capsys, tmp_path):
    log, _ = finished_log(tmp_path)
    lines = log.read_text().splitlines(keepends=True)
    log.write_text("".join(lines[:3] + lines[4:]))
    code, _, err = sj(capsys, "admin", "replay", log)
    assert code == 1 and "SequenceGap" in err


def test_admin_export(capsys, tmp_path):
    log, contest = finished_log(tmp_path)
    out_csv, stats_csv = tmp_path / "r.csv", tmp_path / "p.csv"
    code, out, _ = sj(capsys, "admin", "export", out_csv, "--log", log, "--problems", stats_csv)
    assert code == 0 and "3 contestant rows" in out
    rows = list(csv.DictReader(out_csv.open()))
    assert [r["contestant"] for r in rows] == ["ana", "ben", "cai"]
    assert len(list(csv.DictReader(stats_csv.open()))) == 3


def test_entry_point_daemon_down(tmp_path):
    env = {**os.environ, "HOME": str(tmp_path), "SHELLJUDGE_SOCKET": str(tmp_path / "x.sock"),
           "SHELLJUDGE_ID": "a", "SHELLJUDGE_TOKEN": "t"}
    proc = subprocess.run([sys.executable, "-m", "shelljudge", "status"], env=env,
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "connection error" in proc.stderr


def test_serve_subprocess_end_to_end(tmp_path):
    d = Path(tempfile.mkdtemp(prefix="sj-"))
    sock = d / "s.sock"
    env = {**os.environ, "HOME": str(tmp_path)}
    daemon = subprocess.Popen(
        [sys.executable, "-m", "shelljudge", "admin", "serve", "--pack", str(DEMO_PACK),
         "--socket", str(sock), "--http", "127.0.0.1:0", "--workdir", str(tmp_path / "w")],
        env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
    try:
        import time
        deadline = time.monotonic() + 20
        while not sock.exists() and time.monotonic() < deadline:
            time.sleep(0.05)
        run = lambda *a: subprocess.run([sys.executable, "-m", "shelljudge", *a], env=env,
                                        capture_output=True, text=True)
        assert run("--socket", str(sock), "register", "zoe").returncode == 0
        r = run("submit", str(SOLUTIONS / "saludo.sh"))
        assert r.returncode == 0 and "problem 2 unlocked" in r.stdout
        assert (tmp_path / "w/workspaces/zoe/02-pares/statement.txt").is_file()
    finally:
        daemon.terminate()
        assert daemon.wait(15) == 0
        shutil.rmtree(d, ignore_errors=True)
    kinds = [json.loads(l)["kind"] for l in (tmp_path / "w/events.jsonl").read_text().splitlines()]
    assert kinds[0] == "ContestStarted" and "EvaluationCompleted" in kinds
