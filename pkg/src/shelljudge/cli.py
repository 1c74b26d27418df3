"""``shelljudge`` command line.

Contestant verbs talk to the daemon; ``admin`` verbs work on packs and logs.
Exit codes: 0 success / Accepted, 1 rejected or refused, 2 transport or auth
failure.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import os
import sys
from pathlib import Path

from .client import Client, TransportError

CONFIG_FILE = ".shelljudge"
DEFAULT_SOCKET = "/tmp/shelljudge.sock"

VERDICT_TEXT = {
    "Accepted": "Accepted",
    "WrongAnswer": "Wrong answer",
    "TimeLimitExceeded": "Time limit exceeded",
    "RuntimeError": "Runtime error",
    "OutputLimitExceeded": "Output limit exceeded",
    "JudgeError": "Judge error",
}

EXIT_OK, EXIT_REJECTED, EXIT_TRANSPORT = 0, 1, 2


def _paint(text, color, enabled):
    codes = {"green": "32", "red": "31"}
    return f"\033[{codes[color]}m{text}\033[0m" if enabled else text


def config_path() -> Path:
    return Path(os.environ.get("HOME", "~")).expanduser() / CONFIG_FILE


def load_config(args) -> dict:
    cfg = {}
    path = config_path()
    if path.is_file():
        try:
            cfg.update(json.loads(path.read_text()))
        except json.JSONDecodeError:
            pass
    for key, env in (("socket", "SHELLJUDGE_SOCKET"), ("contestant", "SHELLJUDGE_ID"),
                     ("token", "SHELLJUDGE_TOKEN")):
        if os.environ.get(env):
            cfg[key] = os.environ[env]
    for key in ("socket", "contestant", "token"):
        if getattr(args, key, None):
            cfg[key] = getattr(args, key)
    cfg.setdefault("socket", DEFAULT_SOCKET)
    return cfg


def save_config(cfg: dict):
    path = config_path()
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as fh:
        json.dump(cfg, fh, indent=2)
        fh.write("\n")


class _Refused(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _call(cfg, op, payload_script: bytes | None = None) -> dict:
    if not cfg.get("contestant") and op != "register":
        raise _Refused("auth", "no contestant configured; run `shelljudge register <id>`")
    with Client(cfg["socket"]) as client:
        if payload_script is not None:
            resp = client.call_with_script(op, cfg["contestant"], cfg.get("token", ""),
                                           payload_script)
        else:
            resp = client.request(op, cfg["contestant"], cfg.get("token", ""))
    if not resp.get("ok"):
        raise _Refused(resp.get("error", "error"), resp.get("message", ""))
    return resp["data"]


def _refusal_exit(exc: _Refused) -> int:
    if exc.code in ("auth", "not_registered"):
        print(f"auth error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    print(f"error: {exc}", file=sys.stderr)
    return EXIT_REJECTED


def _read_script(path) -> bytes:
    return Path(path).read_bytes()


# contestant verbs

def cmd_register(args, cfg):
    cfg["contestant"] = args.id
    data = _call(cfg, "register")
    cfg["token"] = data["token"]
    save_config(cfg)
    print(f"Registered as {args.id}; first problem: {data['active_problem']}")
    if data.get("workspace"):
        print(f"Workspace: {data['workspace']}")
    return EXIT_OK


def cmd_submit(args, cfg):
    data = _call(cfg, "submit", _read_script(args.file))
    verdict = data["verdict"]
    if verdict == "Accepted":
        if data["finished"]:
            line = "Accepted — all problems solved"
        else:
            line = f"Accepted — problem {data['unlocked_position']} unlocked"
        print(_paint(line, "green", args.color))
        if data.get("unlocked") and data.get("workspace"):
            print(f"New problem in {data['workspace']}/"
                  f"{data['unlocked_position']:02d}-{data['unlocked']}")
        code = EXIT_OK
    elif verdict == "JudgeError":
        print(_paint("Judge error (not counted, please resubmit)", "red", args.color))
        code = EXIT_REJECTED
    else:
        print(_paint(f"{VERDICT_TEXT[verdict]} (attempt {data['attempt']})", "red", args.color))
        code = EXIT_REJECTED
    print(f"Penalty: {data['penalty']} min")
    return code


def cmd_check(args, cfg):
    data = _call(cfg, "check", _read_script(args.file))
    failed = 0
    for case in data["cases"]:
        ok = case["verdict"] == "Accepted"
        mark = _paint("✓" if ok else "✗", "green" if ok else "red", args.color)
        print(f"{mark} {case['case']:<6} {case['verdict']:<20} {case['wall_ms']:>6} ms")
        if not ok:
            failed += 1
            diff = difflib.unified_diff(
                case["expected"].splitlines(keepends=True),
                case["produced"].splitlines(keepends=True),
                fromfile="expected", tofile="produced")
            for line in diff:
                sys.stdout.write("    " + (line if line.endswith("\n") else line + "\n"))
    total = len(data["cases"])
    print(f"{total - failed}/{total} public cases passed (no penalty)")
    return EXIT_OK if failed == 0 else EXIT_REJECTED


def cmd_hint(args, cfg):
    try:
        data = _call(cfg, "hint")
    except _Refused as exc:
        if exc.code == "no_more_hints":
            print("no hints remain")
            return EXIT_REJECTED
        raise
    print(f"[[ {data['index']} ]]  {data['body']}")
    print(f"penalty +{data['hint_penalty']} min "
          f"(hints so far: {data['hint_penalty_total']} min, {data['remaining']} left)")
    return EXIT_OK


def cmd_status(args, cfg):
    d = _call(cfg, "status")
    print(f"contestant: {d['contestant']}  rank: {d['rank']}  "
          f"solved: {d['solved']}/{d['problems_total']}  penalty: {d['penalty_minutes']:.1f} min")
    if d["finished"]:
        print("all problems solved")
    else:
        print(f"active problem: {d['active_position']}. {d['active_problem']} ({d['title']})")
        print(f"failed attempts: {d['failed_attempts']}  "
              f"hints: {d['hints_taken']}/{d['hints_available']}")
    print(f"time: {int(d['elapsed'] // 60)} min elapsed, {int(d['remaining'] // 60)} min left"
          + ("  (contest ended)" if d["ended"] else ""))
    return EXIT_OK


# admin verbs

def cmd_pack_validate(args):
    from .pack import PackError, load_pack, validate_pack
    try:
        pack = load_pack(args.dir)
    except PackError as exc:
        print(f"{type(exc).__name__}: {exc}")
        return EXIT_REJECTED
    refs = {}
    for item in args.reference or []:
        pid, _, path = item.partition("=")
        refs[pid] = Path(path).read_bytes()
    report = validate_pack(pack, refs, backend=args.backend)
    for finding in report.findings:
        print(finding)
    if report.ok:
        print(f"pack OK: {pack.config.name}, {len(pack.problems)} problems")
        return EXIT_OK
    return EXIT_REJECTED


def cmd_serve(args):
    from .service import BindFailure, PackInvalid, serve
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    try:
        serve(args.pack, args.socket, args.http, workdir=args.workdir,
              duration_override=args.duration_override, backend=args.backend)
    except (PackInvalid, BindFailure) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    return EXIT_OK


def _load_optional_pack(path):
    from .pack import load_pack
    return load_pack(path) if path else None


def cmd_export(args):
    from .analytics import export_problem_stats, export_results
    pack = _load_optional_pack(args.pack)
    n = export_results(args.log, args.csv, pack)
    print(f"wrote {n} contestant rows to {args.csv}")
    if args.problems:
        m = export_problem_stats(args.log, args.problems, pack)
        print(f"wrote {m} problem rows to {args.problems}")
    return EXIT_OK


def cmd_replay(args):
    from .analytics import load_state
    from .scoring import render_ranking, score
    state = load_state(args.log, _load_optional_pack(args.pack))
    sys.stdout.write(render_ranking(score(state), state.info))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shelljudge", description=__doc__.splitlines()[0])
    p.add_argument("--socket", help="daemon address (socket path or host:port)")
    p.add_argument("--id", dest="contestant", help="contestant id")
    p.add_argument("--token", help="contestant token")
    p.add_argument("--color", action="store_true", help="colored output")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("register", help="register and store credentials in ~/.shelljudge")
    s.add_argument("id")
    s.set_defaults(func=cmd_register)
    s = sub.add_parser("submit", help="submit a script for the active problem")
    s.add_argument("file")
    s.set_defaults(func=cmd_submit)
    s = sub.add_parser("check", help="run a script on the public cases (no penalty)")
    s.add_argument("file")
    s.set_defaults(func=cmd_check)
    sub.add_parser("hint", help="reveal the next hint (penalized)").set_defaults(func=cmd_hint)
    sub.add_parser("status", help="show progress").set_defaults(func=cmd_status)

    admin = sub.add_parser("admin", help="operator commands")
    asub = admin.add_subparsers(dest="admin_verb", required=True)
    a = asub.add_parser("pack-validate", help="validate a contest pack")
    a.add_argument("dir")
    a.add_argument("--reference", action="append", metavar="PROBLEM=SCRIPT",
                   help="judge a reference solution over the hidden cases")
    a.add_argument("--backend", choices=["portable", "strict"])
    a.set_defaults(admin_func=cmd_pack_validate)
    a = asub.add_parser("serve", help="run the judge daemon")
    a.add_argument("--pack", required=True)
    a.add_argument("--socket", default=DEFAULT_SOCKET)
    a.add_argument("--http", default="127.0.0.1:8080")
    a.add_argument("--workdir", default="shelljudge-run")
    a.add_argument("--duration-override", type=int, metavar="MINUTES")
    a.add_argument("--backend", choices=["portable", "strict"])
    a.set_defaults(admin_func=cmd_serve)
    a = asub.add_parser("export", help="write the results CSV from an event log")
    a.add_argument("csv")
    a.add_argument("--log", required=True)
    a.add_argument("--pack", help="verify the log against this pack")
    a.add_argument("--problems", metavar="CSV", help="also write per-problem statistics")
    a.set_defaults(admin_func=cmd_export)
    a = asub.add_parser("replay", help="rebuild state from a log and print the ranking")
    a.add_argument("log")
    a.add_argument("--pack", help="verify the log against this pack")
    a.set_defaults(admin_func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "admin":
        from .events import LogCorrupted, SequenceGap
        from .state import ContestError
        try:
            return args.admin_func(args)
        except (LogCorrupted, SequenceGap, ContestError, OSError) as exc:
            print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_REJECTED
    cfg = load_config(args)
    try:
        return args.func(args, cfg)
    except TransportError as exc:
        print(f"connection error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except _Refused as exc:
        return _refusal_exit(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED


if __name__ == "__main__":
    sys.exit(main())
