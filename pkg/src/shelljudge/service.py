"""The judge daemon.

Contestant CLIs speak newline-delimited JSON over a local stream socket
(TCP optional).  Request::

    {"op": "submit", "contestant": "alice", "token": "...", "payload": {"script": "<base64>"}}

Response: ``{"ok": true, "data": {...}}`` or
``{"ok": false, "error": "<code>", "message": "..."}``.

The scoreboard is served read-only over HTTP: ``GET /api/ranking``,
``GET /api/problems`` and ``GET /``.
"""

from __future__ import annotations

import base64
import binascii
import html
import json
import logging
import os
import secrets
import signal
import socketserver
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .judge import NoPublicCases
from .pack import FILES_PLACEHOLDER, ContestPack, load_pack
from .scoring import format_minutes, problem_stats, score
from .state import Contest, ContestError, open_contest

log = logging.getLogger(__name__)

OPS = ("register", "submit", "check", "hint", "status")
MAX_LINE = 16 << 20
BACKLOG = 256  # a whole class may connect at the same instant


class BindFailure(Exception):
    pass


class PackInvalid(Exception):
    pass


class WireError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def parse_address(addr: str):
    """``host:port`` / ``tcp:host:port`` -> (host, port); anything else is a socket path."""
    if addr.startswith("tcp:"):
        addr = addr[4:]
    elif "/" in addr or ":" not in addr:
        return addr
    host, _, port = addr.rpartition(":")
    return (host or "127.0.0.1", int(port))


def _text(data: bytes) -> str:
    return data.decode("utf-8", errors="replace")


class JudgeService:
    def __init__(self, contest: Contest, *, listen=None, http=None, workers=None):
        self.contest = contest
        self.listen = listen
        self.http = http
        self.workers = workers or 2 * (os.cpu_count() or 1)
        self._pool = ThreadPoolExecutor(self.workers, thread_name_prefix="judge")
        self._servers: list[socketserver.BaseServer] = []
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()

    # request handling (transport independent)

    def handle_line(self, line: bytes) -> dict:
        try:
            req = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            return {"ok": False, "error": "bad_request", "message": f"invalid JSON: {exc}"}
        return self.handle(req)

    def handle(self, req) -> dict:
        try:
            if not isinstance(req, dict):
                raise WireError("bad_request", "request must be a JSON object")
            op = req.get("op")
            if op not in OPS:
                raise WireError("unknown_op", f"unknown op {op!r}")
            contestant = req.get("contestant")
            if not isinstance(contestant, str) or not contestant:
                raise WireError("bad_request", "contestant is required")
            payload = req.get("payload") or {}
            if not isinstance(payload, dict):
                raise WireError("bad_request", "payload must be an object")
            if op == "register":
                return {"ok": True, "data": self._register(contestant)}
            if not self.contest.authenticate(contestant, req.get("token") or ""):
                raise WireError("auth", "unknown contestant or bad token")
            data = getattr(self, "_op_" + op)(contestant, payload)
            return {"ok": True, "data": data}
        except WireError as exc:
            return {"ok": False, "error": exc.code, "message": str(exc)}
        except ContestError as exc:
            return {"ok": False, "error": exc.code, "message": str(exc)}
        except NoPublicCases as exc:
            return {"ok": False, "error": "no_public_cases",
                    "message": f"problem {exc} has no public test cases"}
        except Exception as exc:
            log.exception("internal error handling %r", req)
            return {"ok": False, "error": "internal", "message": str(exc)}

    def _register(self, contestant):
        token = secrets.token_urlsafe(24)
        self.contest.register(contestant, token)
        status = self.contest.status(contestant)
        return {"contestant": contestant, "token": token,
                "active_problem": status["active_problem"],
                "workspace": status.get("workspace")}

    @staticmethod
    def _script(payload) -> bytes:
        try:
            return base64.b64decode(payload["script"], validate=True)
        except (KeyError, TypeError, binascii.Error):
            raise WireError("bad_request", "payload.script must be base64") from None

    def _op_submit(self, contestant, payload):
        script = self._script(payload)
        out = self._pool.submit(self.contest.submit, contestant, script).result()
        return {"verdict": out.verdict.value, "problem": out.problem, "attempt": out.attempt,
                "unlocked": out.unlocked, "unlocked_position": out.unlocked_position,
                "finished": out.finished, "penalty_minutes": float(out.penalty_minutes),
                "penalty": format_minutes(out.penalty_minutes),
                "workspace": self.contest.status(contestant).get("workspace")}

    def _op_check(self, contestant, payload):
        script = self._script(payload)
        result = self._pool.submit(self.contest.check, contestant, script).result()
        problem = self.contest.pack.problems[result.problem_id]
        files = str(self.contest.shared_files or FILES_PLACEHOLDER)
        by_id = {c.id: c for c in problem.public_cases}
        cases = []
        for t in result.per_test:
            case = by_id.get(t.case_id)
            cases.append({
                "case": t.case_id, "verdict": t.verdict.value, "wall_ms": t.wall_time,
                "argv": case.resolved_argv(files) if case else [],
                "expected": _text(case.expected_stdout) if case else "",
                "produced": _text(t.produced_stdout)})
        return {"verdict": result.aggregate.value, "problem": result.problem_id,
                "cases": cases}

    def _op_hint(self, contestant, payload):
        hint = self.contest.request_hint(contestant)
        status = self.contest.status(contestant)
        info = self.contest.info
        return {"index": hint.index, "body": hint.body, "problem": status["active_problem"],
                "remaining": status["hints_available"] - status["hints_taken"],
                "hint_penalty": info.hint_penalty,
                "hint_penalty_total": info.hint_penalty * status["hints_taken"],
                "penalty_minutes": status["penalty_minutes"]}

    def _op_status(self, contestant, payload):
        return self.contest.status(contestant)

    # read-only views

    def ranking_document(self) -> dict:
        state = self.contest.snapshot()
        rows = score(state)
        return {"contest": state.info.name, "duration": state.info.duration,
                "elapsed": self.contest.clock.now(), "ended": state.ended,
                "seq": state.last_seq, "problem_order": list(state.info.problem_order),
                "rows": [r.to_dict() for r in rows],
                "problems": [s.to_dict() for s in problem_stats(state)]}

    def problems_document(self) -> dict:
        state = self.contest.snapshot()
        return {"seq": state.last_seq,
                "problems": [s.to_dict() for s in problem_stats(state)]}

    def scoreboard_html(self) -> str:
        doc = self.ranking_document()
        esc = html.escape
        head = "".join(f"<th>{i}. {esc(p)}</th>"
                       for i, p in enumerate(doc["problem_order"], 1))
        body = []
        for rank, row in enumerate(doc["rows"], 1):
            cells = []
            for c in row["cells"]:
                if c["solved"]:
                    text = f"&#10003; {int(c['at'] // 60)} min"
                    cls = "solved"
                elif c["attempts"] or c["hints"]:
                    text, cls = "&#10007;", "tried"
                else:
                    text, cls = "", "empty"
                detail = f"{c['attempts']} failed, {c['hints']} hints"
                if c["attempts"] or c["hints"]:
                    text += f"<br><small>{detail}</small>"
                cells.append(f'<td class="{cls}" title="{detail}">{text}</td>')
            body.append(f"<tr><td>{rank}</td><td>{esc(row['contestant'])}</td>"
                        f"<td>{row['solved']}</td><td>{row['penalty']}</td>{''.join(cells)}</tr>")
        stats = "".join(
            f"<tr><td>{esc(s['problem'])}</td><td>{s['correct']}</td><td>{s['failed']}</td>"
            f"<td>{s['hints']}</td><td>{s['checks']}</td></tr>" for s in doc["problems"])
        minutes = int(doc["elapsed"] // 60)
        return f"""<!DOCTYPE html>
<html><head><meta charset="utf-8"><meta http-equiv="refresh" content="10">
<title>{esc(doc['contest'])}</title>
<style>
body {{ font-family: monospace; margin: 2em; }}
table {{ border-collapse: collapse; margin-bottom: 2em; }}
td, th {{ border: 1px solid #999; padding: 4px 8px; text-align: center; }}
td.solved {{ background: #c8f0c8; }} td.tried {{ background: #f6d0d0; }}
</style></head><body>
<h1>{esc(doc['contest'])}</h1>
<p>{minutes} / {doc['duration']} min{' (ended)' if doc['ended'] else ''}</p>
<table id="ranking"><tr><th>#</th><th>contestant</th><th>solved</th><th>penalty</th>{head}</tr>
{''.join(body)}
</table>
<table id="problems"><tr><th>problem</th><th>correct</th><th>failed</th><th>hints</th><th>checks</th></tr>
{stats}
</table></body></html>
"""

    # transports

    def _line_handler(self):
        service = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                while True:
                    line = self.rfile.readline(MAX_LINE + 1)
                    if not line:
                        return
                    if len(line) > MAX_LINE and not line.endswith(b"\n"):
                        resp = {"ok": False, "error": "bad_request", "message": "line too long"}
                        while line and not line.endswith(b"\n"):
                            line = self.rfile.readline(MAX_LINE + 1)
                    elif not line.strip():
                        continue
                    else:
                        resp = service.handle_line(line)
                    try:
                        self.wfile.write(json.dumps(resp).encode() + b"\n")
                        self.wfile.flush()
                    except (BrokenPipeError, ConnectionResetError):
                        return

        return Handler

    def _http_handler(self):
        service = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                path = self.path.split("?", 1)[0]
                if path == "/api/ranking":
                    self._send(200, "application/json", json.dumps(service.ranking_document()))
                elif path == "/api/problems":
                    self._send(200, "application/json", json.dumps(service.problems_document()))
                elif path in ("/", "/index.html"):
                    self._send(200, "text/html; charset=utf-8", service.scoreboard_html())
                else:
                    self._send(404, "application/json", '{"error": "not found"}')

            def _send(self, code, ctype, body):
                data = body.encode()
                self.send_response(code)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(data)))
                self.send_header("Cache-Control", "no-store")
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, fmt, *args):
                log.debug("http: " + fmt, *args)

        return Handler

    def start(self):
        try:
            if self.listen is not None:
                addr = parse_address(self.listen) if isinstance(self.listen, str) else self.listen
                if isinstance(addr, tuple):
                    cls = type("TCPServer", (socketserver.ThreadingTCPServer,),
                               {"allow_reuse_address": True, "daemon_threads": True,
                                "request_queue_size": BACKLOG})
                else:
                    if os.path.exists(addr):
                        os.unlink(addr)
                    cls = type("UnixServer", (socketserver.ThreadingUnixStreamServer,),
                               {"daemon_threads": True, "request_queue_size": BACKLOG})
                self._servers.append(cls(addr, self._line_handler()))
                if not isinstance(addr, tuple):
                    os.chmod(addr, 0o666)
            if self.http is not None:
                addr = parse_address(self.http) if isinstance(self.http, str) else self.http
                srv = type("HTTPServer", (ThreadingHTTPServer,),
                           {"request_queue_size": BACKLOG})(addr, self._http_handler())
                srv.daemon_threads = True
                self._servers.append(srv)
        except OSError as exc:
            self._close_servers()
            raise BindFailure(str(exc)) from exc
        for srv in self._servers:
            t = threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.1},
                                 daemon=True)
            t.start()
            self._threads.append(t)
        ticker = threading.Thread(target=self._tick, daemon=True)
        ticker.start()
        self._threads.append(ticker)
        return self

    @property
    def socket_address(self):
        return self._servers[0].server_address if self.listen is not None else None

    @property
    def http_address(self):
        return self._servers[-1].server_address if self.http is not None else None

    def _tick(self):
        while not self._stop.wait(1.0):
            try:
                self.contest.end_if_expired()
            except Exception:
                log.exception("clock tick failed")

    def _close_servers(self):
        for srv in self._servers:
            srv.server_close()
            addr = srv.server_address
            if isinstance(addr, str) and os.path.exists(addr):
                os.unlink(addr)

    def stop(self):
        self._stop.set()
        for srv in self._servers:
            srv.shutdown()
        self._pool.shutdown(wait=True)
        self._close_servers()
        self.contest.end_if_expired()
        self.contest.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def prepare_workdir(pack: ContestPack, workdir) -> Path:
    """Copy the pack's shared files to ``<workdir>/contest-files`` (read-only)."""
    import shutil
    target = Path(workdir) / "contest-files"
    if pack.files_dir.is_dir() and not target.exists():
        shutil.copytree(pack.files_dir, target)
        for dirpath, _, filenames in os.walk(target):
            for f in filenames:
                os.chmod(os.path.join(dirpath, f), 0o444)
            os.chmod(dirpath, 0o555)
    return target


def build_service(pack_path, *, workdir, listen=None, http=None, duration_override=None,
                  backend=None, clock=None, workers=None, evaluator=None) -> JudgeService:
    from .pack import PackError, validate_pack
    from .sandbox import get_backend
    try:
        pack = load_pack(pack_path)
    except PackError as exc:
        raise PackInvalid(str(exc)) from exc
    report = validate_pack(pack)
    for finding in report.findings:
        log.warning("pack: %s", finding)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    files = prepare_workdir(pack, workdir)
    be = get_backend(backend) if not hasattr(backend, "execute") else backend
    for warning in be.capabilities().warnings:
        log.warning("sandbox: %s", warning)
    contest = open_contest(pack, workdir, clock=clock, backend=be,
                           shared_files=files if files.exists() else None,
                           duration_override=duration_override, evaluator=evaluator)
    return JudgeService(contest, listen=listen, http=http, workers=workers)


def serve(pack_path, listen, http, *, workdir, duration_override=None, backend=None):
    """Run until SIGINT/SIGTERM."""
    service = build_service(pack_path, workdir=workdir, listen=listen, http=http,
                            duration_override=duration_override, backend=backend)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    service.start()
    log.info("serving %s on %s, scoreboard on %s", service.contest.info.name,
             service.socket_address, service.http_address)
    try:
        while not stop.wait(0.5):
            pass
    finally:
        service.stop()
