"""Minimal client for the daemon's line protocol."""

from __future__ import annotations

import base64
import json
import socket

from .service import parse_address


class TransportError(Exception):
    pass


class Client:
    def __init__(self, address, timeout: float | None = 300.0):
        addr = parse_address(address) if isinstance(address, str) else address
        family = socket.AF_INET if isinstance(addr, tuple) else socket.AF_UNIX
        try:
            self._sock = socket.socket(family, socket.SOCK_STREAM)
            self._sock.settimeout(timeout)
            self._sock.connect(addr)
        except OSError as exc:
            self._sock.close()
            raise TransportError(f"cannot reach judge daemon at {address}: {exc}") from exc
        self._rfile = self._sock.makefile("rb")

    def send_raw(self, line: bytes) -> dict:
        try:
            self._sock.sendall(line if line.endswith(b"\n") else line + b"\n")
            reply = self._rfile.readline()
        except OSError as exc:
            raise TransportError(f"connection to judge daemon failed: {exc}") from exc
        if not reply:
            raise TransportError("judge daemon closed the connection")
        return json.loads(reply)

    def request(self, op: str, contestant: str, token: str = "", payload=None) -> dict:
        msg = {"op": op, "contestant": contestant, "token": token, "payload": payload or {}}
        return self.send_raw(json.dumps(msg).encode())

    def call_with_script(self, op, contestant, token, script: bytes) -> dict:
        return self.request(op, contestant, token,
                            {"script": base64.b64encode(script).decode()})

    def close(self):
        self._rfile.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
