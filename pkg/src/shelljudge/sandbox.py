"""Run one untrusted shell script under time, output and filesystem limits.

Two backends share one interface:

``portable``
    Private scratch directory, its own process group, OS resource limits.
    When the daemon runs as root each execution also gets a dedicated
    unprivileged uid from a small pool, so per-user process limits apply
    and every process the script leaves behind can be found and killed.

``strict``
    Everything above plus a fresh pid and mount namespace with a
    changed root: the script sees a read-only system, its scratch dir at
    ``/work`` and the shared files at ``/contest-files``.  Needs root and
    ``unshare(1)``; otherwise it degrades to the portable behaviour and
    says so in its capability report.
"""

from __future__ import annotations

import atexit
import ctypes
import enum
import errno
import hashlib
import logging
import math
import os
import queue
import resource
import selectors
import shutil
import signal
import subprocess
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .pack import FILES_PLACEHOLDER

log = logging.getLogger(__name__)

GRACE_MS = 2000
BACKEND_ENV = "SHELLJUDGE_BACKEND"
SCRIPT_NAME = "solution.sh"
SAFE_PATH = "/usr/local/bin:/usr/bin:/bin"
STRICT_WORK = "/work"
STRICT_FILES = "/contest-files"

_PR_SET_CHILD_SUBREAPER = 36
_PRLIMIT = shutil.which("prlimit", path=SAFE_PATH + ":/usr/sbin:/sbin")
_SETPRIV = shutil.which("setpriv", path=SAFE_PATH + ":/usr/sbin:/sbin")


class SandboxSetupFailure(Exception):
    """The sandbox could not be prepared or the process could not be spawned."""


class KillReason(str, enum.Enum):
    TIMEOUT = "Timeout"
    OUTPUT_LIMIT = "OutputLimit"


@dataclass(frozen=True)
class ExecutionSpec:
    script: bytes
    argv: Sequence[str] = ()
    stdin: bytes = b""
    time_limit: int = 5000  # ms
    output_limit: int = 1 << 20  # bytes
    workdir: Path | None = None
    shared_files: Path | None = None
    retain: bool = False

    def __post_init__(self):
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.output_limit <= 0:
            raise ValueError("output_limit must be positive")


@dataclass(frozen=True)
class ExecutionOutcome:
    exit_code: int | None
    killed: KillReason | None
    stdout: bytes
    stderr: bytes
    wall_time: int  # ms
    workdir: Path | None = None  # only set when retained

    @property
    def status(self) -> str:
        if self.killed is not None:
            return f"Killed({self.killed.value})"
        return f"Exited({self.exit_code})"


@dataclass(frozen=True)
class IsolationReport:
    backend: str
    process_group_kill: bool
    fs_scope: str
    rlimits: bool
    uid_isolation: bool = False
    pid_namespace: bool = False
    warnings: tuple[str, ...] = field(default=())


# -- /proc helpers ------------------------------------------------------------

@dataclass(frozen=True)
class _Proc:
    pid: int
    state: str
    ppid: int
    pgid: int
    uid: int


def _processes() -> list[_Proc] | None:
    """Snapshot of all processes, or None when /proc is unavailable."""
    try:
        names = os.listdir("/proc")
    except OSError:
        return None
    procs = []
    for name in names:
        if not name.isdigit():
            continue
        try:
            with open(f"/proc/{name}/stat", "rb") as fh:
                raw = fh.read()
            uid = os.stat(f"/proc/{name}").st_uid
        except OSError:
            continue
        fields = raw[raw.rfind(b")") + 2:].split()
        procs.append(_Proc(int(name), fields[0].decode(), int(fields[1]), int(fields[2]), uid))
    return procs


_subreaper_lock = threading.Lock()
_subreaper_set = False


def _become_subreaper():
    """Adopt orphaned descendants so they can be reaped here, not by pid 1."""
    global _subreaper_set
    with _subreaper_lock:
        if _subreaper_set:
            return
        _subreaper_set = True
        try:
            libc = ctypes.CDLL(None, use_errno=True)
            libc.prctl(_PR_SET_CHILD_SUBREAPER, 1, 0, 0, 0)
        except (OSError, AttributeError):
            log.debug("prctl(PR_SET_CHILD_SUBREAPER) unavailable")


def _signal_group(pgid: int, sig: int):
    try:
        os.killpg(pgid, sig)
    except (ProcessLookupError, PermissionError):
        pass


def _reap(pid: int):
    try:
        os.waitpid(pid, os.WNOHANG)
    except ChildProcessError:
        pass


def stray_processes(pgids=(), uids=()) -> list[int]:
    """Live (non-zombie) processes in any of the given groups or owned by the uids."""
    procs = _processes() or []
    pgids, uids = set(pgids), set(uids)
    return [p.pid for p in procs
            if p.state != "Z" and (p.pgid in pgids or p.uid in uids)]


# -- backends -----------------------------------------------------------------

def _set_limits(cpu_s: int, nproc: int | None, address_space: int | None, fsize: int):
    def apply():
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_s, cpu_s + 1))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
        resource.setrlimit(resource.RLIMIT_FSIZE, (fsize, fsize))
        if nproc is not None:
            resource.setrlimit(resource.RLIMIT_NPROC, (nproc, nproc))
        if address_space is not None:
            resource.setrlimit(resource.RLIMIT_AS, (address_space, address_space))
    return apply


class PortableBackend:
    name = "portable"

    def __init__(self, scratch_root=None, *, max_processes=64, address_space=1 << 30,
                 file_size=16 << 20, uid_base=61000, slots=64, term_grace=0.25):
        self.max_processes = max_processes
        self.address_space = address_space
        self.file_size = file_size
        self.term_grace = term_grace
        self.privileged = hasattr(os, "geteuid") and os.geteuid() == 0
        self.uid_base = uid_base
        self.slots = slots
        self._slots: queue.Queue[int] = queue.Queue()
        for i in range(slots):
            self._slots.put(i)
        self._scratch_arg = scratch_root
        self._scratch_root: Path | None = None
        self._mirrors: dict[Path, Path] = {}
        self._lock = threading.Lock()
        self.interpreter = shutil.which("bash", path=SAFE_PATH) or "/bin/sh"

    # scratch management

    @property
    def scratch_root(self) -> Path:
        with self._lock:
            if self._scratch_root is None:
                base = self._scratch_arg or os.environ.get("SHELLJUDGE_SCRATCH")
                if base:
                    Path(base).mkdir(parents=True, exist_ok=True)
                root = Path(tempfile.mkdtemp(prefix="shelljudge-", dir=base))
                os.chmod(root, 0o711)
                if self.privileged:
                    blocked = [p for p in root.parents if not os.stat(p).st_mode & 0o001]
                    if blocked:
                        shutil.rmtree(root, ignore_errors=True)
                        raise SandboxSetupFailure(
                            f"scratch root {root} is not reachable by sandbox uids "
                            f"({blocked[0]} is not world-searchable)")
                self._scratch_root = root
                atexit.register(shutil.rmtree, root, True)
            return self._scratch_root

    def slot_uids(self) -> list[int]:
        if not self.privileged:
            return []
        return [self.uid_base + i for i in range(self.slots)]

    def _shared_view(self, shared: Path | None) -> Path:
        """Host path through which the sandboxed uid can read the shared files."""
        if shared is None:
            empty = self.scratch_root / "no-files"
            empty.mkdir(mode=0o755, exist_ok=True)
            return empty
        shared = Path(shared).resolve()
        if not self.privileged:
            return shared
        root = self.scratch_root
        with self._lock:
            mirror = self._mirrors.get(shared)
            if mirror is None:
                tag = hashlib.sha256(str(shared).encode()).hexdigest()[:12]
                mirror = root / f"files-{tag}"
                if mirror.exists():
                    shutil.rmtree(mirror)
                shutil.copytree(shared, mirror)
                for dirpath, dirnames, filenames in os.walk(mirror):
                    os.chmod(dirpath, 0o555)
                    for f in filenames:
                        os.chmod(os.path.join(dirpath, f), 0o444)
                os.chmod(mirror, 0o555)
                self._mirrors[shared] = mirror
            return mirror

    def files_path(self, shared: Path | None) -> str:
        """Path substituted for the ``{FILES}`` placeholder, as the script sees it."""
        return self._visible(self.scratch_root, self._shared_view(shared))[1]

    # isolation report

    def capabilities(self) -> IsolationReport:
        warnings = []
        if not self.privileged:
            warnings.append("running unprivileged: no per-execution uid; the process limit is "
                            "shared with the daemon's user and processes that leave the "
                            "process group cannot be tracked")
        return IsolationReport(
            backend=self.name, process_group_kill=True, fs_scope="scratch-dir only",
            rlimits=True, uid_isolation=self.privileged, pid_namespace=False,
            warnings=tuple(warnings))

    # execution

    def _command(self, script: Path, argv: list[str], workdir: Path, files: Path,
                 uid: int | None) -> tuple[list[str], str]:
        return [self.interpreter, str(script), *argv], str(workdir)

    def _visible(self, workdir: Path, files: Path) -> tuple[str, str]:
        return str(workdir), str(files)

    def execute(self, spec: ExecutionSpec) -> ExecutionOutcome:
        _become_subreaper()
        root = self.scratch_root
        slot = self._slots.get() if self.privileged else None
        uid = None if slot is None else self.uid_base + slot
        tag = uuid.uuid4().hex
        own_workdir = spec.workdir is None
        workdir = Path(spec.workdir) if spec.workdir else root / f"{tag}.work"
        private = root / f"{tag}.in"
        try:
            try:
                files = self._shared_view(spec.shared_files)
                workdir.mkdir(mode=0o700, exist_ok=not own_workdir)
                if any(workdir.iterdir()):
                    raise SandboxSetupFailure(f"workdir {workdir} is not empty")
                private.mkdir(mode=0o700)
                script_path = workdir / SCRIPT_NAME
                script_path.write_bytes(spec.script)
                stdin_path = private / "stdin"
                stdin_path.write_bytes(spec.stdin)
                os.chmod(stdin_path, 0o400)
                if uid is not None:
                    for p in (workdir, script_path, stdin_path):
                        os.chown(p, uid, uid)
            except OSError as exc:
                raise SandboxSetupFailure(f"cannot prepare scratch: {exc}") from exc
            return self._run(spec, workdir, script_path, stdin_path, files, uid)
        finally:
            shutil.rmtree(private, ignore_errors=True)
            if not spec.retain:
                shutil.rmtree(workdir, ignore_errors=True)
            if slot is not None:
                self._slots.put(slot)

    def _nproc_limit(self, uid: int | None) -> int:
        if uid is not None:
            return self.max_processes
        procs = _processes()
        mine = os.getuid()
        current = sum(1 for p in procs if p.uid == mine) if procs is not None else 0
        return current + self.max_processes

    def _run(self, spec, workdir, script_path, stdin_path, files, uid) -> ExecutionOutcome:
        visible_work, visible_files = self._visible(workdir, files)
        argv = [a.replace(FILES_PLACEHOLDER, visible_files) for a in spec.argv]
        cmd, cwd = self._command(script_path, argv, workdir, files, uid)
        env = {"PATH": SAFE_PATH, "HOME": visible_work, "LC_ALL": "C"}
        cpu_s = math.ceil(spec.time_limit / 1000) + 1
        nproc = self._nproc_limit(uid)
        drop_uid = uid is not None and self.name == "portable"
        # A preexec_fn (or user=) forces a full fork(), whose cost grows with the
        # daemon's memory; exec wrappers keep the cheap vfork path open.
        limits, extra = None, {}
        if _PRLIMIT and (_SETPRIV or not drop_uid):
            prefix = [_PRLIMIT, f"--cpu={cpu_s}:{cpu_s + 1}", "--core=0:0",
                      f"--fsize={self.file_size}:{self.file_size}", f"--nproc={nproc}:{nproc}"]
            if self.address_space is not None:
                prefix.append(f"--as={self.address_space}:{self.address_space}")
            prefix.append("--")
            if drop_uid:
                prefix += [_SETPRIV, f"--reuid={uid}", f"--regid={uid}", "--clear-groups", "--"]
            cmd = prefix + cmd
        else:
            limits = _set_limits(cpu_s, nproc, self.address_space, self.file_size)
            if drop_uid:
                extra = {"user": uid, "group": uid, "extra_groups": []}
        try:
            stdin_fh = open(stdin_path, "rb")
        except OSError as exc:
            raise SandboxSetupFailure(str(exc)) from exc
        try:
            start = time.monotonic()
            try:
                proc = subprocess.Popen(
                    cmd, cwd=cwd, env=env, stdin=stdin_fh, stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE, start_new_session=True, preexec_fn=limits,
                    close_fds=True, **extra)
            except (OSError, subprocess.SubprocessError) as exc:
                raise SandboxSetupFailure(f"cannot spawn: {exc}") from exc
        finally:
            stdin_fh.close()
        try:
            return self._supervise(proc, spec, start, uid,
                                   workdir if spec.retain else None)
        finally:
            self._cleanup(proc, uid)

    def _supervise(self, proc, spec, start, uid, retained) -> ExecutionOutcome:
        pgid = proc.pid
        deadline = start + spec.time_limit / 1000
        hard_deadline = deadline + GRACE_MS / 1000 - 0.2
        out, err = bytearray(), bytearray()
        killed = None
        leader_done = False
        sel = selectors.DefaultSelector()
        sel.register(proc.stdout, selectors.EVENT_READ, "out")
        sel.register(proc.stderr, selectors.EVENT_READ, "err")
        try:
            while sel.get_map():
                now = time.monotonic()
                if not leader_done and proc.poll() is not None:
                    # anything still holding the pipes is a leftover background job
                    leader_done = True
                    _signal_group(pgid, signal.SIGKILL)
                if killed is None and not leader_done and now >= deadline:
                    killed = KillReason.TIMEOUT
                    break
                if now >= hard_deadline:
                    break
                wait = (deadline - now) if not leader_done else (hard_deadline - now)
                for key, _ in sel.select(max(0.0, min(wait, 0.05))):
                    chunk = os.read(key.fileobj.fileno(), 65536)
                    if not chunk:
                        sel.unregister(key.fileobj)
                        continue
                    if key.data == "out":
                        out += chunk
                        if len(out) > spec.output_limit and killed is None:
                            killed = KillReason.OUTPUT_LIMIT
                    elif len(err) < spec.output_limit:
                        err += chunk[:spec.output_limit - len(err)]
                if killed is KillReason.OUTPUT_LIMIT:
                    break
        finally:
            sel.close()

        if killed is None and proc.poll() is None:
            # pipes closed but the leader may still be running or just exiting
            try:
                proc.wait(max(0.0, deadline - time.monotonic()))
            except subprocess.TimeoutExpired:
                killed = KillReason.TIMEOUT
        if killed is KillReason.TIMEOUT:
            _signal_group(pgid, signal.SIGTERM)
            try:
                proc.wait(self.term_grace)
            except subprocess.TimeoutExpired:
                pass
        if proc.poll() is None or killed is not None:
            _signal_group(pgid, signal.SIGKILL)
        try:
            proc.wait(max(0.05, hard_deadline + 0.15 - time.monotonic()))
        except subprocess.TimeoutExpired:
            log.warning("sandbox leader %d did not die after SIGKILL", proc.pid)
        wall = int(round((time.monotonic() - start) * 1000))
        for fh in (proc.stdout, proc.stderr):
            fh.close()

        code = proc.returncode
        if killed is None and code is not None and code < 0:
            # our CPU limit sits above the wall limit; an earlier SIGXCPU means the
            # script lowered its own limit and is just a signal exit
            if -code == signal.SIGXCPU and wall >= spec.time_limit:
                killed = KillReason.TIMEOUT
            code = 128 - code
        if killed is not None:
            code = None
        return ExecutionOutcome(
            exit_code=code, killed=killed, stdout=bytes(out[:spec.output_limit]),
            stderr=bytes(err), wall_time=wall, workdir=retained)

    def _cleanup(self, proc, uid, timeout=1.0):
        """Kill and reap everything the script started."""
        pgid = proc.pid
        _signal_group(pgid, signal.SIGKILL)
        if proc.poll() is None:
            try:
                proc.wait(timeout)
            except subprocess.TimeoutExpired:
                pass
        me = os.getpid()
        end = time.monotonic() + timeout
        while True:
            procs = _processes()
            if procs is None:
                return
            victims = [p for p in procs if p.pid != proc.pid
                       and (p.pgid == pgid or (uid is not None and p.uid == uid))]
            pending = False
            for p in victims:
                if p.state == "Z":
                    if p.ppid == me:
                        _reap(p.pid)
                        pending = True
                    continue
                pending = True
                try:
                    os.kill(p.pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
            if not pending:
                return
            if time.monotonic() > end:
                log.warning("sandbox cleanup timed out; %d processes remain", len(victims))
                return
            time.sleep(0.002)


_STRICT_SETUP = r"""
set -e
R="$1"; W="$2"; F="$3"; U="$4"; shift 4
for d in bin sbin lib lib32 lib64 libx32 usr etc; do
  if [ -L "/$d" ]; then ln -s "$(readlink "/$d")" "$R/$d"
  elif [ -d "/$d" ]; then
    mkdir -p "$R/$d"; mount --rbind "/$d" "$R/$d"; mount -o remount,bind,ro "$R/$d"
  fi
done
mkdir -p "$R/proc" "$R/dev" "$R/tmp" "$R/work" "$R/contest-files"
mount -t proc proc "$R/proc"
for n in null zero random urandom; do
  touch "$R/dev/$n"; mount --bind "/dev/$n" "$R/dev/$n"
done
ln -s /proc/self/fd "$R/dev/fd"
ln -s /proc/self/fd/0 "$R/dev/stdin"
ln -s /proc/self/fd/1 "$R/dev/stdout"
ln -s /proc/self/fd/2 "$R/dev/stderr"
mount -t tmpfs -o size=16m,mode=1777 tmpfs "$R/tmp"
mount --bind "$W" "$R/work"
mount --bind "$F" "$R/contest-files"; mount -o remount,bind,ro "$R/contest-files"
exec "$CHROOT" --userspec="$U:$U" "$R" /usr/bin/env -C /work "$@"
"""


class StrictBackend(PortableBackend):
    name = "strict"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._available: bool | None = None
        self._reason = ""

    @property
    def available(self) -> bool:
        if self._available is None:
            self._available, self._reason = self._probe()
        return self._available

    def _probe(self) -> tuple[bool, str]:
        if not self.privileged:
            return False, "root privileges required for namespaces and chroot"
        unshare = shutil.which("unshare", path=SAFE_PATH + ":/usr/sbin:/sbin")
        chroot = shutil.which("chroot", path=SAFE_PATH + ":/usr/sbin:/sbin")
        if not unshare or not chroot:
            return False, "unshare(1) or chroot(8) not installed"
        self._unshare, self._chroot = unshare, chroot
        try:
            r = subprocess.run([unshare, "--pid", "--fork", "--mount", "true"],
                               capture_output=True, timeout=10)
        except (OSError, subprocess.SubprocessError) as exc:
            return False, f"unshare probe failed: {exc}"
        if r.returncode != 0:
            return False, "unshare probe failed: " + r.stderr.decode(errors="replace").strip()
        return True, ""

    def capabilities(self) -> IsolationReport:
        if not self.available:
            base = super().capabilities()
            return IsolationReport(
                backend=self.name, process_group_kill=True,
                fs_scope="scratch-dir only (degraded)", rlimits=True,
                uid_isolation=base.uid_isolation, pid_namespace=False,
                warnings=(f"strict isolation unavailable: {self._reason}; "
                          "falling back to portable behaviour",) + base.warnings)
        return IsolationReport(
            backend=self.name, process_group_kill=True, fs_scope="root-changed",
            rlimits=True, uid_isolation=True, pid_namespace=True,
            warnings=("network is not isolated",))

    def _visible(self, workdir, files):
        if not self.available:
            return super()._visible(workdir, files)
        return STRICT_WORK, STRICT_FILES

    def _command(self, script, argv, workdir, files, uid):
        if not self.available:
            return super()._command(script, argv, workdir, files, uid)
        newroot = workdir.parent / (workdir.name + ".root")
        newroot.mkdir(mode=0o755)
        cmd = [self._unshare, "--pid", "--fork", "--mount", "--kill-child", "--",
               "/bin/sh", "-c", _STRICT_SETUP.replace("$CHROOT", self._chroot), "setup",
               str(newroot), str(workdir), str(files), str(uid),
               "/bin/bash", f"{STRICT_WORK}/{SCRIPT_NAME}", *argv]
        return cmd, "/"

    def _run(self, spec, workdir, script_path, stdin_path, files, uid):
        try:
            return super()._run(spec, workdir, script_path, stdin_path, files, uid)
        finally:
            newroot = workdir.parent / (workdir.name + ".root")
            if newroot.exists():
                # mounts live only in the dead namespace; never recurse into a live one
                if any(os.path.ismount(newroot / d) for d in ("usr", "etc", "work")):
                    log.error("refusing to remove %s: still mounted", newroot)
                else:
                    shutil.rmtree(newroot, ignore_errors=True)


_BACKENDS = {"portable": PortableBackend, "strict": StrictBackend}
_default: dict[str, PortableBackend] = {}
_default_lock = threading.Lock()


def get_backend(name: str | None = None) -> PortableBackend:
    """Shared backend instance; ``name`` defaults to $SHELLJUDGE_BACKEND or portable."""
    name = name or os.environ.get(BACKEND_ENV) or "portable"
    if name not in _BACKENDS:
        raise ValueError(f"unknown sandbox backend {name!r} (expected portable or strict)")
    with _default_lock:
        if name not in _default:
            _default[name] = _BACKENDS[name]()
        return _default[name]


def execute(spec: ExecutionSpec, backend: PortableBackend | str | None = None
            ) -> ExecutionOutcome:
    if not isinstance(backend, PortableBackend):
        backend = get_backend(backend)
    return backend.execute(spec)


def backend_capabilities(backend: PortableBackend | str | None = None) -> IsolationReport:
    if not isinstance(backend, PortableBackend):
        backend = get_backend(backend)
    return backend.capabilities()
