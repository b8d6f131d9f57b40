"""Language-neutral policy bridge: UTF-8 JSON objects, one per line.

Message types
-------------
meta   {"type": "meta", "plant", "n", "m", "obs_dim", "grid", "tau_min",
        "tau_max", "u_max", "k"}               engine -> peer, once
reset  {"type": "reset", "ep": int, "seed": int}          episode start
obs    {"type": "obs", "ep": int, "k": int, "x": [...], "msi": f, "b": 0|1,
        ...}                                              engine -> peer
act    {"type": "act", "u": [...], "tau_idx": int}        peer -> engine
close  {"type": "close"}                                  either direction
error  {"type": "error", "message": str}                  engine -> peer

Obs messages after the first decision additionally carry "reward",
"reward_terms", "terminated", and "info" for the transition that produced
them; the terminal obs also carries the episode summary. The engine never
sends two obs without an intervening act.
"""

from __future__ import annotations

import json
import os
import select
import socket
import subprocess
import time

from .errors import ProtocolFault

MESSAGE_TYPES = ("meta", "reset", "obs", "act", "close", "error")


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolFault(f"malformed bridge message: {exc}") from exc
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise ProtocolFault(f"unknown bridge message: {line[:200]!r}")
    return msg


class _FdLineReader:
    """Buffered line reader over a raw file descriptor with select timeouts."""

    def __init__(self, fd: int):
        self._fd = fd
        self._buf = b""
        self._eof = False

    def readline(self, timeout: float | None = None) -> bytes | None:
        deadline = None if timeout is None else time.monotonic() + timeout
        while b"\n" not in self._buf:
            if self._eof:
                return None
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ProtocolFault("bridge peer timed out")
                ready, _, _ = select.select([self._fd], [], [], remaining)
                if not ready:
                    raise ProtocolFault("bridge peer timed out")
            chunk = os.read(self._fd, 65536)
            if not chunk:
                self._eof = True
                return None
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line


class PipeTransport:
    """Line transport over an (input fd, output file) pair."""

    def __init__(self, read_fd: int, write_file):
        self._reader = _FdLineReader(read_fd)
        self._write = write_file

    def send(self, msg: dict) -> None:
        self._write.write(encode(msg))
        self._write.flush()

    def recv(self, timeout: float | None = None) -> dict | None:
        line = self._reader.readline(timeout)
        if line is None:
            return None
        return decode(line)

    def close(self) -> None:
        try:
            self._write.close()
        except (OSError, ValueError):
            pass


class ChildProcessTransport(PipeTransport):
    """Spawn a peer process and talk over its stdio."""

    def __init__(self, cmd: list[str]):
        self.proc = subprocess.Popen(
            cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )
        super().__init__(self.proc.stdout.fileno(), self.proc.stdin)

    def close(self) -> None:
        super().close()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class SocketTransport:
    """Line transport over a connected TCP socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._reader = _FdLineReader(sock.fileno())

    @classmethod
    def connect(cls, host: str, port: int) -> SocketTransport:
        return cls(socket.create_connection((host, port)))

    def send(self, msg: dict) -> None:
        self._sock.sendall(encode(msg))

    def recv(self, timeout: float | None = None) -> dict | None:
        line = self._reader.readline(timeout)
        if line is None:
            return None
        return decode(line)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def make_meta(setup) -> dict:
    """Metadata message describing the served environment."""
    return {
        "type": "meta",
        "plant": setup.plant_id,
        "n": setup.model.n,
        "m": setup.model.m,
        "obs_dim": setup.model.n + 2,
        "grid": [float(v) for v in setup.grid.values],
        "tau_min": setup.grid.tau_min,
        "tau_max": setup.grid.tau_max,
        "u_max": [float(v) for v in setup.lin.u_max],
        "k": setup.cert.k.tolist(),
    }
