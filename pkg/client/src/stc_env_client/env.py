"""Gym-style wrapper around a served control environment.

`RemoteEnv` spawns (or connects to) an environment server speaking the
JSON-lines bridge protocol and exposes the usual reset/step surface. The
client computes nothing physical: dynamics, shielding, and rewards all
live server-side; this side only frames messages and tracks the
obs/action ordering so a desync is impossible to miss.

Wire schema (UTF-8, one JSON object per line):
    meta   {"type": "meta", "plant", "n", "m", "obs_dim", "grid",
            "tau_min", "tau_max", "u_max", "k"}
    reset  {"type": "reset", "ep": int, "seed": int}
    obs    {"type": "obs", "ep", "k", "x", "msi", "b"[, "reward",
            "reward_terms", "terminated", "info"]}
    act    {"type": "act", "u": [...], "tau_idx": int}
    close  {"type": "close"}
    error  {"type": "error", "message"}
"""

from __future__ import annotations

import json
import socket
import subprocess
import sys

import numpy as np


class BridgeError(RuntimeError):
    """The server reported a protocol fault for this episode."""


class BridgeConnectionError(ConnectionError):
    """The transport died or was used after close."""


class RemoteEnv:
    """One episode stream against a served environment."""

    def __init__(self, config_path=None, *, server_cmd=None, connect=None):
        """Spawn `stclab serve-env config_path` over stdio, run a custom
        `server_cmd`, or connect to a (host, port) socket server."""
        self._proc = None
        self._sock = None
        if connect is not None:
            self._sock = socket.create_connection(connect)
            self._rfile = self._sock.makefile("rb")
            self._wfile = self._sock.makefile("wb")
        else:
            if server_cmd is None:
                if config_path is None:
                    raise ValueError("config_path is required to spawn a server")
                server_cmd = [sys.executable, "-m", "stclab.cli", "serve-env", str(config_path)]
            self._proc = subprocess.Popen(
                server_cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
            self._rfile = self._proc.stdout
            self._wfile = self._proc.stdin
        self._closed = False
        self._awaiting_obs = False  # protocol ordering guard
        self._episode = -1
        self._terminated = True
        self.meta = self._recv_expect("meta")

    # -- transport -------------------------------------------------------

    def _send(self, msg: dict) -> None:
        if self._closed:
            raise BridgeConnectionError("connection is closed")
        try:
            self._wfile.write((json.dumps(msg) + "\n").encode("utf-8"))
            self._wfile.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeConnectionError(str(exc)) from exc

    def _recv(self) -> dict:
        line = self._rfile.readline()
        if not line:
            raise BridgeConnectionError("server closed the stream")
        return json.loads(line)

    def _recv_expect(self, kind: str) -> dict:
        msg = self._recv()
        if msg.get("type") == "error":
            self._terminated = True
            self._awaiting_obs = False
            raise BridgeError(msg.get("message", "server protocol fault"))
        if msg.get("type") != kind:
            raise BridgeError(f"expected {kind!r}, got {msg.get('type')!r}")
        return msg

    # -- environment surface ----------------------------------------------

    @property
    def state_dim(self) -> int:
        return int(self.meta["n"])

    @property
    def action_grid(self) -> list[float]:
        return list(self.meta["grid"])

    @property
    def u_max(self) -> np.ndarray:
        return np.asarray(self.meta["u_max"], dtype=float)

    @property
    def gain(self) -> np.ndarray:
        """Backup feedback gain served in the metadata."""
        return np.asarray(self.meta["k"], dtype=float)

    @staticmethod
    def _obs_vector(msg: dict) -> np.ndarray:
        return np.asarray(list(msg["x"]) + [msg["msi"], float(msg["b"])], dtype=float)

    def reset(self, seed: int) -> np.ndarray:
        """Start a new episode; returns the first observation vector."""
        if self._awaiting_obs:
            raise BridgeError("reset while an action round-trip is pending")
        self._episode += 1
        self._send({"type": "reset", "ep": self._episode, "seed": int(seed)})
        msg = self._recv_expect("obs")
        if msg["ep"] != self._episode or msg["k"] != 0:
            raise BridgeError(f"desynchronized reset reply: {msg['ep']}/{msg['k']}")
        self._terminated = False
        self._k = 0
        return self._obs_vector(msg)

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        """One decision: action = (u values, tau grid index).

        Returns (obs, reward, terminated, info); info carries the reward
        components and shield flags of the executed transition, plus the
        episode summary on the terminal step.
        """
        if self._terminated:
            raise BridgeError("step after episode end; call reset first")
        u, tau_idx = action
        u = np.atleast_1d(np.asarray(u, dtype=float))
        self._awaiting_obs = True
        self._send({
            "type": "act",
            "u": [float(v) for v in u],
            "tau_idx": int(tau_idx),
        })
        msg = self._recv_expect("obs")
        self._awaiting_obs = False
        self._k += 1
        if msg["ep"] != self._episode or msg["k"] != self._k:
            raise BridgeError(f"desynchronized step reply: {msg['ep']}/{msg['k']}")
        info = dict(msg.get("info", {}))
        info["reward_terms"] = msg.get("reward_terms", {})
        self._terminated = bool(msg.get("terminated", False))
        return self._obs_vector(msg), float(msg["reward"]), self._terminated, info

    def close(self) -> None:
        if self._closed:
            return
        try:
            self._send({"type": "close"})
        except BridgeConnectionError:
            pass
        self._closed = True
        if self._proc is not None:
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._sock is not None:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
