"""Environment server: hosts episodes for external agents over the bridge.

The peer drives the lifecycle: it sends reset to start an episode and one
act per obs. The server answers every reset/act with exactly one obs, so
the stream never carries two obs without an intervening act. Protocol
faults abort the active episode (error message + log line) and the server
keeps accepting resets.
"""

from __future__ import annotations

import socket
import sys

import numpy as np

from .bridge import PipeTransport, SocketTransport, make_meta
from .config import ExperimentConfig
from .engine import EpisodeSession
from .errors import ProtocolFault


def _obs_message(session: EpisodeSession, ep: int, k: int, rec=None) -> dict:
    obs = session.observation()
    msg = {
        "type": "obs",
        "ep": ep,
        "k": k,
        "x": [float(v) for v in obs.x],
        "msi": obs.msi,
        "b": obs.b,
    }
    if rec is not None:
        msg["reward"] = rec.reward.total
        msg["reward_terms"] = {
            "stability": rec.reward.stability,
            "communication": rec.reward.communication,
            "safety": rec.reward.safety,
            "terminal": rec.reward.terminal,
        }
        msg["terminated"] = session.done
        info = {
            "tau_proposed": rec.tau_proposed,
            "tau_executed": rec.tau_executed,
            "u_executed": [float(v) for v in rec.u_executed],
            "fired": rec.fired,
            "predicate": rec.predicate,
            "hard_violation": rec.hard_violation,
            "v_before": rec.v_before,
            "v_after": rec.v_after,
        }
        if session.done:
            info["cause"] = session.cause
            info["episode"] = session.finalize().summary()
        msg["info"] = info
    return msg


def serve_stream(config: ExperimentConfig, transport, log=sys.stderr) -> None:
    """Serve one episode stream until a close message or EOF."""
    setup = config.build_setup()
    transport.send(make_meta(setup))
    session: EpisodeSession | None = None
    ep = 0
    k = 0
    while True:
        msg = transport.recv()
        if msg is None or msg["type"] == "close":
            return
        if msg["type"] == "reset":
            ep = int(msg.get("ep", 0))
            seed = int(msg.get("seed", 0))
            session = EpisodeSession(
                setup.spec, np.random.default_rng(seed), episode=ep, seed=seed
            )
            k = 0
            transport.send(_obs_message(session, ep, k))
        elif msg["type"] == "act":
            if session is None or session.done:
                print("bridge: act without an active episode", file=log)
                transport.send({"type": "error", "message": "no active episode"})
                continue
            try:
                u = [float(v) for v in msg["u"]]
                tau_idx = int(msg["tau_idx"])
                if not 0 <= tau_idx < session.grid.size:
                    raise ProtocolFault(f"tau index {tau_idx} outside the grid")
                rec = session.step(np.asarray(u), float(session.grid.values[tau_idx]))
            except (ProtocolFault, KeyError, TypeError, ValueError) as exc:
                print(f"bridge: episode {ep} aborted: {exc}", file=log)
                session.abort(str(exc))
                transport.send({"type": "error", "message": str(exc)})
                session = None
                continue
            k += 1
            transport.send(_obs_message(session, ep, k, rec))
        else:
            print(f"bridge: unexpected message {msg['type']!r}", file=log)
            transport.send({"type": "error", "message": f"unexpected {msg['type']!r}"})


def serve_stdio(config: ExperimentConfig) -> None:
    transport = PipeTransport(sys.stdin.fileno(), sys.stdout.buffer)
    serve_stream(config, transport)


def serve_socket(config: ExperimentConfig, port: int, host: str = "127.0.0.1",
                 max_connections: int | None = None, log=sys.stderr) -> None:
    """Accept connections sequentially, one episode stream per connection."""
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((host, port))
    listener.listen(1)
    bound = listener.getsockname()
    print(f"serving on {bound[0]}:{bound[1]}", file=log, flush=True)
    served = 0
    try:
        while max_connections is None or served < max_connections:
            conn, _ = listener.accept()
            transport = SocketTransport(conn)
            try:
                serve_stream(config, transport, log=log)
            except ProtocolFault as exc:
                print(f"bridge: connection dropped: {exc}", file=log)
            finally:
                transport.close()
            served += 1
    finally:
        listener.close()
