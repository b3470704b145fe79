"""Tool dispatch server speaking newline-delimited JSON.

Each request line is an envelope ``{"scene_id": ..., "call": <ToolCall>}``;
each response line is a ``ToolResponse`` object. Within a connection requests
are answered strictly in order.
"""
from __future__ import annotations

import json
import logging
import socket
import socketserver
import sys
import threading
from pathlib import Path
from typing import IO, Iterable

from .camera import DomainError
from .protocol import TOOL_CAMERA, ToolCall, ToolResponse, dumps
from .scene import SceneError, SceneRecord, load_scene
from .tools import (
    DepthQuery,
    MaskProvider,
    ProviderError,
    SamplingConfig,
    camera_intrinsic_tool,
    depth_sampling_tool,
)

log = logging.getLogger(__name__)


class SceneCache:
    def __init__(self, root: Path):
        self.root = Path(root)
        self._scenes: dict[str, SceneRecord] = {}
        self._lock = threading.Lock()

    def get(self, scene_id: str) -> SceneRecord | None:
        if not scene_id or "/" in scene_id or "\\" in scene_id or scene_id in (".", ".."):
            return None
        with self._lock:
            if scene_id in self._scenes:
                return self._scenes[scene_id]
        path = self.root / scene_id
        if not (path / "scene.json").is_file():
            return None
        rec = load_scene(path)
        with self._lock:
            return self._scenes.setdefault(scene_id, rec)


class ToolDispatcher:
    def __init__(self, root: Path, cfg: SamplingConfig = SamplingConfig(), masks: MaskProvider | None = None):
        self.scenes = SceneCache(root)
        self.cfg = cfg
        self.masks = masks

    def handle_line(self, line: str) -> ToolResponse:
        try:
            env = json.loads(line)
        except ValueError as exc:
            return ToolResponse.failure(None, "bad_request", f"envelope is not JSON: {exc}")
        if not isinstance(env, dict) or not isinstance(env.get("call"), dict):
            return ToolResponse.failure(None, "bad_request", "envelope needs 'scene_id' and 'call'")
        raw = env["call"]
        call_id = raw.get("call_id") if isinstance(raw.get("call_id"), str) else None
        if call_id is None:
            return ToolResponse.failure(None, "bad_request", "call needs a string call_id")
        try:
            call = ToolCall.from_json(raw)
        except DomainError as exc:
            kind = "unknown_tool" if "unknown tool_name" in str(exc) else "invalid_arguments"
            return ToolResponse.failure(call_id, kind, str(exc))
        try:
            scene = self.scenes.get(str(env.get("scene_id", "")))
        except SceneError as exc:
            return ToolResponse.failure(call_id, "scene_error", str(exc))
        if scene is None:
            return ToolResponse.failure(call_id, "unknown_scene", f"no scene {env.get('scene_id')!r}")
        return self.dispatch(scene, call)

    def dispatch(self, scene: SceneRecord, call: ToolCall) -> ToolResponse:
        try:
            if call.tool_name == TOOL_CAMERA:
                return ToolResponse(call.call_id, result=camera_intrinsic_tool(scene).to_dict())
            queries = [DepthQuery.from_dict(q) for q in call.arguments["queries"]]
            samples = depth_sampling_tool(scene, queries, self.cfg, masks=self.masks)
            return ToolResponse(call.call_id, result={"samples": [[s.to_list() for s in qs] for qs in samples]})
        except ProviderError as exc:
            return ToolResponse.failure(call.call_id, "provider_error", str(exc))
        except DomainError as exc:
            return ToolResponse.failure(call.call_id, "domain_error", str(exc))


def serve_stream(dispatcher: ToolDispatcher, rfile: IO[str], wfile: IO[str]) -> int:
    """Answer every line of ``rfile`` on ``wfile``; returns the number of requests."""
    count = 0
    for line in rfile:
        if not line.strip():
            continue
        resp = dispatcher.handle_line(line)
        wfile.write(dumps(resp.to_json()) + "\n")
        wfile.flush()
        count += 1
    return count


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        dispatcher: ToolDispatcher = self.server.dispatcher  # type: ignore[attr-defined]
        try:
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace")
                if not line.strip():
                    continue
                resp = dispatcher.handle_line(line)
                self.wfile.write((dumps(resp.to_json()) + "\n").encode("utf-8"))
                self.wfile.flush()
        except OSError as exc:
            log.warning("connection %s closed: %s", self.client_address, exc)


class ToolServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], dispatcher: ToolDispatcher):
        super().__init__(address, _Handler)
        self.dispatcher = dispatcher


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def serve(root: Path, tcp: str | None = None, cfg: SamplingConfig = SamplingConfig()) -> None:
    """Run until EOF (stdio) or until interrupted (TCP)."""
    dispatcher = ToolDispatcher(root, cfg)
    if tcp is None:
        serve_stream(dispatcher, sys.stdin, sys.stdout)
        return
    with ToolServer(parse_address(tcp), dispatcher) as server:
        host, port = server.server_address[:2]
        log.info("serving tools on %s:%d", host, port)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


class ToolClient:
    """Blocking client for a :class:`ToolServer`."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._r = self.sock.makefile("r", encoding="utf-8", newline="\n")
        self._w = self.sock.makefile("w", encoding="utf-8", newline="\n")

    def close(self) -> None:
        for f in (self._r, self._w):
            f.close()
        self.sock.close()

    def __enter__(self) -> ToolClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def send(self, scene_id: str, call: ToolCall) -> None:
        self._w.write(dumps({"scene_id": scene_id, "call": call.to_json()}) + "\n")

    def receive(self) -> ToolResponse:
        self._w.flush()
        line = self._r.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return ToolResponse.from_json(json.loads(line))

    def call(self, scene_id: str, call: ToolCall) -> ToolResponse:
        self.send(scene_id, call)
        return self.receive()

    def pipeline(self, requests: Iterable[tuple[str, ToolCall]]) -> list[ToolResponse]:
        n = 0
        for sid, call in requests:
            self.send(sid, call)
            n += 1
        self._w.flush()
        return [self.receive() for _ in range(n)]
