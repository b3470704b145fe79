"""Multi-turn transcript grammar: think / tool_call / tool_response / answer blocks.

Grammar (frozen):

* blocks are ``<think>TEXT</think>``, ``<tool_call>JSON</tool_call>``,
  ``<tool_response>JSON</tool_response>`` and ``<answer>JSON</answer>``;
  tags are exact lowercase;
* think text is kept verbatim and may not contain ``</think>``;
* only whitespace may appear between blocks.

The canonical serialization writes compact JSON with a fixed key order and a
single newline between blocks.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Union

from .camera import DomainError
from .geometry import Box2D, Box3D

TOOL_CAMERA = "camera_intrinsics"
TOOL_DEPTH = "depth_sampling"
TOOL_NAMES = (TOOL_CAMERA, TOOL_DEPTH)

_TAGS = ("think", "tool_call", "tool_response", "answer")
_TAG_RE = re.compile(r"<(/?)([A-Za-z_][A-Za-z0-9_\-]*)>")


class ProtocolError(ValueError):
    """Grammar violation; ``offset`` is a byte offset into the UTF-8 text."""

    def __init__(self, kind: str, offset: int, message: str):
        super().__init__(f"{kind} at byte {offset}: {message}")
        self.kind = kind
        self.offset = offset


@dataclass(frozen=True)
class Think:
    text: str


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    tool_name: str
    arguments: dict

    def __post_init__(self) -> None:
        validate_call(self.tool_name, self.arguments)

    def to_json(self) -> dict:
        return {"call_id": self.call_id, "tool_name": self.tool_name, "arguments": self.arguments}

    @classmethod
    def from_json(cls, d: Any) -> ToolCall:
        if not isinstance(d, dict) or not isinstance(d.get("call_id"), str) or "tool_name" not in d:
            raise DomainError("tool_call needs string call_id and tool_name")
        return cls(d["call_id"], d["tool_name"], d.get("arguments", {}))


@dataclass(frozen=True)
class ToolResponse:
    call_id: str | None
    result: Any = None
    error: dict | None = None

    def __post_init__(self) -> None:
        if (self.result is None) == (self.error is None):
            raise DomainError("tool_response needs exactly one of result / error")
        if self.error is not None and not (
            isinstance(self.error, dict) and isinstance(self.error.get("kind"), str)
        ):
            raise DomainError("tool_response error must be an object with a string 'kind'")

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        if self.error is not None:
            return {"call_id": self.call_id, "error": self.error}
        return {"call_id": self.call_id, "result": self.result}

    @classmethod
    def from_json(cls, d: Any) -> ToolResponse:
        if not isinstance(d, dict) or "call_id" not in d:
            raise DomainError("tool_response needs a call_id")
        cid = d["call_id"]
        if cid is not None and not isinstance(cid, str):
            raise DomainError("call_id must be a string")
        return cls(cid, d.get("result"), d.get("error"))

    @classmethod
    def failure(cls, call_id: str | None, kind: str, message: str) -> ToolResponse:
        return cls(call_id, error={"kind": kind, "message": message})


@dataclass(frozen=True)
class AnswerBox:
    box: Box3D
    category: str | None = None
    instance_id: int | None = None

    def to_json(self) -> dict:
        d: dict[str, Any] = {}
        if self.category is not None:
            d["category"] = self.category
        if self.instance_id is not None:
            d["instance_id"] = self.instance_id
        d["bbox_3d"] = self.box.to_list()
        return d

    @classmethod
    def from_json(cls, d: Any) -> AnswerBox:
        if isinstance(d, list):
            return cls(Box3D.from_list(d))
        if not isinstance(d, dict) or "bbox_3d" not in d:
            raise DomainError("answer entries must be 9-element arrays or objects with 'bbox_3d'")
        cat = d.get("category")
        iid = d.get("instance_id")
        if cat is not None and not isinstance(cat, str):
            raise DomainError("answer category must be a string")
        if iid is not None and (isinstance(iid, bool) or not isinstance(iid, int)):
            raise DomainError("answer instance_id must be an integer")
        return cls(Box3D.from_list(d["bbox_3d"]), cat, iid)


@dataclass(frozen=True)
class Answer:
    boxes: tuple[AnswerBox, ...]

    def to_json(self) -> list:
        return [b.to_json() for b in self.boxes]

    @classmethod
    def from_json(cls, d: Any) -> Answer:
        if not isinstance(d, list):
            raise DomainError("answer payload must be a JSON list")
        return cls(tuple(AnswerBox.from_json(x) for x in d))


Block = Union[Think, ToolCall, ToolResponse, Answer]


def validate_call(tool_name: str, arguments: Any) -> None:
    if tool_name not in TOOL_NAMES:
        raise DomainError(f"unknown tool_name {tool_name!r}")
    if not isinstance(arguments, dict):
        raise DomainError("arguments must be an object")
    if tool_name == TOOL_CAMERA:
        if arguments:
            raise DomainError(f"{TOOL_CAMERA} takes no arguments")
        return
    if set(arguments) != {"queries"} or not isinstance(arguments["queries"], list):
        raise DomainError(f"{TOOL_DEPTH} takes exactly one argument 'queries' (a list)")
    for q in arguments["queries"]:
        if not isinstance(q, dict) or set(q) != {"category", "bbox_2d"}:
            raise DomainError("each query needs exactly 'category' and 'bbox_2d'")
        if not isinstance(q["category"], str) or not q["category"]:
            raise DomainError("query category must be a non-empty string")
        bb = q["bbox_2d"]
        if not isinstance(bb, list) or any(isinstance(x, bool) or not isinstance(x, int) for x in bb):
            raise DomainError("bbox_2d must be a list of 4 integers")
        Box2D.from_list(bb)


def dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not JSON")


_decoder = json.JSONDecoder(parse_constant=_reject_constant)


def serialize_block(b: Block) -> str:
    if isinstance(b, Think):
        if "</think>" in b.text:
            raise DomainError("think text may not contain '</think>'")
        return f"<think>{b.text}</think>"
    if isinstance(b, ToolCall):
        return f"<tool_call>{dumps(b.to_json())}</tool_call>"
    if isinstance(b, ToolResponse):
        return f"<tool_response>{dumps(b.to_json())}</tool_response>"
    if isinstance(b, Answer):
        return f"<answer>{dumps(b.to_json())}</answer>"
    raise TypeError(f"not a block: {b!r}")


def serialize_blocks(blocks) -> str:
    return "\n".join(serialize_block(b) for b in blocks)


def _boff(text: str, i: int) -> int:
    return len(text[:i].encode("utf-8"))


def _build(tag: str, payload: Any) -> Block:
    if tag == "tool_call":
        return ToolCall.from_json(payload)
    if tag == "tool_response":
        return ToolResponse.from_json(payload)
    return Answer.from_json(payload)


def parse_turn(text: str) -> list[Block]:
    """Parse a transcript fragment into typed blocks, strictly."""
    blocks: list[Block] = []
    i, n = 0, len(text)
    while True:
        while i < n and text[i].isspace():
            i += 1
        if i >= n:
            return blocks
        m = _TAG_RE.match(text, i)
        if m is None:
            raise ProtocolError("stray_text", _boff(text, i), f"unexpected text {text[i:i + 20]!r}")
        closing, tag = m.group(1), m.group(2)
        if closing:
            raise ProtocolError("unbalanced_tag", _boff(text, i), f"closing tag </{tag}> without opener")
        if tag not in _TAGS:
            raise ProtocolError("unknown_tag", _boff(text, i), f"unknown tag <{tag}>")
        start = m.end()
        end_tag = f"</{tag}>"
        if tag == "think":
            j = text.find(end_tag, start)
            if j < 0:
                raise ProtocolError("unbalanced_tag", _boff(text, i), "<think> is never closed")
            blocks.append(Think(text[start:j]))
            i = j + len(end_tag)
            continue
        p = start
        while p < n and text[p].isspace():
            p += 1
        try:
            payload, q = _decoder.raw_decode(text, p)
        except ValueError as exc:
            raise ProtocolError("malformed_payload", _boff(text, p), f"<{tag}> payload is not JSON: {exc}") from None
        while q < n and text[q].isspace():
            q += 1
        if not text.startswith(end_tag, q):
            raise ProtocolError("unbalanced_tag", _boff(text, q), f"expected {end_tag}")
        try:
            blocks.append(_build(tag, payload))
        except (DomainError, TypeError, KeyError) as exc:
            kind = "unknown_tool" if "unknown tool_name" in str(exc) else "invalid_block"
            raise ProtocolError(kind, _boff(text, p), str(exc)) from None
        i = q + len(end_tag)
