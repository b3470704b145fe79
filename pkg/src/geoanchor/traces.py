"""Multi-turn reasoning traces: generation from scene bundles and verification.

Think text mixes prose with *equation lines*, one per line::

    NAME = VALUE                 (declared quantity)
    NAME = EXPR = VALUE          (derived quantity)

EXPR uses only reals, ``+``, ``−`` (U+2212), ``×``, ``/``, parentheses and
``round(...)``; a leading ``-`` is part of a number. Prose lines never take
the ``NAME = ...`` form. Display precision: pixels as integers (2D centers
may be half-integers), intrinsics and meters to 2 decimals, radians to 3.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .camera import CameraIntrinsics, absolute_to_normalized, back_project, normalized_to_absolute
from .geometry import Box2D, Box3D
from .numfmt import (
    INTRINSIC_DECIMALS,
    METER_DECIMALS,
    RADIAN_DECIMALS,
    fmt_exact_half,
    fmt_fixed,
    quantize,
)
from .protocol import (
    TOOL_CAMERA,
    TOOL_DEPTH,
    Answer,
    AnswerBox,
    ProtocolError,
    Think,
    ToolCall,
    ToolResponse,
    parse_turn,
    serialize_blocks,
)
from .reasoner import Anchor, GTOracleEstimator, mean_depth, run_pipeline
from .scene import NotVisibleError, SceneRecord, project_box_to_2d
from .tools import DepthQuery, SamplingConfig, depth_sampling_tool

log = logging.getLogger(__name__)

FORMAT_VERSION = "geoanchor-trace/1"
TRACE_DEPTH_DECIMALS = METER_DECIMALS
TASKS = ("detection", "grounding")
MINUS = "−"
TIMES = "×"

SYSTEM_PROMPT = (
    "You are a spatial reasoning agent working from a single RGB image. "
    "Tools: camera_intrinsics() returns the focal lengths and principal point {fx, fy, cx, cy} in pixels; "
    "depth_sampling(queries=[{category, bbox_2d}]) returns up to N metric depth triplets [u, v, Z] "
    "inside each object's mask. Camera frame: +X right, +Y down, +Z forward, meters. "
    "Reason step by step, substitute tool outputs into the pinhole back-projection "
    "X = (u_c - c_x) * Z / f_x, Y = (v_c - c_y) * Z / f_y, and answer with a JSON list of "
    "9-DoF boxes [X, Y, Z, l, w, h, yaw, pitch, roll]."
)


class TraceBuildError(RuntimeError):
    pass


@dataclass(frozen=True)
class Turn:
    role: str
    content: str


@dataclass(frozen=True)
class ReasoningTrace:
    scene_id: str
    task: str
    targets: tuple[int, ...]
    turns: tuple[Turn, ...]
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "scene_id": self.scene_id,
            "task": self.task,
            "targets": list(self.targets),
            "provenance": self.provenance,
            "turns": [{"role": t.role, "content": t.content} for t in self.turns],
        }

    def to_line(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, d: dict) -> ReasoningTrace:
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported trace format {d.get('format_version')!r}")
        return cls(
            d["scene_id"],
            d["task"],
            tuple(d.get("targets", [])),
            tuple(Turn(t["role"], t["content"]) for t in d["turns"]),
            d.get("provenance", {}),
        )


# -- rendering helpers -------------------------------------------------------

def _m(x: float) -> str:
    return fmt_fixed(x, METER_DECIMALS)


def _k(x: float) -> str:
    return fmt_fixed(x, INTRINSIC_DECIMALS)


def _rad(x: float) -> str:
    return fmt_fixed(x, RADIAN_DECIMALS)


def _px(x: float) -> str:
    return fmt_exact_half(x)


def _eq2_line(name: str, norm: int, size: int, value: int) -> str:
    return f"{name} = round({norm} / 1000 {TIMES} {size}) = {value}"


def _center_line(name: str, lo: int, hi: int, value: float) -> str:
    return f"{name} = ({lo} + {hi}) / 2 = {_px(value)}"


def _mean_line(name: str, zs: Sequence[float], value: float) -> str:
    inner = " + ".join(_m(z) for z in zs)
    return f"{name} = ({inner}) / {len(zs)} = {_m(value)}"


def _bp_line(name: str, pix: float, c: float, z: float, f: float, value: float) -> str:
    return f"{name} = ({_px(pix)} {MINUS} {_k(c)}) {TIMES} {_m(z)} / {_k(f)} = {_m(value)}"


def _provenance(cfg: SamplingConfig) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "sampling": cfg.to_dict(),
        "depth_decimals": TRACE_DEPTH_DECIMALS,
        "rounding": "half-away-from-zero",
        "display_decimals": {"pixel": 0, "intrinsic": INTRINSIC_DECIMALS, "meter": METER_DECIMALS, "radian": RADIAN_DECIMALS},
    }


def _user_prompt(scene: SceneRecord, task: str, labels: list[str], expression: str | None) -> str:
    head = f"Image: {scene.meta.width}x{scene.meta.height} pixels.\n"
    if task == "detection":
        cats = ", ".join(sorted(set(labels)))
        return head + f"Task: detect every object of these categories and output its 9-DoF 3D bounding box: {cats}."
    return head + f'Task: locate the object referred to as "{expression}" and output its 9-DoF 3D bounding box.'


STEP1 = ("Step 1: locate the targets on the image plane in normalized [0, 1000] coordinates, "
         "then convert them to absolute pixels.")
STEP2 = "Step 2: retrieve the camera intrinsics."
INTRINSICS_INTRO = "The intrinsics become formula variables:"
STEP4 = ("Step 4: compute each 2D center, average the sampled depths and substitute them "
         "into the pinhole back-projection.")
STEP5 = "Step 5: anchor each 9-DoF box on its computed center and estimate size and orientation."


def _step3(min_depth: float) -> str:
    return f"Step 3: sample metric depths inside each target's mask; depths below {min_depth:g} m are discarded."


def _target(t: int, label: str) -> str:
    return f"Target {t}: {label}"


def _no_depth(t: int) -> str:
    return f"No valid depth sample remains for target {t}; it is left out of the answer."


def _prose_lines(labels: Sequence[str], live: Sequence[bool], min_depth: float) -> list[str]:
    """Every non-equation line of a trace's think text, in order."""
    out = [STEP1] + [_target(t, a) for t, a in enumerate(labels, start=1)]
    out += [STEP2, INTRINSICS_INTRO, _step3(min_depth), STEP4]
    for t, (a, ok) in enumerate(zip(labels, live), start=1):
        out.append(_target(t, a))
        if not ok:
            out.append(_no_depth(t))
    out.append(STEP5)
    out += [_target(t, a) for t, (a, ok) in enumerate(zip(labels, live), start=1) if ok]
    return out


def build_trace(
    scene: SceneRecord,
    task: str,
    targets: Sequence[int] | None = None,
    cfg: SamplingConfig = SamplingConfig(),
) -> ReasoningTrace:
    """Render the five-step chain for ``targets`` (instance ids) as a trace.

    For grounding, ``targets`` holds a single instance id that some expression
    refers to; by default the first expression of the scene is used.
    """
    if task not in TASKS:
        raise TraceBuildError(f"unknown task {task!r}")
    expression = None
    if task == "grounding":
        if not scene.expressions:
            raise TraceBuildError(f"{scene.scene_id}: no referring expression for grounding")
        if targets:
            if len(targets) != 1:
                raise TraceBuildError("grounding traces take exactly one target")
            expr = next((e for e in scene.expressions if e.instance_id == targets[0]), None)
            if expr is None:
                raise TraceBuildError(f"{scene.scene_id}: no expression refers to instance {targets[0]}")
        else:
            expr = scene.expressions[0]
        expression = expr.text
        targets = [expr.instance_id]
    elif targets is None:
        targets = [i.instance_id for i in scene.instances]

    anchors = []
    for iid in targets:
        try:
            inst = scene.instance(iid)
        except KeyError:
            raise TraceBuildError(f"{scene.scene_id}: no instance {iid}") from None
        try:
            b2 = project_box_to_2d(inst.box3d, scene.intrinsics, scene.meta)
        except NotVisibleError:
            log.warning("%s: instance %d is not visible, skipped", scene.scene_id, iid)
            continue
        n0 = absolute_to_normalized(b2.u_min, b2.v_min, scene.meta)
        n1 = absolute_to_normalized(b2.u_max, b2.v_max, scene.meta)
        anchors.append(Anchor(inst.category, norm_box=(*n0, *n1), instance_id=iid))
    if not anchors:
        raise TraceBuildError(f"{scene.scene_id}: no visible target")

    try:
        _, records = run_pipeline(scene, anchors, cfg, GTOracleEstimator(), depth_decimals=TRACE_DEPTH_DECIMALS)
    except Exception as exc:
        raise TraceBuildError(f"{scene.scene_id}: tool failure: {exc}") from exc
    K = scene.intrinsics
    W, H = scene.meta.width, scene.meta.height

    # turn 1: 2D grounding and Eq. 2, then the intrinsics call
    lines = [STEP1]
    for t, (a, r) in enumerate(zip(anchors, records), start=1):
        lines.append(_target(t, a.label))
        nu0, nv0, nu1, nv1 = a.norm_box
        lines += [f"u_min_norm_{t} = {nu0}", f"v_min_norm_{t} = {nv0}", f"u_max_norm_{t} = {nu1}", f"v_max_norm_{t} = {nv1}"]
        b = r.box2d
        lines += [
            _eq2_line(f"u_min_{t}", nu0, W, b.u_min),
            _eq2_line(f"v_min_{t}", nv0, H, b.v_min),
            _eq2_line(f"u_max_{t}", nu1, W, b.u_max),
            _eq2_line(f"v_max_{t}", nv1, H, b.v_max),
        ]
    lines.append(STEP2)
    call1 = ToolCall("call_1", TOOL_CAMERA, {})
    resp1 = ToolResponse("call_1", result=K.to_dict())

    # turn 2: intrinsics as variables, then the depth call
    lines2 = [
        INTRINSICS_INTRO,
        f"f_x = {_k(K.fx)}",
        f"f_y = {_k(K.fy)}",
        f"c_x = {_k(K.cx)}",
        f"c_y = {_k(K.cy)}",
        _step3(cfg.min_depth),
    ]
    queries = [DepthQuery(a.label, r.box2d).to_dict() for a, r in zip(anchors, records)]
    call2 = ToolCall("call_2", TOOL_DEPTH, {"queries": queries})
    resp2 = ToolResponse("call_2", result={"samples": [[s.to_list() for s in r.samples] for r in records]})

    # turn 3: Eq. 3, mean depth, Eq. 4, Step 5 and the answer
    lines3 = [STEP4]
    answer = []
    for t, (a, r) in enumerate(zip(anchors, records), start=1):
        b = r.box2d
        lines3.append(_target(t, a.label))
        lines3.append(_center_line(f"u_c_{t}", b.u_min, b.u_max, r.u_c))
        lines3.append(_center_line(f"v_c_{t}", b.v_min, b.v_max, r.v_c))
        if r.no_depth:
            lines3.append(_no_depth(t))
            continue
        zs = [s.z for s in r.samples]
        c = r.center_hat
        lines3.append(_mean_line(f"Z_bar_{t}", zs, r.z_bar))
        lines3.append(_bp_line(f"X_{t}", r.u_c, K.cx, r.z_bar, K.fx, c.x))
        lines3.append(_bp_line(f"Y_{t}", r.v_c, K.cy, r.z_bar, K.fy, c.y))
        lines3.append(f"Z_{t} = {_m(c.z)}")
    lines3.append(STEP5)
    for t, (a, r) in enumerate(zip(anchors, records), start=1):
        if r.no_depth:
            continue
        e = r.estimate
        lines3.append(_target(t, a.label))
        lines3 += [f"l_{t} = {_m(e.l)}", f"w_{t} = {_m(e.w)}", f"h_{t} = {_m(e.h)}"]
        lines3 += [f"yaw_{t} = {_rad(e.yaw)}", f"pitch_{t} = {_rad(e.pitch)}", f"roll_{t} = {_rad(e.roll)}"]
        c = r.center_hat
        vals = [quantize(v, METER_DECIMALS) for v in (c.x, c.y, c.z, e.l, e.w, e.h)]
        vals += [quantize(v, RADIAN_DECIMALS) for v in (e.yaw, e.pitch, e.roll)]
        try:
            box = Box3D.from_list(vals)
        except ValueError as exc:
            raise TraceBuildError(f"{scene.scene_id}: target {t} does not survive display rounding: {exc}") from exc
        answer.append(AnswerBox(box, a.label, a.instance_id))
    if not answer:
        raise TraceBuildError(f"{scene.scene_id}: no target has a valid depth")

    turns = (
        Turn("system", SYSTEM_PROMPT),
        Turn("user", _user_prompt(scene, task, [a.label for a in anchors], expression)),
        Turn("assistant", serialize_blocks([Think("\n".join(lines)), call1])),
        Turn("tool", serialize_blocks([resp1])),
        Turn("assistant", serialize_blocks([Think("\n".join(lines2)), call2])),
        Turn("tool", serialize_blocks([resp2])),
        Turn("assistant", serialize_blocks([Think("\n".join(lines3)), Answer(tuple(answer))])),
    )
    return ReasoningTrace(scene.scene_id, task, tuple(a.instance_id for a in anchors), turns, _provenance(cfg))


# -- verification --------------------------------------------------------------

STEP_KINDS = ("structure", "eq2_rounding", "eq3_center", "mean_depth", "eq4_backprojection", "answer_consistency", "tool_consistency")

_LINE_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*) = (.*)$")
_TOKEN_RE = re.compile(r"\s*(round|-?\d+(?:\.\d+)?|[()+/−×])")
_NUM_RE = re.compile(r"^-?\d+(?:\.\d+)?$")


@dataclass
class Divergence:
    where: str
    expected: Any
    found: Any
    message: str = ""

    def to_json(self) -> dict:
        return {"where": self.where, "expected": self.expected, "found": self.found, "message": self.message}


@dataclass
class StepResult:
    checks: int = 0
    failures: int = 0
    first: Divergence | None = None

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "checks": self.checks,
            "failures": self.failures,
            "first_divergence": None if self.first is None else self.first.to_json(),
        }


@dataclass
class VerificationReport:
    scene_id: str
    task: str
    steps: dict[str, StepResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.steps.values())

    def failing_steps(self) -> list[str]:
        return [k for k, s in self.steps.items() if not s.passed]

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "task": self.task,
            "passed": self.passed,
            "steps": {k: v.to_json() for k, v in self.steps.items()},
        }


class _Structural(Exception):
    pass


@dataclass
class _EqLine:
    name: str
    expr: list[str] | None  # None for declarations
    value: str
    text: str


def _tokenize(expr: str, line: str) -> list[str]:
    out, i = [], 0
    expr = expr.rstrip()
    while i < len(expr):
        m = _TOKEN_RE.match(expr, i)
        if m is None:
            raise _Structural(f"unparsable equation line: {line!r}")
        out.append(m.group(1))
        i = m.end()
    return out


def parse_equation_lines(text: str) -> dict[str, _EqLine]:
    eqs: dict[str, _EqLine] = {}
    for raw in text.splitlines():
        m = _LINE_RE.match(raw.strip())
        if m is None:
            continue
        name, rest = m.groups()
        parts = rest.split(" = ")
        if len(parts) == 1:
            expr, value = None, parts[0].strip()
        elif len(parts) == 2:
            expr, value = _tokenize(parts[0], raw), parts[1].strip()
        else:
            raise _Structural(f"unparsable equation line: {raw!r}")
        if not _NUM_RE.match(value):
            raise _Structural(f"unparsable equation line (value is not a number): {raw!r}")
        if name in eqs:
            raise _Structural(f"equation line {name} appears twice")
        eqs[name] = _EqLine(name, expr, value, raw)
    return eqs


class _Checker:
    def __init__(self, tolerance: float):
        self.tol = tolerance
        self.steps = {k: StepResult() for k in STEP_KINDS}

    def fail(self, step: str, where: str, expected, found, message: str = "") -> None:
        s = self.steps[step]
        s.checks += 1
        s.failures += 1
        if s.first is None:
            s.first = Divergence(where, expected, found, message)

    def ok(self, step: str) -> None:
        self.steps[step].checks += 1

    def check(self, step: str, where: str, expected, found, message: str = "") -> bool:
        if expected == found:
            self.ok(step)
            return True
        self.fail(step, where, expected, found, message)
        return False

    def num_equal(self, expected: str, found: str, decimals: int) -> bool:
        if not _NUM_RE.match(found):
            return False
        if self.tol == 0:
            return float(expected) == float(found)
        return abs(float(expected) - float(found)) <= self.tol * 10.0 ** (-decimals) + 1e-12

    def line(self, step: str, eqs: dict[str, _EqLine], name: str, operands: list[tuple[str, int]] | None,
             skeleton: list[str] | None, value: str, decimals: int) -> bool:
        """Compare one equation line to its recomputed operands and value."""
        eq = eqs.get(name)
        if eq is None:
            self.fail(step, name, "equation line present", None, "missing equation line")
            return False
        if operands is None:
            if eq.expr is not None:
                self.fail(step, name, "declaration", eq.text, "expected NAME = VALUE")
                return False
        else:
            if eq.expr is None:
                self.fail(step, name, "NAME = EXPR = VALUE", eq.text, "expected a derived line")
                return False
            found_nums = [t for t in eq.expr if _NUM_RE.match(t)]
            found_ops = [t for t in eq.expr if not _NUM_RE.match(t)]
            if found_ops != skeleton:
                self.fail(step, name, " ".join(skeleton), " ".join(found_ops), "operator structure differs")
                return False
            if len(found_nums) != len(operands):
                self.fail(step, name, [o for o, _ in operands], found_nums, "operand count differs")
                return False
            for (exp, dec), got in zip(operands, found_nums):
                if not self.num_equal(exp, got, dec):
                    self.fail(step, name, exp, got, "substituted operand differs")
                    return False
        if not self.num_equal(value, eq.value, decimals):
            self.fail(step, name, value, eq.value, "value differs from recomputation")
            return False
        self.ok(step)
        return True


def _bp_skeleton() -> list[str]:
    return ["(", MINUS, ")", TIMES, "/"]


def verify_trace(trace: ReasoningTrace, scene: SceneRecord, tolerance: float = 0) -> VerificationReport:
    """Re-derive every equation line from the tool responses and compare.

    ``tolerance`` is in units of the last displayed digit of each quantity;
    0 demands exact agreement at display precision.
    """
    ck = _Checker(tolerance)
    try:
        _verify(trace, scene, ck)
    except _Structural as exc:
        ck.fail("structure", "trace", "well-formed trace", None, str(exc))
    return VerificationReport(trace.scene_id, trace.task, ck.steps)


def _collect_blocks(trace: ReasoningTrace):
    blocks = []
    for k, turn in enumerate(trace.turns):
        if turn.role not in ("assistant", "tool"):
            continue
        try:
            parsed = parse_turn(turn.content)
        except ProtocolError as exc:
            raise _Structural(f"turn {k}: {exc}") from None
        blocks += [(k, b) for b in parsed]
    return blocks


def _verify(trace: ReasoningTrace, scene: SceneRecord, ck: _Checker) -> None:
    if trace.scene_id != scene.scene_id:
        raise _Structural(f"trace is for scene {trace.scene_id!r}, not {scene.scene_id!r}")
    blocks = _collect_blocks(trace)
    calls = [b for _, b in blocks if isinstance(b, ToolCall)]
    responses = {b.call_id: b for _, b in blocks if isinstance(b, ToolResponse)}
    answers = [(k, b) for k, b in blocks if isinstance(b, Answer)]
    last_turn = len(trace.turns) - 1
    if len(answers) != 1 or answers[0][0] != last_turn:
        raise _Structural("a trace needs exactly one answer block, in the final turn")
    for pos, (k, b) in enumerate(blocks):
        if isinstance(b, ToolCall):
            following = [x for _, x in blocks[pos + 1:] if isinstance(x, ToolResponse)]
            if not following or following[0].call_id != b.call_id:
                raise _Structural(f"tool call {b.call_id} has no matching response")
    ck.ok("structure")

    cam = [c for c in calls if c.tool_name == TOOL_CAMERA]
    dep = [c for c in calls if c.tool_name == TOOL_DEPTH]
    if len(cam) != 1 or len(dep) != 1:
        raise _Structural("expected one camera_intrinsics call and one depth_sampling call")
    r_cam, r_dep = responses[cam[0].call_id], responses[dep[0].call_id]
    if not (r_cam.ok and r_dep.ok):
        raise _Structural("a tool response carries an error")
    try:
        K = CameraIntrinsics.from_dict(r_cam.result)
        queries = [DepthQuery.from_dict(q) for q in dep[0].arguments["queries"]]
        samples = [[(int(u), int(v), float(z)) for u, v, z in qs] for qs in r_dep.result["samples"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise _Structural(f"tool payload does not match its schema: {exc}") from None
    if len(samples) != len(queries):
        raise _Structural("depth response does not answer every query")

    think = "\n".join(b.text for _, b in blocks if isinstance(b, Think))
    eqs = parse_equation_lines(think)
    _check_narrative(trace, scene, think, queries, samples, ck)
    W, H = scene.meta.width, scene.meta.height
    T = len(queries)
    expected_names: set[str] = {"f_x", "f_y", "c_x", "c_y"}

    # tool consistency: responses must be what the tools return for this scene
    ck.check("tool_consistency", "camera_intrinsics", scene.intrinsics.to_dict(), K.to_dict())
    prov = trace.provenance or {}
    if "sampling" in prov:
        cfg = SamplingConfig.from_dict(prov["sampling"])
        dec = prov.get("depth_decimals")
        try:
            truth = depth_sampling_tool(scene, queries, cfg)
            want = [[(s.u, s.v, s.z if dec is None else quantize(s.z, dec)) for s in qs] for qs in truth]
            ck.check("tool_consistency", "depth_sampling", want, samples)
        except ValueError as exc:
            ck.fail("tool_consistency", "depth_sampling", "valid queries", str(exc))

    # intrinsics as declared variables
    for name, val in (("f_x", K.fx), ("f_y", K.fy), ("c_x", K.cx), ("c_y", K.cy)):
        ck.line("eq4_backprojection", eqs, name, None, None, _k(val), INTRINSIC_DECIMALS)

    deduced = []
    eq2_skel = ["round", "(", "/", TIMES, ")"]
    for t in range(1, T + 1):
        q = queries[t - 1]
        names = [f"u_min_norm_{t}", f"v_min_norm_{t}", f"u_max_norm_{t}", f"v_max_norm_{t}"]
        expected_names.update(names)
        norms = []
        for nm in names:
            eq = eqs.get(nm)
            if eq is None or eq.expr is not None or not re.fullmatch(r"\d+", eq.value) or int(eq.value) > 1000:
                ck.fail("eq2_rounding", nm, "integer declaration in [0, 1000]", None if eq is None else eq.text)
                norms.append(None)
            else:
                ck.ok("eq2_rounding")
                norms.append(int(eq.value))
        absolute = []
        for nm, norm, size in zip(("u_min", "v_min", "u_max", "v_max"), norms, (W, H, W, H)):
            name = f"{nm}_{t}"
            expected_names.add(name)
            if norm is None:
                absolute.append(None)
                continue
            val = normalized_to_absolute(norm, 0, scene.meta)[0] if size == W else normalized_to_absolute(0, norm, scene.meta)[1]
            ck.line("eq2_rounding", eqs, name, [(str(norm), 0), ("1000", 0), (str(size), 0)], eq2_skel, str(val), 0)
            absolute.append(val)
        if None not in absolute:
            ck.check("eq2_rounding", f"query {t} bbox_2d", absolute, q.bbox2d.to_list(), "depth query box differs from converted anchor")

        # Eq. 3 from the box actually sent to the tool
        b = q.bbox2d
        u_c, v_c = (b.u_min + b.u_max) / 2, (b.v_min + b.v_max) / 2
        expected_names.update({f"u_c_{t}", f"v_c_{t}"})
        skel3 = ["(", "+", ")", "/"]
        ck.line("eq3_center", eqs, f"u_c_{t}", [(str(b.u_min), 0), (str(b.u_max), 0), ("2", 0)], skel3, _px(u_c), 1)
        ck.line("eq3_center", eqs, f"v_c_{t}", [(str(b.v_min), 0), (str(b.v_max), 0), ("2", 0)], skel3, _px(v_c), 1)

        zs = [z for _, _, z in samples[t - 1]]
        if not zs:
            deduced.append(None)
            continue
        z_bar = mean_depth(zs)
        p = back_project(u_c, v_c, z_bar, K)
        expected_names.update({f"Z_bar_{t}", f"X_{t}", f"Y_{t}", f"Z_{t}"})
        skel_mean = ["("] + ["+"] * (len(zs) - 1) + [")", "/"]
        ck.line("mean_depth", eqs, f"Z_bar_{t}", [(_m(z), 2) for z in zs] + [(str(len(zs)), 0)], skel_mean, _m(z_bar), 2)
        ck.line("eq4_backprojection", eqs, f"X_{t}", [(_px(u_c), 1), (_k(K.cx), 2), (_m(z_bar), 2), (_k(K.fx), 2)], _bp_skeleton(), _m(p.x), 2)
        ck.line("eq4_backprojection", eqs, f"Y_{t}", [(_px(v_c), 1), (_k(K.cy), 2), (_m(z_bar), 2), (_k(K.fy), 2)], _bp_skeleton(), _m(p.y), 2)
        ck.line("eq4_backprojection", eqs, f"Z_{t}", None, None, _m(p.z), 2)
        deduced.append((t, p))

    # answer consistency: centers from the deduction, size/orientation as declared
    answer = answers[0][1]
    live = [d for d in deduced if d is not None]
    if len(answer.boxes) != len(live):
        ck.fail("answer_consistency", "answer", len(live), len(answer.boxes), "box count differs from deduced targets")
    for (t, p), ab in zip(live, answer.boxes):
        got = ab.box.to_list()
        want = [_m(p.x), _m(p.y), _m(p.z)]
        for name, w, g in zip(("X", "Y", "Z"), want, got[:3]):
            if ck.num_equal(w, repr(g), METER_DECIMALS):
                ck.ok("answer_consistency")
            else:
                ck.fail("answer_consistency", f"answer[{t}].{name}", w, g, "answer center differs from deduced center")
        dims = (("l", 3, METER_DECIMALS), ("w", 4, METER_DECIMALS), ("h", 5, METER_DECIMALS),
                ("yaw", 6, RADIAN_DECIMALS), ("pitch", 7, RADIAN_DECIMALS), ("roll", 8, RADIAN_DECIMALS))
        for nm, idx, dec in dims:
            name = f"{nm}_{t}"
            expected_names.add(name)
            eq = eqs.get(name)
            if eq is None or eq.expr is not None:
                ck.fail("answer_consistency", name, "declaration", None if eq is None else eq.text)
                continue
            if ck.num_equal(fmt_fixed(got[idx], dec), eq.value, dec) and len(eq.value.split(".")[-1]) == dec:
                ck.ok("answer_consistency")
            else:
                ck.fail("answer_consistency", name, fmt_fixed(got[idx], dec), eq.value, "declared value differs from answer")
        if trace.targets and ab.instance_id is not None and ab.instance_id != trace.targets[t - 1]:
            ck.fail("answer_consistency", f"answer[{t}].instance_id", trace.targets[t - 1], ab.instance_id)

    unexpected = sorted(set(eqs) - expected_names)
    if unexpected:
        ck.fail("structure", unexpected[0], None, eqs[unexpected[0]].text, "equation line not part of the chain")


def _check_narrative(trace: ReasoningTrace, scene: SceneRecord, think: str, queries: list[DepthQuery],
                     samples: list[list], ck: _Checker) -> None:
    """Prose, system prompt and user prompt must be exactly what the builder writes."""
    labels = [q.category for q in queries]
    prov = trace.provenance or {}
    min_depth = SamplingConfig.from_dict(prov["sampling"]).min_depth if "sampling" in prov else SamplingConfig().min_depth
    want = _prose_lines(labels, [bool(s) for s in samples], min_depth)
    got = [ln for ln in think.splitlines() if not _LINE_RE.match(ln.strip())]
    for k in range(max(len(want), len(got))):
        w = want[k] if k < len(want) else None
        g = got[k] if k < len(got) else None
        if w != g:
            ck.fail("structure", f"prose line {k + 1}", w, g, "narrative differs from the template")
            break
    else:
        ck.ok("structure")

    roles = [t.role for t in trace.turns]
    if roles[:2] != ["system", "user"]:
        ck.fail("structure", "turns", ["system", "user"], roles[:2], "trace must open with system and user turns")
        return
    ck.check("structure", "system prompt", SYSTEM_PROMPT, trace.turns[0].content)
    if trace.task == "grounding":
        tid = trace.targets[0] if trace.targets else None
        prompts = [_user_prompt(scene, "grounding", labels, e.text) for e in scene.expressions if e.instance_id == tid]
    else:
        prompts = [_user_prompt(scene, trace.task, labels, None)]
    user = trace.turns[1].content
    if user in prompts:
        ck.ok("structure")
    else:
        ck.fail("structure", "user prompt", prompts[0] if prompts else None, user, "user prompt differs")


# -- corpus I/O ------------------------------------------------------------------

def write_traces(traces: Iterable[ReasoningTrace], path: Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tr in traces:
            fh.write(tr.to_line() + "\n")
            n += 1
    return n


def read_traces(path: Path) -> list[ReasoningTrace]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(ReasoningTrace.from_json(json.loads(line)))
    return out


def anchors_from_trace(trace: ReasoningTrace) -> list[Box2D]:
    """The absolute 2D boxes a trace sent to the depth tool."""
    for turn in trace.turns:
        if turn.role != "assistant":
            continue
        for b in parse_turn(turn.content):
            if isinstance(b, ToolCall) and b.tool_name == TOOL_DEPTH:
                return [Box2D.from_list(q["bbox_2d"]) for q in b.arguments["queries"]]
    return []
