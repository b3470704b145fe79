"""Hypothesis strategies for transcript blocks."""
from hypothesis import strategies as st

from geoanchor.geometry import Box3D
from geoanchor.protocol import Answer, AnswerBox, Think, ToolCall, ToolResponse

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
json_scalars = st.none() | st.booleans() | st.integers(-10**12, 10**12) | finite | st.text(max_size=12)
json_values = st.recursive(
    json_scalars,
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=12,
)

think_text = st.text(max_size=60).filter(lambda t: "</think>" not in t)
call_ids = st.text(min_size=1, max_size=10)
categories = st.text(min_size=1, max_size=10)


@st.composite
def bbox2d(draw):
    u0, u1 = sorted(draw(st.lists(st.integers(0, 2000), min_size=2, max_size=2)))
    v0, v1 = sorted(draw(st.lists(st.integers(0, 2000), min_size=2, max_size=2)))
    return [u0, v0, u1, v1]


camera_calls = st.builds(lambda cid: ToolCall(cid, "camera_intrinsics", {}), call_ids)
depth_calls = st.builds(
    lambda cid, qs: ToolCall(cid, "depth_sampling", {"queries": qs}),
    call_ids,
    st.lists(st.fixed_dictionaries({"category": categories, "bbox_2d": bbox2d()}), max_size=3),
)
responses = st.one_of(
    st.builds(lambda cid, r: ToolResponse(cid, result=r), call_ids | st.none(),
              st.dictionaries(st.text(max_size=6), json_values, max_size=4)),
    st.builds(lambda cid, k, m: ToolResponse.failure(cid, k, m), call_ids | st.none(), st.text(max_size=10),
              st.text(max_size=20)),
)
boxes3d = st.builds(
    Box3D,
    finite.filter(lambda x: abs(x) < 1e6), finite.filter(lambda x: abs(x) < 1e6), finite.filter(lambda x: abs(x) < 1e6),
    st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3),
    st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10),
)
answers = st.builds(
    lambda bs: Answer(tuple(bs)),
    st.lists(st.builds(AnswerBox, boxes3d, st.none() | categories, st.none() | st.integers(0, 10**6)), max_size=4),
)
blocks = st.one_of(st.builds(Think, think_text), camera_calls, depth_calls, responses, answers)
block_lists = st.lists(blocks, max_size=8)
