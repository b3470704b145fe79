"""Single-token numeric mutations of a reasoning trace."""
import re
from dataclasses import replace

from geoanchor.traces import ReasoningTrace, Turn

NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def numeric_sites(trace: ReasoningTrace):
    """(turn index, start, end) of every numeric token in the transcript."""
    return [(k, m.start(), m.end()) for k, t in enumerate(trace.turns) for m in NUMBER.finditer(t.content)]


def mutate(trace: ReasoningTrace, site, rng) -> ReasoningTrace:
    """Change one digit of the token at ``site`` to a different digit."""
    k, a, b = site
    text = trace.turns[k].content
    token = text[a:b]
    digits = [i for i, ch in enumerate(token) if ch.isdigit()]
    i = digits[rng.integers(len(digits))]
    new_digit = str((int(token[i]) + 1 + rng.integers(9)) % 10)
    token = token[:i] + new_digit + token[i + 1:]
    turns = list(trace.turns)
    turns[k] = Turn(turns[k].role, text[:a] + token + text[b:])
    return replace(trace, turns=tuple(turns))
