"""Trace compression into loops, palindromes and plain sequences."""
from __future__ import annotations

from dataclasses import dataclass

from . import kernels
from .programs import Exec, Loop, Palindrome, Seq, expand, node_count, pretty_print  # noqa: F401

MIN_PALINDROME = 7


@dataclass(frozen=True)
class RolledLoop:
    count: int
    body: tuple     # segments


def roll_loops(trace) -> list:
    """Replace the most-repeated consecutive unit with a loop, recursively.

    Segments are plain symbol tuples or ``RolledLoop``.  The search is redone on
    the parts before and after the loop and inside its body.
    """
    trace = tuple(int(s) for s in trace)
    if not trace:
        return []
    count, unit, start = kernels.best_repeat(trace)
    if count < 2:
        return [trace]
    end = start + count * unit
    body = roll_loops(trace[start:start + unit])
    return roll_loops(trace[:start]) + [RolledLoop(count, tuple(body))] + roll_loops(trace[end:])


def _fold_literal(seq: tuple) -> list:
    if len(seq) < MIN_PALINDROME:
        return [seq] if seq else []
    start, length = kernels.longest_odd_palindrome(seq)
    if length < MIN_PALINDROME:
        return [seq]
    half = seq[start:start + length // 2 + 1]
    return _fold_literal(seq[:start]) + [Palindrome(half)] + _fold_literal(seq[start + length:])


def fold_palindromes(segments) -> list:
    """Replace odd palindromic runs of 7 or more symbols inside literal segments and loop bodies."""
    out = []
    for seg in segments:
        if isinstance(seg, RolledLoop):
            out.append(RolledLoop(seg.count, tuple(fold_palindromes(seg.body))))
        elif isinstance(seg, tuple):
            out.extend(_fold_literal(seg))
        else:
            out.append(seg)
    return out


def segments_to_ast(segments):
    nodes = []
    for seg in segments:
        if isinstance(seg, RolledLoop):
            nodes.append(Loop(seg.count, segments_to_ast(seg.body)))
        elif isinstance(seg, tuple):
            if len(seg) == 1:
                nodes.append(Exec(seg[0]))
            else:
                nodes.append(Seq(tuple(Exec(s) for s in seg)))
        else:
            nodes.append(seg)
    if len(nodes) == 1:
        return nodes[0]
    return Seq(tuple(nodes))


def induce_program(trace):
    """Loops first, then palindromes, then the leftovers as plain sequences."""
    symbols = trace.symbols if hasattr(trace, "symbols") else trace
    return segments_to_ast(fold_palindromes(roll_loops(symbols)))
