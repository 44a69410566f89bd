"""Controller primitives, program ASTs and program execution.

A controller drives the joints towards a goal with a proportional law
``u = gain * (goal - theta)``.  Programs are trees of ``Exec``, ``Seq``,
``Loop`` and ``Palindrome`` nodes whose expansion is the flat order in which
controllers run.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .arm import ArmModel, CameraModel, Scene, render
from .errors import InvalidArgumentError, ProgramParseError, StabilityError

DEFAULT_DT = 0.05
DEFAULT_CONVERGENCE_EPS = 0.01
GAIN_RANGE = (0.5, 4.0)
MAX_SEGMENT_STEPS = 100_000


@dataclass
class ControllerParams:
    goal: np.ndarray
    gain: float

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float)
        self.gain = float(self.gain)
        if self.goal.ndim != 1 or not np.all(np.isfinite(self.goal)):
            raise InvalidArgumentError(f"goal must be a finite vector, got {self.goal}")
        if not (np.isfinite(self.gain) and self.gain > 0):
            raise InvalidArgumentError(f"gain must be positive, got {self.gain}")

    def __eq__(self, other):
        if not isinstance(other, ControllerParams):
            return NotImplemented
        return self.gain == other.gain and np.array_equal(self.goal, other.goal)


@dataclass
class ControllerLibrary:
    controllers: dict[int, ControllerParams] = field(default_factory=dict)

    def __post_init__(self):
        ids = sorted(self.controllers)
        if ids != list(range(len(ids))):
            raise InvalidArgumentError(f"controller ids must be dense 0..C-1, got {ids}")

    def __len__(self):
        return len(self.controllers)

    def __getitem__(self, symbol: int) -> ControllerParams:
        return self.controllers[symbol]

    def __contains__(self, symbol) -> bool:
        return symbol in self.controllers

    @classmethod
    def from_list(cls, params: Sequence[ControllerParams]) -> "ControllerLibrary":
        return cls({i: p for i, p in enumerate(params)})

    def goals(self) -> np.ndarray:
        return np.array([self.controllers[i].goal for i in range(len(self))])

    def gains(self) -> np.ndarray:
        return np.array([self.controllers[i].gain for i in range(len(self))])


# ------------------------------------------------------------------ program AST

@dataclass(frozen=True)
class Exec:
    symbol: int


@dataclass(frozen=True)
class Seq:
    nodes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))


@dataclass(frozen=True)
class Loop:
    count: int
    body: "Node"

    def __post_init__(self):
        if self.count < 2:
            raise InvalidArgumentError(f"loop count must be >= 2, got {self.count}")


@dataclass(frozen=True)
class Palindrome:
    controllers: tuple

    def __post_init__(self):
        object.__setattr__(self, "controllers", tuple(int(c) for c in self.controllers))
        if len(self.controllers) < 4:
            raise InvalidArgumentError("palindrome needs at least 4 controllers")


Node = Union[Exec, Seq, Loop, Palindrome]


def expand(p: Node) -> list[int]:
    out: list[int] = []
    _expand_into(p, out)
    return out


def _expand_into(p, out):
    if isinstance(p, Exec):
        out.append(p.symbol)
    elif isinstance(p, Seq):
        for n in p.nodes:
            _expand_into(n, out)
    elif isinstance(p, Loop):
        body = expand(p.body)
        out.extend(body * p.count)
    elif isinstance(p, Palindrome):
        c = list(p.controllers)
        out.extend(c + c[-2::-1])
    else:
        raise InvalidArgumentError(f"not a program node: {p!r}")


def node_count(p: Node) -> int:
    """Number of Exec, Loop and Palindrome nodes; Seq containers are free."""
    if isinstance(p, Seq):
        return sum(node_count(n) for n in p.nodes)
    if isinstance(p, Loop):
        return 1 + node_count(p.body)
    return 1


def iter_nodes(p: Node):
    yield p
    if isinstance(p, Seq):
        for n in p.nodes:
            yield from iter_nodes(n)
    elif isinstance(p, Loop):
        yield from iter_nodes(p.body)


def symbols_used(p: Node) -> set[int]:
    return set(expand(p))


# ------------------------------------------------------------------ text DSL

def _is_exec_run(p) -> bool:
    return isinstance(p, Seq) and len(p.nodes) > 0 and all(isinstance(n, Exec) for n in p.nodes)


def _fmt_list(xs) -> str:
    return "[" + ",".join(str(x) for x in xs) + "]"


def _stmt_lines(p, indent) -> list[str]:
    pad = "    " * indent
    if isinstance(p, Exec):
        return [f"{pad}exec {p.symbol}"]
    if isinstance(p, Palindrome):
        return [f"{pad}palin {_fmt_list(p.controllers)}"]
    if _is_exec_run(p):
        return [f"{pad}seq {_fmt_list(n.symbol for n in p.nodes)}"]
    if isinstance(p, Loop):
        return [f"{pad}loop {p.count} {{", *_block_lines(p.body, indent + 1), f"{pad}}}"]
    if isinstance(p, Seq):
        # nested mixed sequence keeps its own braces so it survives a round trip
        return [f"{pad}{{", *_block_lines(p, indent + 1), f"{pad}}}"]
    raise InvalidArgumentError(f"not a program node: {p!r}")


def _block_lines(p, indent) -> list[str]:
    if isinstance(p, Seq) and not _is_exec_run(p) and len(p.nodes) != 1:
        return [line for n in p.nodes for line in _stmt_lines(n, indent)]
    return _stmt_lines(p, indent)


def pretty_print(p: Node) -> str:
    return "\n".join(_block_lines(p, 0))


_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_]+)|(\[)|(\])|(\{)|(\})|(,))")


def _tokenize(text: str):
    tokens = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        pos = 0
        while pos < len(line):
            if line[pos:].strip() == "":
                break
            m = _TOKEN.match(line, pos)
            if not m:
                raise ProgramParseError(f"unexpected character {line[pos:].strip()[0]!r}", lineno)
            tokens.append((m.group(m.lastindex), lineno))
            pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i][0] if self.i < len(self.toks) else None

    def line(self):
        if self.i < len(self.toks):
            return self.toks[self.i][1]
        return self.toks[-1][1] if self.toks else 1

    def take(self, expected=None):
        if self.i >= len(self.toks):
            raise ProgramParseError(f"unexpected end of input, expected {expected or 'token'}", self.line())
        tok = self.toks[self.i][0]
        if expected is not None and tok != expected:
            raise ProgramParseError(f"expected {expected!r}, got {tok!r}", self.line())
        self.i += 1
        return tok

    def integer(self):
        tok = self.take()
        if not tok.isdigit():
            raise ProgramParseError(f"expected integer, got {tok!r}", self.toks[self.i - 1][1])
        return int(tok)

    def int_list(self):
        self.take("[")
        out = []
        if self.peek() == "]":
            self.take("]")
            return out
        while True:
            out.append(self.integer())
            if self.peek() == ",":
                self.take(",")
                continue
            self.take("]")
            return out

    def statements(self, closing=None):
        stmts = []
        while self.peek() is not None and self.peek() != closing:
            stmts.append(self.statement())
        return stmts

    def statement(self):
        line = self.line()
        tok = self.take()
        try:
            if tok == "exec":
                return Exec(self.integer())
            if tok == "seq":
                return Seq(tuple(Exec(s) for s in self.int_list()))
            if tok == "palin":
                return Palindrome(tuple(self.int_list()))
            if tok == "loop":
                count = self.integer()
                self.take("{")
                body = self.statements("}")
                self.take("}")
                if not body:
                    raise ProgramParseError("empty loop body", line)
                return Loop(count, body[0] if len(body) == 1 else Seq(tuple(body)))
            if tok == "{":
                body = self.statements("}")
                self.take("}")
                return Seq(tuple(body))
        except InvalidArgumentError as exc:
            raise ProgramParseError(str(exc), line) from exc
        raise ProgramParseError(f"unknown statement {tok!r}", line)


def parse_program(text: str) -> Node:
    parser = _Parser(text)
    stmts = parser.statements()
    if parser.peek() is not None:
        raise ProgramParseError(f"unexpected {parser.peek()!r}", parser.line())
    if len(stmts) == 1:
        return stmts[0]
    return Seq(tuple(stmts))


# ------------------------------------------------------------------ control

def control_step(theta, c: ControllerParams) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != c.goal.shape:
        raise InvalidArgumentError(f"joint vector {theta.shape} vs goal {c.goal.shape}")
    return c.gain * (c.goal - theta)


def check_stable(c: ControllerParams, dt: float) -> None:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if not dt * c.gain < 2.0:
        raise StabilityError(f"dt*gain = {dt * c.gain:.3f} >= 2, Euler integration diverges")


def rollout(theta0, c: ControllerParams, dt: float, steps: int):
    """Euler-integrate one controller; returns ``(thetas, controls)``.

    ``thetas`` has ``steps + 1`` rows including ``theta0``.
    """
    check_stable(c, dt)
    theta = np.asarray(theta0, dtype=float).copy()
    thetas = [theta]
    controls = []
    for _ in range(steps):
        u = control_step(theta, c)
        theta = theta + dt * u
        controls.append(u)
        thetas.append(theta)
    J = theta.shape[0]
    return np.array(thetas), np.array(controls).reshape(len(controls), J)


@dataclass
class Demonstration:
    thetas: np.ndarray          # (T, J)
    controls: np.ndarray        # (T, J)
    images: list                # length T; static scenes share one array
    dt: float
    segment_symbols: np.ndarray  # (T,) symbol executing at each step
    segment_starts: list         # first step index of every executed symbol
    final_theta: np.ndarray

    def __len__(self):
        return len(self.thetas)

    @property
    def switch_times(self) -> list[int]:
        """Step indices at which a new controller takes over."""
        return [int(s) for s in self.segment_starts[1:]]

    def segment_terminals(self) -> np.ndarray:
        """Joint state reached at the end of every executed segment."""
        ends = [self.thetas[s] for s in self.segment_starts[1:]] + [self.final_theta]
        return np.array(ends)


def _run_symbols(trace, library, theta0, dt, eps, on_step):
    theta = np.asarray(theta0, dtype=float).copy()
    starts = []
    step_index = 0
    for sym in trace:
        if sym not in library:
            raise InvalidArgumentError(f"symbol {sym} missing from controller library")
        c = library[sym]
        if c.goal.shape != theta.shape:
            raise InvalidArgumentError(f"controller {sym} goal has wrong dimension")
        check_stable(c, dt)
        starts.append(step_index)
        for _ in range(MAX_SEGMENT_STEPS):
            u = control_step(theta, c)
            on_step(theta, u, sym)
            step_index += 1
            theta = theta + dt * u
            if np.linalg.norm(theta - c.goal) < eps:
                break
        else:
            raise StabilityError(f"controller {sym} did not converge within {MAX_SEGMENT_STEPS} steps")
    return theta, starts


def generate_demonstration(program: Node, library: ControllerLibrary, arm: ArmModel,
                           scene: Scene, camera: CameraModel, dt: float = DEFAULT_DT,
                           convergence_eps: float = DEFAULT_CONVERGENCE_EPS,
                           theta0=None) -> Demonstration:
    trace = expand(program)
    theta0 = np.zeros(arm.n_joints) if theta0 is None else np.asarray(theta0, dtype=float)
    # scene is static during a demonstration, so every step shares one frame
    frame = render(scene, camera)
    thetas, controls, symbols = [], [], []

    def record(theta, u, sym):
        thetas.append(theta)
        controls.append(u)
        symbols.append(sym)

    final, starts = _run_symbols(trace, library, theta0, dt, convergence_eps, record)
    J = arm.n_joints
    return Demonstration(np.array(thetas).reshape(-1, J), np.array(controls).reshape(-1, J),
                         [frame] * len(thetas), float(dt), np.array(symbols, dtype=int),
                         starts, final)


@dataclass
class ExecutionResult:
    thetas: np.ndarray
    controls: np.ndarray
    visited: list[int]
    terminals: np.ndarray       # joint state at the end of each executed symbol


def execute_program(program: Node, grounded_goals: ControllerLibrary, arm: ArmModel,
                    dt: float = DEFAULT_DT, convergence_eps: float = DEFAULT_CONVERGENCE_EPS,
                    theta0=None) -> ExecutionResult:
    trace = expand(program)
    theta0 = np.zeros(arm.n_joints) if theta0 is None else np.asarray(theta0, dtype=float)
    thetas, controls, visited, terminals = [], [], [], []

    def record(theta, u, sym):
        thetas.append(theta)
        controls.append(u)

    theta = theta0
    for sym in trace:
        theta, _ = _run_symbols([sym], grounded_goals, theta, dt, convergence_eps, record)
        visited.append(sym)
        terminals.append(theta)
    J = arm.n_joints
    return ExecutionResult(np.array(thetas).reshape(-1, J), np.array(controls).reshape(-1, J),
                           visited, np.array(terminals).reshape(-1, J))


def patrol_trace(n_symbols: int, order: Sequence[int] = (3, 2, 1, 4, 0, 3)) -> list[int]:
    """Symbol sequence of a bouncing state machine over ``order``.

    The state index walks up to the last entry, reverses, walks back to the
    first, reverses again, and so on.  The first emitted symbol is ``order[1]``.
    """
    last = len(order) - 1
    state, step = 0, 1
    out = []
    while len(out) < n_symbols:
        state += step
        if state == last:
            step = -1
        if state == 0:
            step = 1
        out.append(int(order[state]))
    return out
