"""Scalar reverse-mode automatic differentiation.

Every differentiable quantity in the simulator is either a plain ``float`` or a
:class:`DVar` living on a :class:`Tape`. Arithmetic on ``DVar`` objects appends
nodes to the tape; :meth:`Tape.backward` then sweeps the tape once in reverse
order and accumulates adjoints.

The module-level functions (:func:`exp`, :func:`sqrt`, :func:`minimum`, ...)
accept floats as well as ``DVar`` objects and fall back to ``math`` when no
tape is involved, so the same simulation code runs untaped (fast) or taped.

Example::

    tape = Tape()
    x = tape.variable(3.0)
    y = x * x
    adj = tape.backward(y)
    adj[x.index]   # 6.0
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DVar",
    "Tape",
    "TapeMismatchError",
    "FiniteDifferenceError",
    "backward",
    "record",
    "value",
    "is_dvar",
    "exp",
    "log",
    "sqrt",
    "reciprocal",
    "absolute",
    "minimum",
    "maximum",
    "select",
    "sigmoid",
    "stop_gradient",
    "value_and_grad",
    "finite_diff_gradient",
]


class TapeMismatchError(ValueError):
    """Raised when one operation mixes variables recorded on different tapes."""


class FiniteDifferenceError(ValueError):
    """Raised when a finite-difference probe returns a non-finite value."""


class DVar:
    """A differentiable scalar: a value plus a node index on a tape.

    ``tape is None`` marks a constant. Constants never receive adjoints.
    """

    __slots__ = ("value", "tape", "index")

    def __init__(self, value: float, tape: Tape | None = None, index: int = -1):
        self.value = float(value)
        self.tape = tape
        self.index = index

    @classmethod
    def constant(cls, value: float) -> DVar:
        return cls(value)

    @property
    def is_constant(self) -> bool:
        return self.tape is None

    def __repr__(self) -> str:
        if self.tape is None:
            return f"DVar({self.value!r}, const)"
        return f"DVar({self.value!r}, node={self.index})"

    def __float__(self) -> float:
        return self.value

    # comparisons act on values; they never touch the tape
    def __lt__(self, other):
        return self.value < value(other)

    def __le__(self, other):
        return self.value <= value(other)

    def __gt__(self, other):
        return self.value > value(other)

    def __ge__(self, other):
        return self.value >= value(other)

    # identities with plain numbers (x + 0, x * 1, x * 0) record nothing

    def __add__(self, other):
        if isinstance(other, DVar):
            return record("add", (self, other), self.value + other.value, (1.0, 1.0))
        if other == 0.0:
            return self
        return record("add", (self,), self.value + other, (1.0,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DVar):
            return record("sub", (self, other), self.value - other.value, (1.0, -1.0))
        if other == 0.0:
            return self
        return record("sub", (self,), self.value - other, (1.0,))

    def __rsub__(self, other):
        return record("sub", (self,), other - self.value, (-1.0,))

    def __mul__(self, other):
        if isinstance(other, DVar):
            return record(
                "mul", (self, other), self.value * other.value, (other.value, self.value)
            )
        if other == 1.0:
            return self
        if other == 0.0:
            return DVar(0.0)
        return record("mul", (self,), self.value * other, (float(other),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DVar):
            inv = 1.0 / other.value
            out = self.value * inv
            return record("div", (self, other), out, (inv, -out * inv))
        return record("div", (self,), self.value / other, (1.0 / other,))

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        out = other * inv
        return record("div", (self,), out, (-out * inv,))

    def __neg__(self):
        return record("neg", (self,), -self.value, (-1.0,))

    def __pos__(self):
        return self

    def __pow__(self, exponent):
        if isinstance(exponent, DVar):
            raise TypeError("DVar exponents are not supported")
        v = self.value
        return record("pow", (self,), v**exponent, (exponent * v ** (exponent - 1),))

    def __abs__(self):
        return absolute(self)


class Tape:
    """Append-only record of primitive operations.

    Node ``i`` stores the indices of its operands (all ``< i``) and the local
    partial derivative with respect to each one.
    """

    __slots__ = ("_operands", "_partials", "_kinds", "marker")

    def __init__(self):
        self._operands: list[tuple[int, ...]] = []
        self._partials: list[tuple[float, ...]] = []
        self._kinds: list[str] = []
        self.marker = 0

    def __len__(self) -> int:
        return len(self._kinds)

    def variable(self, x: float) -> DVar:
        """Create a leaf node holding ``x``."""
        return self._append("leaf", (), float(x), ())

    def variables(self, xs) -> list[DVar]:
        return [self.variable(x) for x in xs]

    def kind(self, index: int) -> str:
        return self._kinds[index]

    def operands(self, index: int) -> tuple[int, ...]:
        return self._operands[index]

    def _append(self, kind, operand_ids, out_value, partials) -> DVar:
        idx = len(self._kinds)
        self._kinds.append(kind)
        self._operands.append(operand_ids)
        self._partials.append(partials)
        return DVar(out_value, self, idx)

    def record(self, kind: str, operands: Sequence, out_value: float, partials: Sequence[float]) -> DVar:
        return record(kind, operands, out_value, partials, tape=self)

    def checkpoint(self) -> int:
        """Remember the current tape length as the truncation marker."""
        self.marker = len(self._kinds)
        return self.marker

    def backward(self, output) -> list[float]:
        """Return adjoints of every node with respect to ``output``.

        A constant (or plain float) output yields all-zero adjoints. The tape
        itself is left untouched, so the sweep can be repeated.
        """
        n = len(self._kinds)
        adj = [0.0] * n
        if not isinstance(output, DVar) or output.tape is None:
            return adj
        if output.tape is not self:
            raise TapeMismatchError("output was recorded on a different tape")
        adj[output.index] = 1.0
        ops = self._operands
        parts = self._partials
        for i in range(output.index, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            for j, p in zip(ops[i], parts[i]):
                adj[j] += a * p
        return adj

    def gradient(self, output, wrt: Sequence) -> np.ndarray:
        """Adjoints of ``output`` restricted to the variables in ``wrt``."""
        adj = self.backward(output)
        out = np.zeros(len(wrt))
        for k, x in enumerate(wrt):
            if isinstance(x, DVar) and x.tape is not None:
                if x.tape is not self:
                    raise TapeMismatchError("gradient requested for a foreign variable")
                out[k] = adj[x.index]
        return out


def record(kind: str, operands: Sequence, out_value: float, partials: Sequence[float], tape: Tape | None = None):
    """Append one primitive to the tape shared by ``operands``.

    Operands that are plain numbers or constant ``DVar`` objects are dropped
    together with their partials. If no operand lives on a tape the result is
    a constant ``DVar``.
    """
    if len(operands) != len(partials):
        raise ValueError("partials must match operands one to one")
    ids = []
    kept = []
    for x, p in zip(operands, partials):
        if isinstance(x, DVar) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeMismatchError(f"operands of '{kind}' belong to different tapes")
            ids.append(x.index)
            kept.append(float(p))
    if tape is None:
        return DVar(out_value)
    return tape._append(kind, tuple(ids), float(out_value), tuple(kept))


def backward(tape: Tape, output) -> list[float]:
    return tape.backward(output)


def value(x) -> float:
    """Plain float value of a float or ``DVar``."""
    return x.value if isinstance(x, DVar) else float(x)


def is_dvar(x) -> bool:
    return isinstance(x, DVar) and x.tape is not None


def exp(x):
    if isinstance(x, DVar):
        e = math.exp(x.value)
        return record("exp", (x,), e, (e,))
    return math.exp(x)


def log(x):
    if isinstance(x, DVar):
        return record("log", (x,), math.log(x.value), (1.0 / x.value,))
    return math.log(x)


def sqrt(x):
    if isinstance(x, DVar):
        s = math.sqrt(x.value)
        return record("sqrt", (x,), s, (0.5 / s if s > 0.0 else math.inf,))
    return math.sqrt(x)


def reciprocal(x):
    if isinstance(x, DVar):
        inv = 1.0 / x.value
        return record("reciprocal", (x,), inv, (-inv * inv,))
    return 1.0 / x


def absolute(x):
    """|x| with partial +1 at the kink (the ``x >= 0`` branch)."""
    if isinstance(x, DVar):
        s = 1.0 if x.value >= 0.0 else -1.0
        return record("abs", (x,), abs(x.value), (s,))
    return abs(x)


def minimum(a, b):
    """min(a, b); ties resolve to ``a``."""
    if isinstance(a, DVar) or isinstance(b, DVar):
        if value(a) <= value(b):
            return record("min", (a, b), value(a), (1.0, 0.0))
        return record("min", (a, b), value(b), (0.0, 1.0))
    return a if a <= b else b


def maximum(a, b):
    """max(a, b); ties resolve to ``a``."""
    if isinstance(a, DVar) or isinstance(b, DVar):
        if value(a) >= value(b):
            return record("max", (a, b), value(a), (1.0, 0.0))
        return record("max", (a, b), value(b), (0.0, 1.0))
    return a if a >= b else b


def select(condition: bool, a, b):
    """``a if condition else b`` recorded with a unit partial on the branch taken."""
    if isinstance(a, DVar) or isinstance(b, DVar):
        if condition:
            return record("select", (a, b), value(a), (1.0, 0.0))
        return record("select", (a, b), value(b), (0.0, 1.0))
    return a if condition else b


def _sigmoid_value(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def sigmoid(z):
    """Logistic function 1 / (1 + exp(-z)), overflow-safe for large |z|."""
    if isinstance(z, DVar):
        s = _sigmoid_value(z.value)
        return record("sigmoid", (z,), s, (s * (1.0 - s),))
    return _sigmoid_value(float(z))


def stop_gradient(x):
    """Fresh leaf with the same value; gradients do not flow through it."""
    if isinstance(x, DVar) and x.tape is not None:
        return x.tape.variable(x.value)
    return x


def value_and_grad(f: Callable[[list[DVar]], object], x) -> tuple[float, np.ndarray]:
    """Evaluate ``f`` on fresh tape leaves and return (value, gradient)."""
    tape = Tape()
    leaves = tape.variables(np.asarray(x, dtype=float).ravel())
    out = f(leaves)
    return value(out), tape.gradient(out, leaves)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``f`` at ``x``.

    Each coordinate costs two evaluations, ``f(x + h e_i)`` and ``f(x - h e_i)``.
    """
    if not h > 0.0:
        raise ValueError("finite-difference step must be positive")
    x = np.asarray(x, dtype=float).ravel()
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(value(f(xp)))
        fm = float(value(f(xm)))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FiniteDifferenceError(f"non-finite function value when perturbing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
