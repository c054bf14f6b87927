"""Tiny dense linear algebra over lists of scalars (floats or DVars).

Desk-scale systems have at most a handful of degrees of freedom, so plain
nested lists are used instead of numpy arrays: the same code then records onto
the autodiff tape when any entry is a ``DVar``.
"""

from __future__ import annotations

from . import autodiff as ad


class CholeskyError(ArithmeticError):
    """Matrix is not symmetric positive definite."""


def _is_zero(x) -> bool:
    return not isinstance(x, ad.DVar) and x == 0.0


def dot(a, b):
    # exact-zero float terms are skipped so sparse Jacobian rows stay off the tape
    acc = 0.0
    for x, y in zip(a, b):
        if _is_zero(x) or _is_zero(y):
            continue
        acc = acc + x * y
    return acc


def matvec(A, x):
    return [dot(row, x) for row in A]


def transpose(A):
    return [list(col) for col in zip(*A)]


def matmul(A, B):
    Bt = transpose(B)
    return [[dot(row, col) for col in Bt] for row in A]


def is_zero_matrix(A) -> bool:
    return all(_is_zero(v) for row in A for v in row)


def add(x, y):
    return [xi + yi for xi, yi in zip(x, y)]


def scale(alpha, x):
    return [alpha * xi for xi in x]


def cholesky(A):
    """Lower-triangular ``L`` with ``A = L L^T``."""
    n = len(A)
    L = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            s = A[i][j]
            for k in range(j):
                s = s - L[i][k] * L[j][k]
            if i == j:
                if not ad.value(s) > 0.0:
                    raise CholeskyError(f"non-positive pivot {ad.value(s)!r} at row {i}")
                L[i][i] = ad.sqrt(s)
            else:
                L[i][j] = s / L[j][j]
    return L


def cho_solve(L, b):
    """Solve ``L L^T x = b`` by forward and back substitution."""
    n = len(L)
    y = [0.0] * n
    for i in range(n):
        s = b[i]
        for k in range(i):
            s = s - L[i][k] * y[k]
        y[i] = s / L[i][i]
    x = [0.0] * n
    for i in reversed(range(n)):
        s = y[i]
        for k in range(i + 1, n):
            s = s - L[k][i] * x[k]
        x[i] = s / L[i][i]
    return x


def det(A):
    """Determinant of a small square matrix by cofactor expansion."""
    n = len(A)
    if n == 0:
        return 1.0
    if n == 1:
        return A[0][0]
    if n == 2:
        return A[0][0] * A[1][1] - A[0][1] * A[1][0]
    acc = 0.0
    for j in range(n):
        if ad.value(A[0][j]) == 0.0 and not ad.is_dvar(A[0][j]):
            continue
        minor = [row[:j] + row[j + 1 :] for row in A[1:]]
        term = A[0][j] * det(minor)
        acc = acc + term if j % 2 == 0 else acc - term
    return acc


def values(x):
    """Float copy of a vector or matrix of scalars."""
    if x and isinstance(x[0], list):
        return [[ad.value(v) for v in row] for row in x]
    return [ad.value(v) for v in x]
