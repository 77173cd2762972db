"""Small dense linear-programming kernel.

Two-phase tableau simplex with Bland's rule (anti-cycling, fully
deterministic). Instances here are small by design: primal recovery after the
dual solve touches only the near-optimal activity fractions, and hull
membership certificates are built over brute-force-enumerated scheduling
instants. Robustness and reproducibility beat sparsity at these sizes.

Variables are implicitly nonnegative; upper bounds are expressed as rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_PIVOT_TOL = 1e-9
_OPT_TOL = 1e-9
_FEAS_TOL = 1e-8


class LpError(ValueError):
    """Malformed LP (dimension mismatch, non-finite coefficients)."""


@dataclass
class LinearProgram:
    """maximize c @ x  s.t.  a_ub @ x <= b_ub,  a_eq @ x == b_eq,  x >= 0."""

    c: np.ndarray
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.size
        for name in ("a_ub", "a_eq"):
            a = getattr(self, name)
            b = getattr(self, "b" + name[1:])
            if a is None and b is None:
                continue
            if a is None or b is None:
                raise LpError(f"{name} and its rhs must be given together")
            a = np.atleast_2d(np.asarray(a, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if a.shape != (b.size, n):
                raise LpError(f"{name} has shape {a.shape}, expected ({b.size}, {n})")
            setattr(self, name, a)
            setattr(self, "b" + name[1:], b)
        for arr in (self.c, self.a_ub, self.b_ub, self.a_eq, self.b_eq):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise LpError("all coefficients must be finite")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_ub(self) -> int:
        return 0 if self.b_ub is None else self.b_ub.size

    @property
    def n_eq(self) -> int:
        return 0 if self.b_eq is None else self.b_eq.size


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals_ub: np.ndarray | None = None
    duals_eq: np.ndarray | None = None
    farkas_ub: np.ndarray | None = None
    farkas_eq: np.ndarray | None = None


def _pivot(t: np.ndarray, obj: np.ndarray, basis: list[int], row: int, col: int) -> None:
    t[row] /= t[row, col]
    for i in range(t.shape[0]):
        if i != row and t[i, col] != 0.0:
            t[i] -= t[i, col] * t[row]
    obj -= obj[col] * t[row]
    basis[row] = col


def _refactorize(t: np.ndarray, basis: list[int], t0: np.ndarray) -> None:
    """Rebuild the tableau as B^-1 [A | b] from the pristine copy, wiping the
    roundoff accumulated by pivoting."""
    b_mat = t0[:, basis]
    try:
        t[:] = np.linalg.solve(b_mat, t0)
    except np.linalg.LinAlgError:
        pass  # keep the iterated tableau; duals fall back to least squares


def _simplex_iterate(
    t: np.ndarray,
    obj: np.ndarray,
    basis: list[int],
    allowed: np.ndarray,
    c_ext: np.ndarray,
    t0: np.ndarray,
) -> str:
    """Pivot until optimal or unbounded; `obj` holds z_j - c_j (and the value).

    Entering column: Bland (lowest improving index). Leaving row: largest
    pivot element among the minimum-ratio ties for numerical stability --
    degenerate bases make tiny pivots otherwise, and a 1e-9 pivot amplifies
    roundoff by 1e9. Prolonged degenerate stalling switches the tie-break to
    pure Bland, restoring the anti-cycling guarantee.
    """
    m = t.shape[0]
    stall = 0
    since_refactor = 0
    pivots = 0
    max_pivots = 200 * (m + t.shape[1])
    while True:
        entering = -1
        for j in range(t.shape[1] - 1):
            if allowed[j] and obj[j] < -_OPT_TOL:
                entering = j
                break
        if entering < 0:
            _refactorize(t, basis, t0)
            obj[:] = _objective_row(t, c_ext, basis)
            if any(
                allowed[j] and obj[j] < -_OPT_TOL for j in range(t.shape[1] - 1)
            ):
                continue  # roundoff hid an improving column; keep pivoting
            return OPTIMAL
        col = t[:, entering]
        best_ratio = np.inf
        for i in range(m):
            if col[i] > _PIVOT_TOL:
                ratio = t[i, -1] / col[i]
                if ratio < best_ratio:
                    best_ratio = ratio
        if best_ratio == np.inf:
            return UNBOUNDED
        tie_tol = _PIVOT_TOL * (1.0 + abs(best_ratio))
        ties = [
            i
            for i in range(m)
            if col[i] > _PIVOT_TOL and t[i, -1] / col[i] <= best_ratio + tie_tol
        ]
        if stall > 5 * (m + t.shape[1]):
            leaving = min(ties, key=lambda i: basis[i])  # pure Bland
        else:
            leaving = max(ties, key=lambda i: (col[i], -basis[i]))
        stall = stall + 1 if best_ratio <= _PIVOT_TOL else 0
        _pivot(t, obj, basis, leaving, entering)
        pivots += 1
        since_refactor += 1
        if pivots > max_pivots:
            raise LpError("simplex iteration limit exceeded")
        if since_refactor >= 64:
            _refactorize(t, basis, t0)
            obj[:] = _objective_row(t, c_ext, basis)
            since_refactor = 0


def _objective_row(t: np.ndarray, c_ext: np.ndarray, basis: list[int]) -> np.ndarray:
    return c_ext[basis] @ t - np.append(c_ext, 0.0)


def _full_columns(
    a: np.ndarray, n: int, m: int, m_ub: int, flipped: np.ndarray, n_art: int
) -> np.ndarray:
    """Standard-form column matrix (sign-normalized rows): structural, slacks,
    then one artificial unit column per row that needed one."""
    full = np.zeros((m, n + m_ub + n_art))
    full[:, :n] = a
    for i in range(m_ub):
        full[i, n + i] = -1.0 if flipped[i] else 1.0
    art_col = n + m_ub
    for i in range(m):
        if i < m_ub and not flipped[i]:
            continue
        full[i, art_col] = 1.0
        art_col += 1
    return full


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Status-correct solution; deterministic given the instance."""
    n = lp.n_vars
    m_ub, m_eq = lp.n_ub, lp.n_eq
    m = m_ub + m_eq

    if m == 0:
        if np.any(lp.c > _OPT_TOL):
            return LpSolution(UNBOUNDED)
        return LpSolution(OPTIMAL, np.zeros(n), 0.0, np.zeros(0), np.zeros(0))

    a = np.zeros((m, n))
    b = np.zeros(m)
    if m_ub:
        a[:m_ub] = lp.a_ub
        b[:m_ub] = lp.b_ub
    if m_eq:
        a[m_ub:] = lp.a_eq
        b[m_ub:] = lp.b_eq

    flipped = b < 0
    a[flipped] *= -1.0
    b[flipped] *= -1.0

    art_rows = [i for i in range(m) if i >= m_ub or flipped[i]]
    n_art = len(art_rows)
    width = n + m_ub + n_art

    t = np.zeros((m, width + 1))
    t[:, :width] = _full_columns(a, n, m, m_ub, flipped, n_art)
    t[:, -1] = b
    t0 = t.copy()  # pristine standard form, for refactorization

    basis: list[int] = [-1] * m
    for i in range(m_ub):
        if not flipped[i]:
            basis[i] = n + i
    for idx, i in enumerate(art_rows):
        basis[i] = n + m_ub + idx

    is_artificial = np.zeros(width, dtype=bool)
    is_artificial[n + m_ub :] = True
    keep_rows = np.ones(m, dtype=bool)

    if n_art:
        c1 = np.zeros(width)
        c1[n + m_ub :] = -1.0
        obj1 = _objective_row(t, c1, basis)
        status = _simplex_iterate(t, obj1, basis, np.ones(width, dtype=bool), c1, t0)
        assert status == OPTIMAL  # phase-1 objective is bounded
        infeasibility = -obj1[-1]  # = sum of artificials at optimum
        if infeasibility > _FEAS_TOL:
            y = _basis_duals(t0, c1, basis, m, flipped, keep_rows)
            return LpSolution(INFEASIBLE, farkas_ub=y[:m_ub].copy(), farkas_eq=y[m_ub:].copy())
        for i in range(m):  # drive zero-level artificials out of the basis
            if basis[i] >= n + m_ub:
                pivot_col = next(
                    (j for j in range(n + m_ub) if abs(t[i, j]) > _PIVOT_TOL), -1
                )
                if pivot_col >= 0:
                    _pivot(t, obj1, basis, i, pivot_col)
                else:
                    keep_rows[i] = False  # redundant constraint
        if not np.all(keep_rows):
            rows = np.flatnonzero(keep_rows)
            t = t[rows]
            t0 = t0[rows]
            basis = [basis[i] for i in rows]

    c_ext = np.zeros(width)
    c_ext[:n] = lp.c
    obj = _objective_row(t, c_ext, basis)
    status = _simplex_iterate(t, obj, basis, ~is_artificial, c_ext, t0)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED)

    x = np.zeros(width)
    for i, bi in enumerate(basis):
        x[bi] = t[i, -1]
    x_out = x[:n].copy()
    y = _basis_duals(t0, c_ext, basis, m, flipped, keep_rows)
    return LpSolution(
        OPTIMAL,
        x_out,
        float(lp.c @ x_out),
        y[:m_ub].copy(),
        y[m_ub:].copy(),
    )


def _basis_duals(
    t0: np.ndarray,
    c_ext: np.ndarray,
    basis: list[int],
    m: int,
    flipped: np.ndarray,
    keep_rows: np.ndarray,
) -> np.ndarray:
    """y = c_B B^{-1} over surviving rows, mapped back to the original row
    orientation; dropped redundant rows get dual 0."""
    b_mat = t0[:, basis]
    try:
        y_rows = np.linalg.solve(b_mat.T, c_ext[np.asarray(basis)])
    except np.linalg.LinAlgError:
        y_rows = np.linalg.lstsq(b_mat.T, c_ext[np.asarray(basis)], rcond=None)[0]
    y = np.zeros(m)
    y[np.flatnonzero(keep_rows)] = y_rows
    y[flipped] *= -1.0
    return y


# ---------------------------------------------------------------------------
# Convex-hull membership with certificates


@dataclass
class HullResult:
    inside: bool
    weights: np.ndarray | None = None  # convex weights over the instants
    certificate: np.ndarray | None = None  # separating direction when outside


def check_hull_membership(point, vertices, validate=None) -> HullResult:
    """Feasibility LP for point in conv(vertices). Inside returns convex
    weights reconstructing the point; Outside returns a direction c with
    c @ point > max_i c @ vertex_i."""
    verts = [np.asarray(v, dtype=float) for v in vertices]
    if not verts:
        raise LpError("need at least one vertex")
    p = np.asarray(point, dtype=float)
    d = p.size
    if validate is not None:
        for v in verts:
            if not validate(v):
                raise LpError("vertex generator produced an infeasible instant")
    a_eq = np.vstack([np.column_stack(verts), np.ones((1, len(verts)))])
    b_eq = np.append(p, 1.0)
    sol = solve_lp(LinearProgram(c=np.zeros(len(verts)), a_eq=a_eq, b_eq=b_eq))
    if sol.status == OPTIMAL:
        return HullResult(True, weights=sol.x)
    if sol.status != INFEASIBLE:
        raise LpError(f"unexpected hull LP status {sol.status}")
    # Farkas: y @ [v_i; 1] >= 0 for every vertex while y @ [p; 1] < 0,
    # so c = -y[:d] satisfies c @ p > y[d] >= max_i c @ v_i.
    y = sol.farkas_eq
    cert = -y[:d]
    margin = cert @ p - max(cert @ v for v in verts)
    if margin <= 0:
        raise LpError("degenerate separation certificate")
    return HullResult(False, certificate=cert)


# ---------------------------------------------------------------------------
# Plain-text tableau round-trip (debugging aid)


def lp_to_text(lp: LinearProgram) -> str:
    lines = ["# lp v1", "max: " + " ".join(repr(float(v)) for v in lp.c)]
    for i in range(lp.n_ub):
        lines.append(
            "ub: " + " ".join(repr(float(v)) for v in lp.a_ub[i])
            + " <= " + repr(float(lp.b_ub[i]))
        )
    for i in range(lp.n_eq):
        lines.append(
            "eq: " + " ".join(repr(float(v)) for v in lp.a_eq[i])
            + " == " + repr(float(lp.b_eq[i]))
        )
    return "\n".join(lines) + "\n"


def lp_from_text(text: str) -> LinearProgram:
    c = None
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tag, rest = line.split(":", 1)
        if tag == "max":
            c = [float(v) for v in rest.split()]
        elif tag == "ub":
            lhs, rhs = rest.split("<=")
            a_ub.append([float(v) for v in lhs.split()])
            b_ub.append(float(rhs))
        elif tag == "eq":
            lhs, rhs = rest.split("==")
            a_eq.append([float(v) for v in lhs.split()])
            b_eq.append(float(rhs))
        else:
            raise LpError(f"unknown tableau line {tag!r}")
    if c is None:
        raise LpError("tableau text has no objective")
    return LinearProgram(
        np.array(c),
        np.array(a_ub) if a_ub else None,
        np.array(b_ub) if b_ub else None,
        np.array(a_eq) if a_eq else None,
        np.array(b_eq) if b_eq else None,
    )
