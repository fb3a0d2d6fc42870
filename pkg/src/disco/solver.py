"""Embedded first-order conic solver.

Solves the standard form produced by :func:`disco.conic.lower_problem`,

    minimize c'x  s.t.  Ax + s = b,  s in K,

together with its dual (maximize -b'y s.t. A'y + c = 0, y in K*), by ADMM on
the homogeneous self-dual embedding.  Each iteration does one solve with the
once-factored matrix ``I + A'A`` and one projection onto
``R^n x K* x R_+``.  Supported cones are Zero, Free, NonNeg and SecondOrder.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conic import Cone, ConeKind, ConicProblem, lower_problem, required_cones
from .expr import Problem

log = logging.getLogger(__name__)


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


class UnsupportedConeError(ValueError):
    pass


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"
    UNSUPPORTED_CONE = "UnsupportedCone"
    NUMERICAL_ERROR = "NumericalError"


@dataclass(frozen=True)
class SolveSettings:
    abstol: float = 1e-7
    reltol: float = 1e-7
    feastol: float = 1e-7
    max_iters: int = 100_000
    alpha: float = 1.5
    scale: float = 1.0
    # Ruiz equilibration passes; 0 disables scaling
    equilibrate_iters: int = 25
    check_every: int = 10

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if min(self.abstol, self.reltol, self.feastol) < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class Solution:
    status: SolveStatus
    optval: float
    primal: dict = field(default_factory=dict)
    duals: dict = field(default_factory=dict)
    iterations: int = 0
    residuals: tuple[float, float, float] = (np.inf, np.inf, np.inf)
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    s: np.ndarray | None = None
    message: str = ""
    solve_seconds: float = 0.0


SUPPORTED = frozenset({ConeKind.ZERO, ConeKind.FREE, ConeKind.NONNEG, ConeKind.SOC})


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------


def _soc_rows(v: np.ndarray) -> np.ndarray:
    """Project each row (t, x) of ``v`` onto the second-order cone."""
    t = v[:, 0]
    x = v[:, 1:]
    nx = np.linalg.norm(x, axis=1)
    out = np.zeros_like(v)
    inside = nx <= t
    out[inside] = v[inside]
    edge = ~inside & (nx > -t)
    a = (nx[edge] + t[edge]) / 2
    out[edge, 0] = a
    out[edge, 1:] = x[edge] * (a / nx[edge])[:, None]
    return out


def project(cone: Cone, v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``cone``."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != cone.dim:
        raise ValueError(f"expected {cone.dim} entries, got {v.size}")
    kind = cone.kind
    if kind is ConeKind.ZERO:
        return np.zeros_like(v)
    if kind is ConeKind.FREE:
        return v.copy()
    if kind is ConeKind.NONNEG:
        return np.maximum(v, 0.0)
    if kind is ConeKind.SOC:
        return _soc_rows(v[None, :])[0]
    raise UnsupportedConeError(f"no embedded projection onto the {kind.value} cone")


def dual_cone(cone: Cone) -> Cone:
    if cone.kind is ConeKind.ZERO:
        return Cone(ConeKind.FREE, cone.dim)
    if cone.kind is ConeKind.FREE:
        return Cone(ConeKind.ZERO, cone.dim)
    # NonNeg, SecondOrder and PSD are self-dual; exponential cones are never
    # projected here
    return cone


def project_dual(cone: Cone, v) -> np.ndarray:
    return project(dual_cone(cone), v)


class _ProductProjector:
    """Projection onto a product of cones, vectorized over SOC blocks of equal size."""

    def __init__(self, cones: list[Cone], dual: bool):
        self.free, self.zero, self.nonneg = [], [], []
        socs: dict[int, list[int]] = {}
        row = 0
        for cone in cones:
            c = dual_cone(cone) if dual else cone
            idx = np.arange(row, row + c.dim)
            if c.kind is ConeKind.FREE:
                self.free.append(idx)
            elif c.kind is ConeKind.ZERO:
                self.zero.append(idx)
            elif c.kind is ConeKind.NONNEG:
                self.nonneg.append(idx)
            elif c.kind is ConeKind.SOC:
                socs.setdefault(c.dim, []).append(row)
            else:
                raise UnsupportedConeError(
                    f"no embedded projection onto the {c.kind.value} cone")
            row += c.dim
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        self.zero = cat(self.zero)
        self.nonneg = cat(self.nonneg)
        self.soc = {d: np.asarray(starts)[:, None] + np.arange(d)[None, :]
                    for d, starts in sorted(socs.items())}

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        out[self.zero] = 0.0
        out[self.nonneg] = np.maximum(v[self.nonneg], 0.0)
        for idx in self.soc.values():
            out[idx] = _soc_rows(v[idx])
        return out


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


def _block_groups(cones: list[Cone]) -> list[np.ndarray]:
    """Row groups that must share one scale factor (each SOC block)."""
    groups = []
    row = 0
    for cone in cones:
        if cone.kind is ConeKind.SOC:
            groups.append(np.arange(row, row + cone.dim))
        row += cone.dim
    return groups


def _equilibrate(A: sp.csr_matrix, cones: list[Cone], iters: int):
    m, n = A.shape
    d, e = np.ones(m), np.ones(n)
    if iters == 0 or A.nnz == 0:
        return A, d, e
    groups = _block_groups(cones)
    M = A.copy().tocsc()
    absM = abs(M)
    for _ in range(iters):
        rn = np.sqrt(np.asarray(absM.max(axis=1).todense()).ravel())
        cn = np.sqrt(np.asarray(absM.max(axis=0).todense()).ravel())
        rn[rn < 1e-4] = 1.0
        cn[cn < 1e-4] = 1.0
        for g in groups:
            rn[g] = rn[g].max()
        dr, dc = 1.0 / rn, 1.0 / cn
        d *= dr
        e *= dc
        M = sp.diags(dr) @ M @ sp.diags(dc)
        absM = abs(M)
    # keep factors in a sane range
    d = np.clip(d, 1e-4, 1e4)
    e = np.clip(e, 1e-4, 1e4)
    M = (sp.diags(d) @ A @ sp.diags(e)).tocsr()
    return M, d, e


# ---------------------------------------------------------------------------
# The solver
# ---------------------------------------------------------------------------


def solve_conic(cp: ConicProblem, settings: SolveSettings | None = None) -> Solution:
    s = settings or SolveSettings()
    t0 = time.perf_counter()
    kinds = required_cones(cp)
    if not kinds <= SUPPORTED:
        bad = ", ".join(sorted(k.value for k in kinds - SUPPORTED))
        return Solution(SolveStatus.UNSUPPORTED_CONE, np.nan,
                        message=f"the embedded solver does not handle {bad} cones; "
                                "use `disco compile` to export the conic form")
    m, n = cp.A.shape
    A, b, c = cp.A, cp.b, cp.c
    nb, nc = _inf_norm(b), _inf_norm(c)

    Ah, D, E = _equilibrate(A, cp.cones, s.equilibrate_iters)
    bh, ch = D * b, E * c
    beta = max(_inf_norm(bh), 1.0) / s.scale
    gamma = max(_inf_norm(ch), 1.0) / s.scale
    bh, ch = bh / beta, ch / gamma

    try:
        K = (sp.identity(n, format="csc") + (Ah.T @ Ah)).tocsc()
        lu = spla.splu(K, permc_spec="COLAMD")
    except RuntimeError as exc:
        return Solution(SolveStatus.NUMERICAL_ERROR, np.nan, message=str(exc))
    AhT = Ah.T.tocsr()

    def solve_m(rx, ry):
        # [[I, A'], [-A, I]] [zx; zy] = [rx; ry]
        zx = lu.solve(rx - AhT @ ry)
        return zx, ry + Ah @ zx

    gx, gy = solve_m(ch, bh)
    denom = 1.0 + ch @ gx + bh @ gy
    proj_dual = _ProductProjector(cp.cones, dual=True)

    # u = (x, y, tau), v = (r, s, kappa)
    ux, uy, ut = np.zeros(n), np.zeros(m), 1.0
    vx, vy, vt = np.zeros(n), np.zeros(m), 1.0
    alpha = s.alpha
    status = SolveStatus.ITER_LIMIT
    res = (np.inf, np.inf, np.inf)
    it = 0
    for it in range(1, s.max_iters + 1):
        wx, wy, wt = ux + vx, uy + vy, ut + vt
        px, py = solve_m(wx, wy)
        tt = (wt + ch @ px + bh @ py) / denom
        tx, ty = px - tt * gx, py - tt * gy
        # over-relaxation
        rx = alpha * tx + (1 - alpha) * ux
        ry = alpha * ty + (1 - alpha) * uy
        rt = alpha * tt + (1 - alpha) * ut
        ux = rx - vx
        uy = proj_dual(ry - vy)
        ut = max(rt - vt, 0.0)
        vx = vx - rx + ux
        vy = vy - ry + uy
        vt = vt - rt + ut

        if it % s.check_every and it != s.max_iters:
            continue
        if ut > 1e-12:
            x = beta * E * ux / ut
            y = gamma * D * uy / ut
            sl = beta * vy / D / ut
            pobj = c @ x
            pres = _inf_norm(A @ x + sl - b)
            dres = _inf_norm(A.T @ y + c)
            gap = abs(pobj + b @ y)
            res = (pres, dres, gap)
            if (pres <= s.feastol * (1 + nb) and dres <= s.feastol * (1 + nc)
                    and gap <= s.abstol + s.reltol * abs(pobj)):
                status = SolveStatus.OPTIMAL
                break
        cert = _certificate(A, b, c, E * ux, D * uy, vy / D, s.feastol)
        if cert is not None:
            status = cert
            break

    elapsed = time.perf_counter() - t0
    if status is SolveStatus.INFEASIBLE:
        y = D * uy
        y = y / -(b @ y)
        sol = Solution(status, np.inf, iterations=it, y=y, residuals=res)
    elif status is SolveStatus.UNBOUNDED:
        x = E * ux
        x = x / -(c @ x)
        sol = Solution(status, -np.inf, iterations=it, x=x, residuals=res)
    else:
        tau = ut if ut > 1e-12 else 1.0
        x = beta * E * ux / tau
        y = gamma * D * uy / tau
        sl = beta * vy / D / tau
        sol = Solution(status, float(c @ x), iterations=it, residuals=res, x=x, y=y, s=sl)
    sol.solve_seconds = elapsed
    log.debug("solve_conic: %s after %d iterations", status.value, it)
    return sol


def _certificate(A, b, c, x, y, sl, tol):
    """Infeasibility or unboundedness ray, if the iterate carries one."""
    by = b @ y
    if by < 0:
        yn = y / -by
        if _inf_norm(A.T @ yn) <= tol:
            return SolveStatus.INFEASIBLE
    cx = c @ x
    if cx < 0:
        xn, sn = x / -cx, sl / -cx
        if _inf_norm(A @ xn + sn) <= tol:
            return SolveStatus.UNBOUNDED
    return None


# ---------------------------------------------------------------------------
# Problem-level entry points
# ---------------------------------------------------------------------------

# backends by the cone kinds they accept, tried in order
DISPATCH: list[tuple[frozenset, object]] = [(SUPPORTED, solve_conic)]


def select_backend(kinds: set[ConeKind]):
    for accepted, backend in DISPATCH:
        if kinds <= accepted:
            return backend
    return None


def compile(p: Problem, memoize: bool = True) -> ConicProblem:
    return lower_problem(p, memoize=memoize)


def solve_compiled(p: Problem, cp: ConicProblem,
                   settings: SolveSettings | None = None) -> Solution:
    backend = select_backend(required_cones(cp))
    if backend is None:
        sol = solve_conic(cp, settings)  # reports the unsupported cones
    else:
        sol = backend(cp, settings)
    _write_back(p, cp, sol)
    return sol


def solve(p: Problem, settings: SolveSettings | None = None, *, memoize: bool = True,
          **overrides) -> Solution:
    """DCP check, lowering, dispatch, solve, and write-back onto ``p``.

    Keyword overrides (``abstol=...`` etc.) adjust ``settings``.
    """
    settings = settings or SolveSettings()
    if overrides:
        settings = replace(settings, **overrides)
    cp = lower_problem(p, memoize=memoize)
    return solve_compiled(p, cp, settings)


def _write_back(p: Problem, cp: ConicProblem, sol: Solution) -> None:
    flip = -1.0 if cp.sense_flip else 1.0
    p.status = sol.status.value
    if sol.status is SolveStatus.OPTIMAL or sol.status is SolveStatus.ITER_LIMIT:
        sol.optval = flip * (sol.optval + cp.objective_offset)
    elif sol.status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
        sol.optval = flip * sol.optval
    p.optval = sol.optval
    if sol.x is None or sol.status not in (SolveStatus.OPTIMAL, SolveStatus.ITER_LIMIT):
        return
    for vid, var in cp.variables.items():
        start, length = cp.var_index[vid]
        val = sol.x[start:start + length].reshape(var.shape.rows, var.shape.cols, order="F")
        var.value = val
        sol.primal[vid] = val
    for i, con in enumerate(p.constraints):
        start, length = cp.constraint_rows[i]
        shape = cp.constraint_shapes[i]
        dual = sol.y[start:start + length].reshape(shape.rows, shape.cols, order="F")
        con.dual_value = dual
        sol.duals[i] = dual
