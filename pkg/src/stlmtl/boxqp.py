"""Box-constrained convex QP: projected Newton with an interior-point fallback.

Minimizes 0.5 x'Mx + c'x over lo <= x <= hi for positive semidefinite M.
Convergence is measured by the projected-gradient residual
||x - clip(x - grad, lo, hi)||_inf, which vanishes exactly at KKT points.
Projected Newton is the fast path; when it stalls (ill-conditioned M), a
Mehrotra interior-point pass identifies the active set and a Newton polish
finishes to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BIND_TOL = 1e-12


@dataclass
class BoxQPResult:
    x: np.ndarray
    value: float
    kkt_residual: float
    iterations: int
    converged: bool


def _qval(M, c, x) -> float:
    return float(0.5 * x @ M @ x + c @ x)


def _residual(M, c, lo, hi, x) -> float:
    return float(np.abs(x - np.clip(x - (M @ x + c), lo, hi)).max())


def _free_step(Mff: np.ndarray, gf: np.ndarray, span: float) -> np.ndarray:
    """Descent step for the free coordinates: Newton where M is invertible,
    least squares plus a null-space ray otherwise."""
    try:
        L = np.linalg.cholesky(Mff)
        return np.linalg.solve(L.T, np.linalg.solve(L, -gf))
    except np.linalg.LinAlgError:
        pass
    step, *_ = np.linalg.lstsq(Mff, -gf, rcond=None)
    resid = -(gf + Mff @ step)  # lies in null(Mff) for symmetric Mff
    rn = np.linalg.norm(resid)
    if rn > 1e-12 * (1.0 + np.linalg.norm(gf)):
        # The objective decreases linearly along resid; stretch it so the
        # line search starts at the scale of the box.
        step = step + resid * (span / rn)
    return step


def _projected_newton(M, c, lo, hi, x0, tol, max_iter=200) -> BoxQPResult:
    x = np.clip(x0, lo, hi)
    scale = max(1.0, float(np.abs(np.diag(M)).max()))
    span = float(np.max(hi - lo)) + 1.0
    best_x = x.copy()
    best_res = _residual(M, c, lo, hi, x)
    it = 0
    for it in range(1, max_iter + 1):
        g = M @ x + c
        residual = float(np.abs(x - np.clip(x - g, lo, hi)).max())
        if residual < best_res:
            best_res = residual
            best_x = x.copy()
        if residual <= tol:
            return BoxQPResult(x, _qval(M, c, x), residual, it - 1, True)

        clamped = ((x - lo <= _BIND_TOL * scale) & (g > 0)) | \
                  ((hi - x <= _BIND_TOL * scale) & (g < 0))
        free = ~clamped
        dx = np.zeros_like(x)
        if free.any():
            dx[free] = _free_step(M[np.ix_(free, free)], g[free], span)
        else:
            dx = -g

        # Projected backtracking line search (Armijo on the projected point).
        q0 = _qval(M, c, x)
        alpha = 1.0
        xn = x
        for _ in range(60):
            cand = np.clip(x + alpha * dx, lo, hi)
            delta = cand - x
            pred = g @ delta
            if pred < 0 and _qval(M, c, cand) <= q0 + 1e-4 * pred:
                xn = cand
                break
            alpha *= 0.5
        if xn is x:
            # Newton direction failed; try a plain projected-gradient step.
            t = 1.0 / scale
            for _ in range(60):
                cand = np.clip(x - t * g, lo, hi)
                if _qval(M, c, cand) < q0 - 1e-16 * (1 + abs(q0)):
                    xn = cand
                    break
                t *= 0.5
            if xn is x:
                break
        x = xn

    res = _residual(M, c, lo, hi, best_x)
    return BoxQPResult(best_x, _qval(M, c, best_x), res, it, res <= tol)


def _polish(M, c, lo, hi, x, passes: int = 4) -> np.ndarray:
    """Snap near-active coordinates onto their bounds and solve the free
    block exactly; one clean Newton solve once the active set is known."""
    span = np.maximum(hi - lo, 1e-30)
    gscale = max(1.0, float(np.abs(M @ x + c).max()))
    for _ in range(passes):
        g = M @ x + c
        at_lo = (x - lo <= 1e-7 * span) & (g >= -1e-9 * gscale)
        at_hi = (hi - x <= 1e-7 * span) & (g <= 1e-9 * gscale)
        free = ~(at_lo | at_hi)
        x = np.where(at_lo, lo, np.where(at_hi, hi, x))
        if free.any():
            Mff = M[np.ix_(free, free)]
            rhs = -c[free]
            if (~free).any():
                rhs = rhs - M[np.ix_(free, ~free)] @ x[~free]
            reg = 1e-14 * max(float(np.trace(M)) / len(c), 1.0)
            try:
                xf = np.linalg.solve(Mff + reg * np.eye(int(free.sum())), rhs)
            except np.linalg.LinAlgError:
                break
            x = x.copy()
            x[free] = xf
            x = np.clip(x, lo, hi)
    return x


def _max_step(s1, d1, s2, d2) -> float:
    """Largest alpha in (0, 1] with s + alpha*d > 0 for both pairs."""
    alpha = 1.0
    for s, d in ((s1, d1), (s2, d2)):
        neg = d < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-s[neg] / d[neg])))
    return max(min(alpha, 1.0), 0.0)


def _ipm_boxqp(M, c, lo, hi, tol, max_iter=60) -> BoxQPResult:
    """Primal-dual interior point (Mehrotra predictor-corrector).

    The barrier adds a strictly positive diagonal to every Newton system,
    so ill-conditioned or singular M needs no damping heuristics.
    """
    n = c.size
    span = hi - lo
    x = lo + 0.5 * span
    sl = np.maximum(x - lo, 1e-3 * (1 + span))
    su = np.maximum(hi - x, 1e-3 * (1 + span))
    zl = np.ones(n)
    zu = np.ones(n)
    best_x = x.copy()
    best_res = _residual(M, c, lo, hi, x)
    it = 0
    for it in range(1, max_iter + 1):
        rd = M @ x + c - zl + zu
        mu = (sl @ zl + su @ zu) / (2 * n)
        residual = _residual(M, c, lo, hi, x)
        if residual < best_res:
            best_res = residual
            best_x = x.copy()
        if residual <= tol:
            return BoxQPResult(x, _qval(M, c, x), residual, it - 1, True)
        if mu < 1e-16:
            break  # complementarity at machine limits; polish from here

        D = M + np.diag(zl / sl + zu / su)
        try:
            L = np.linalg.cholesky(D)
        except np.linalg.LinAlgError:
            L = np.linalg.cholesky(D + 1e-14 * max(np.trace(D), 1.0) * np.eye(n))

        def newton(rhs_l, rhs_u):
            # Zl*dsl + Sl*dzl = rhs_l - Sl Zl e with dsl = dx (mirror for u)
            tl = (rhs_l - sl * zl) / sl
            tu = (rhs_u - su * zu) / su
            dx = np.linalg.solve(L.T, np.linalg.solve(L, -rd + tl - tu))
            dzl = tl - (zl / sl) * dx
            dzu = tu + (zu / su) * dx
            return dx, dzl, dzu

        dx_a, dzl_a, dzu_a = newton(np.zeros(n), np.zeros(n))
        a_p = _max_step(sl, dx_a, su, -dx_a)
        a_d = _max_step(zl, dzl_a, zu, dzu_a)
        mu_aff = ((sl + a_p * dx_a) @ (zl + a_d * dzl_a)
                  + (su - a_p * dx_a) @ (zu + a_d * dzu_a)) / (2 * n)
        sigma = min((mu_aff / mu) ** 3, 1.0) if mu > 0 else 0.0
        dx, dzl, dzu = newton(sigma * mu - dx_a * dzl_a, sigma * mu + dx_a * dzu_a)
        frac = max(0.995, 1.0 - mu)  # approach the boundary faster near the end
        a_p = frac * _max_step(sl, dx, su, -dx)
        a_d = frac * _max_step(zl, dzl, zu, dzu)
        if a_p < 1e-12 and a_d < 1e-12:
            break  # no representable progress left
        x = x + a_p * dx
        floor = 1e-16 * (1.0 + span)
        sl = np.maximum(x - lo, floor)
        su = np.maximum(hi - x, floor)
        zl = np.maximum(zl + a_d * dzl, 1e-16)
        zu = np.maximum(zu + a_d * dzu, 1e-16)

    res = _residual(M, c, lo, hi, best_x)
    return BoxQPResult(best_x, _qval(M, c, best_x), res, it, res <= tol)


def solve_boxqp(M: np.ndarray, c: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                x0: np.ndarray | None = None, tol: float = 1e-8,
                max_iter: int = 200) -> BoxQPResult:
    M = np.asarray(M, dtype=float)
    c = np.asarray(c, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise ValueError("empty box: lo > hi")

    if not M.any():
        # Pure linear objective: the box solves it coordinate-wise.
        x = np.where(c > 0, lo, np.where(c < 0, hi, np.clip(0.0, lo, hi)))
        return BoxQPResult(x, _qval(M, c, x), 0.0, 0, True)

    start = np.zeros_like(c) if x0 is None else np.asarray(x0, dtype=float)
    best = _projected_newton(M, c, lo, hi, start, tol, max_iter)
    if best.converged:
        return best

    ipm = _ipm_boxqp(M, c, lo, hi, tol)
    if ipm.kkt_residual < best.kkt_residual:
        best = ipm
    if best.converged:
        return best

    # Let the active-set polish and a final projected-Newton pass finish.
    x = _polish(M, c, lo, hi, best.x.copy())
    res = _residual(M, c, lo, hi, x)
    if res < best.kkt_residual:
        best = BoxQPResult(x, _qval(M, c, x), res, best.iterations, res <= tol)
    if best.converged:
        return best
    final = _projected_newton(M, c, lo, hi, best.x.copy(), tol, 50)
    if final.kkt_residual < best.kkt_residual:
        best = final
    return best
