"""Fixed-step closed-loop simulation and exponential-decay checks."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, PreconditionError

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e9


# ------------------------------------------------------------------ targets


class TargetTrajectory:
    """A reference ``(x*(t), u*(t))``; subclasses may supply ``xdot``."""

    def __call__(self, t):
        raise NotImplementedError

    def xdot(self, t, h=1e-6):
        return (self(t + h)[0] - self(t - h)[0]) / (2 * h)

    def residual(self, model, times):
        """Largest ``|x*' - f(x*) - B(x*) u*|`` over ``times``."""
        worst = 0.0
        for t in times:
            xs, us = self(t)
            r = self.xdot(t) - model.vector_field(xs, us)
            worst = max(worst, float(np.linalg.norm(r)))
        return worst


class EquilibriumTarget(TargetTrajectory):
    def __init__(self, x, u):
        self.x = np.asarray(x, dtype=float)
        self.u = np.asarray(u, dtype=float)

    def __call__(self, t):
        return self.x, self.u

    def xdot(self, t, h=None):
        return np.zeros_like(self.x)


class FunctionTarget(TargetTrajectory):
    def __init__(self, fn, xdot=None):
        self.fn = fn
        self._xdot = xdot

    def __call__(self, t):
        x, u = self.fn(t)
        return np.asarray(x, float), np.asarray(u, float)

    def xdot(self, t, h=1e-6):
        if self._xdot is not None:
            return np.asarray(self._xdot(t), float)
        return super().xdot(t, h)


# ------------------------------------------------------------------- traces


@dataclass
class SimulationTrace:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    xstar: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def err(self):
        return np.linalg.norm(self.x - self.xstar, axis=1)

    @property
    def dt(self):
        return float(self.meta.get("dt", self.t[1] - self.t[0] if self.t.size > 1 else 0.0))

    def header(self):
        n, m = self.x.shape[1], self.u.shape[1]
        return (["t"] + [f"x_{k}" for k in range(1, n + 1)] + [f"u_{k}" for k in range(1, m + 1)]
                + [f"xstar_{k}" for k in range(1, n + 1)] + ["err_norm"])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        rows = np.hstack([self.t[:, None], self.x, self.u, self.xstar, self.err[:, None]])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def sidecar(self):
        return json.dumps(self.meta, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_csv(cls, text, meta=None):
        rows = list(csv.reader(io.StringIO(text)))
        head, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        n = sum(1 for h in head if h.startswith("x_"))
        m = sum(1 for h in head if h.startswith("u_"))
        return cls(data[:, 0], data[:, 1:1 + n], data[:, 1 + n:1 + n + m],
                   data[:, 1 + n + m:1 + 2 * n + m], dict(meta or {}))


# --------------------------------------------------------------- integrator


def integrate_closed_loop(model, controller, x0, target: TargetTrajectory, T_end, dt,
                          disturbance=None, region=None, meta=None):
    """Classical RK4 with the feedback re-evaluated at every stage.

    ``controller(x, x_star, u_star) -> u``; ``None`` runs open loop with
    ``u = u*``. ``disturbance(t)`` returns an additive state-derivative term.
    Leaving ``region`` (a :class:`Region`) only logs a warning; offending
    state and input indices are listed in the trace metadata.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    steps = int(round(T_end / dt))
    n, m = model.n, model.m
    x = np.asarray(x0, dtype=float).copy()
    if x.size != n:
        raise PreconditionError(f"x0 has {x.size} entries, model has {n} states")
    t_grid = np.arange(steps + 1) * dt
    X = np.zeros((steps + 1, n))
    U = np.zeros((steps + 1, m))
    XS = np.zeros((steps + 1, n))
    bounds = ubounds = None
    if region is not None:
        bounds = np.array([region.interval(v) for v in model.state_vars()])
        ubounds = np.array([region.interval(v) for v in model.input_vars()])
    warned, uwarned = set(), set()

    def control(t, xv):
        xs, us = target(t)
        u = us.copy() if controller is None else controller(xv, xs, us)
        return u, xs

    def rhs(t, xv):
        u, _ = control(t, xv)
        dx = model.vector_field(xv, u)
        if disturbance is not None:
            dx = dx + disturbance(t)
        return dx

    info = dict(meta or {})
    info.update(dt=dt, T_end=float(steps * dt), steps=steps)

    def partial(k):
        return SimulationTrace(t_grid[:k], X[:k], U[:k], XS[:k], dict(info, diverged=True))

    for k in range(steps + 1):
        t = t_grid[k]
        u, xs = control(t, x)
        X[k], U[k], XS[k] = x, u, xs
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            raise DivergenceError(f"state norm exceeded {DIVERGENCE_NORM:g} at t={t:g}", partial(k + 1))
        if bounds is not None:
            out = np.nonzero((x < bounds[:, 0] - 1e-9) | (x > bounds[:, 1] + 1e-9))[0]
            for c in out:
                if c not in warned:
                    warned.add(c)
                    log.warning("state %d left the certified region at t=%g", c + 1, t)
            out = np.nonzero((u < ubounds[:, 0] - 1e-9) | (u > ubounds[:, 1] + 1e-9))[0]
            for c in out:
                if c not in uwarned:
                    uwarned.add(c)
                    log.warning("input %d left the certified box at t=%g", c + 1, t)
        if k == steps:
            break
        k1 = rhs(t, x)
        k2 = rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = rhs(t + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    info["region_exits"] = sorted(int(c) + 1 for c in warned)
    info["input_exits"] = sorted(int(c) + 1 for c in uwarned)
    return SimulationTrace(t_grid, X, U, XS, info)


# -------------------------------------------------------------- decay check


def decay_check(trace: SimulationTrace, lam, floor=1e-8, c_max=None):
    """Fit ``log e(t) ~ a - r t`` where ``e > floor``.

    ``rate_fit`` is ``r``; ``C_fit`` is the smallest constant with
    ``e(t) <= C e^{-0.9 lam t} e(0)`` on the fitted window. Passes iff
    ``rate_fit >= 0.9 lam`` (and ``C_fit <= c_max`` when given).
    """
    e = trace.err
    t = trace.t
    if e.size == 0 or e[0] == 0.0:
        return {"pass": True, "rate_fit": float("inf"), "C_fit": 0.0, "samples": int(e.size)}
    mask = e > floor
    if mask.sum() < 2:
        rate = float("inf")
    else:
        slope, _ = np.polyfit(t[mask], np.log(e[mask]), 1)
        rate = float(-slope)
    C = float(np.max(e[mask] * np.exp(0.9 * lam * t[mask])) / e[0])
    ok = rate >= 0.9 * lam and (c_max is None or C <= c_max)
    return {"pass": bool(ok), "rate_fit": rate, "C_fit": C, "samples": int(mask.sum())}
