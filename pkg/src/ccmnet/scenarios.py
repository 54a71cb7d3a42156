"""Model builders and scenarios for the two shipped case studies."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .graphs import DirectedGraph, banded, complete, empty
from .network import NetworkModel, NodeSpec, differential_matrices, StackedPoint
from .poly import PolyMatrix, Polynomial, xvar
from .simulate import EquilibriumTarget, FunctionTarget, integrate_closed_loop
from .synthesis.ansatz import Region, xi_pattern
from .synthesis.ccm import solve_ccm
from .synthesis.hinf import hinf_structured

log = logging.getLogger(__name__)

STRUCTURES = {
    "complete": complete,
    "neighbor": lambda N: banded(N, 1),
    "decentralized": empty,
}


# ----------------------------------------------------------- cubic network


def build_cubic_network(N, structure="decentralized", coupling=0.01):
    """String of nodes ``x' = -x - x^3 + y^2 + c (x_{i-1}^3 - 2 x_i^3 + x_{i+1}^3)``, ``y' = u``.

    Boundary states are mirrored (``x_0 = x_1``, ``x_{N+1} = x_N``).
    ``structure`` picks the communication graph: ``complete``,
    ``neighbor`` or ``decentralized``, or pass a :class:`DirectedGraph`.
    """
    if N < 1:
        raise ValueError("N must be positive")
    nodes = []
    for i in range(1, N + 1):
        x = Polynomial.var(xvar(i, 1))
        y = Polynomial.var(xvar(i, 2))
        left = Polynomial.var(xvar(max(i - 1, 1), 1))
        right = Polynomial.var(xvar(min(i + 1, N), 1))
        fx = -x - x ** 3 + y ** 2 + coupling * (left ** 3 - 2.0 * x ** 3 + right ** 3)
        nodes.append(NodeSpec(2, 1, PolyMatrix.column([fx, Polynomial()]),
                              PolyMatrix.from_array(np.array([[0.0], [1.0]]))))
    g_p = DirectedGraph(N, frozenset((i, i + 1) for i in range(1, N)) | frozenset((i + 1, i) for i in range(1, N)))
    g_c = structure if isinstance(structure, DirectedGraph) else STRUCTURES[structure](N)
    name = structure if isinstance(structure, str) else "custom"
    return NetworkModel(nodes, g_p, g_c, name=f"cubic-{name}-{N}", meta={"example": "cubic", "N": N})


def cubic_region(bound=2.0):
    return Region(default_x=(-bound, bound))


def cubic_target(model):
    return EquilibriumTarget(np.zeros(model.n), np.zeros(model.m))


def random_initial_states(model, region, count, seed=0):
    rng = np.random.default_rng(seed)
    lo = np.array([region.interval(v)[0] for v in model.state_vars()])
    hi = np.array([region.interval(v)[1] for v in model.state_vars()])
    return [rng.uniform(lo, hi) for _ in range(count)]


# ----------------------------------------------------------------- platoon

PLATOON_RANGES = {
    "mass": (1800.0, 2000.0),      # kg
    "k_d": (1.3, 1.6),             # kg/m
    "alpha": (13.0, 16.0),
    "beta": (0.28, 0.35),
}
OMEGA_M = 420.0
TORQUE_M = 190.0
V_NOMINAL = 25.0


@dataclass
class VehicleParams:
    mass: float
    k_d: float
    alpha: float
    beta: float
    omega_m: float = OMEGA_M
    torque_m: float = TORQUE_M

    def drive(self, v):
        """Drivetrain force ``alpha T_m (1 - beta (alpha v / omega_m - 1)^2)``."""
        return self.alpha * self.torque_m * (1.0 - self.beta * (self.alpha * v / self.omega_m - 1.0) ** 2)

    def drive_poly(self, v: Polynomial):
        r = self.alpha / self.omega_m
        return self.alpha * self.torque_m * (1.0 - self.beta * (r * v - 1.0) ** 2)

    def u_equilibrium(self, v):
        return self.k_d * v * v / (2.0 * self.drive(v))


@dataclass
class PlatoonInfo:
    params: list
    seed: int
    v_nominal: float
    u_nominal: np.ndarray
    spacing: float
    horizon: int
    extra: dict = field(default_factory=dict)


def draw_platoon_params(N, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(N):
        vals = {k: float(rng.uniform(*rng_range)) for k, rng_range in PLATOON_RANGES.items()}
        out.append(VehicleParams(**vals))
    return out


def build_platoon(N, seed=0, horizon=0, spacing=20.0, v_nominal=V_NOMINAL):
    """Heterogeneous platoon in spacing coordinates ``(s_1, v_1, s_1 - s_2, v_2, ...)``.

    Node ``i`` holds ``(d_i, v_i)`` with ``d_1 = s_1``; the physical graph is
    the leader-to-follower chain, communication is ``banded(N, horizon)``.
    Returns ``(model, info)``.
    """
    if N < 2:
        raise ValueError("a platoon needs at least two vehicles")
    params = draw_platoon_params(N, seed)
    nodes = []
    for i, p in enumerate(params, start=1):
        v = Polynomial.var(xvar(i, 2))
        if i == 1:
            fd = v
        else:
            fd = Polynomial.var(xvar(i - 1, 2)) - v
        fv = v * v * (-p.k_d / (2.0 * p.mass))
        b = p.drive_poly(v) * (1.0 / p.mass)
        nodes.append(NodeSpec(2, 1, PolyMatrix.column([fd, fv]), PolyMatrix([[Polynomial()], [b]])))
    g_p = DirectedGraph(N, frozenset((i, i + 1) for i in range(1, N)))
    g_c = banded(N, horizon)
    model = NetworkModel(nodes, g_p, g_c, name=f"platoon-h{horizon}-{N}",
                         meta={"example": "platoon", "N": N, "seed": seed})
    u_nom = np.array([p.u_equilibrium(v_nominal) for p in params])
    info = PlatoonInfo(params, seed, v_nominal, u_nom, spacing, horizon)
    return model, info


def platoon_region(N, v_max=50.0, u_box=(-500.0, 500.0)):
    intervals = {}
    for i in range(1, N + 1):
        intervals[xvar(i, 2)] = (0.0, v_max)
    region = Region(intervals, default_x=(-np.inf, np.inf), default_u=u_box)
    return region


def platoon_state(N, v, spacing, s1=0.0):
    x = np.zeros(2 * N)
    x[0], x[1] = s1, v
    for i in range(2, N + 1):
        x[2 * i - 2], x[2 * i - 1] = spacing, v
    return x


def platoon_disturbance(t):
    """Leader disturbance: a 5 s sine burst from t = 95 and a step of 10 from t = 180."""
    if 95.0 <= t <= 100.0:
        return 20.0 * np.sin(2.0 * np.pi * (t - 95.0) / 10.0)
    if t >= 180.0:
        return 10.0
    return 0.0


HINF_WEIGHTS = {"v1": 1e-2, "s1": 1.0, "u1": 3e5, "s": 1e3, "u": 5e4}


def platoon_linearization(model, info):
    """``(A, B, H, C, D)`` at the nominal point with the weighted performance output."""
    N = model.N
    x = platoon_state(N, info.v_nominal, info.spacing)
    A, B = differential_matrices(model, StackedPoint.make(model, x, info.u_nominal))
    H = np.zeros((model.n, 1))
    H[1, 0] = 1.0
    q = info.extra.get("weights", HINF_WEIGHTS)
    rows_C, rows_D = [], []

    def out(ci=None, di=None, w=1.0):
        c = np.zeros(model.n)
        d = np.zeros(model.m)
        if ci is not None:
            c[ci] = w
        if di is not None:
            d[di] = w
        rows_C.append(c)
        rows_D.append(d)

    out(ci=1, w=q["v1"])
    out(ci=0, w=q["s1"])
    out(di=0, w=q["u1"])
    for i in range(2, N + 1):
        out(ci=2 * i - 2, w=q["s"])
        out(di=i - 1, w=q["u"])
    return A, B, H, np.array(rows_C), np.array(rows_D)


def platoon_hinf(model, info, **kw):
    A, B, H, C, D = platoon_linearization(model, info)
    pattern = sorted(xi_pattern(model.g_c, model))
    return hinf_structured(A, B, H, C, D, pattern, [s.n for s in model.nodes],
                           [s.m for s in model.nodes], **kw)


def platoon_anchor(model, info, K):
    return {"x": platoon_state(model.N, info.v_nominal, info.spacing), "K": np.asarray(K)}


def synthesize_platoon(model, info, config, anchor_decay=None, stats=None):
    """Anchored platoon synthesis.

    The structured H-infinity gain is designed with decay rate
    ``anchor_decay`` (default: twice the synthesis rate ``lam (1 + headroom)``)
    and imposed as ``Y(x_nom) = K W(x_nom)``. Returns ``(cert, hinf)``.
    """
    if anchor_decay is None:
        anchor_decay = 2.0 * config.lam * (1.0 + config.rate_headroom)
    hinf = platoon_hinf(model, info, decay=anchor_decay)
    cfg = replace(config, anchor=platoon_anchor(model, info, hinf["K"]))
    cert = solve_ccm(model, cfg, stats=stats)
    cert.meta["anchor_decay"] = float(anchor_decay)
    cert.meta["hinf_alpha"] = float(hinf["alpha"])
    return cert, hinf


class PlatoonTarget(FunctionTarget):
    """Constant spacing, leader speed stepping from ``v0`` to ``v1`` at ``t_step``."""

    def __init__(self, info: PlatoonInfo, v0=10.0, v1=5.0, t_step=5.0, step=True):
        self.info = info
        self.v0, self.v1, self.t_step, self.step = v0, (v1 if step else v0), t_step, step
        N = len(info.params)
        self._u = {v: np.array([p.u_equilibrium(v) for p in info.params]) for v in {self.v0, self.v1}}
        self.N = N
        super().__init__(self._eval, self._xdot)

    def speed(self, t):
        return self.v1 if t >= self.t_step else self.v0

    def _eval(self, t):
        v = self.speed(t)
        s1 = self.v0 * min(t, self.t_step) + self.v1 * max(t - self.t_step, 0.0)
        return platoon_state(self.N, v, self.info.spacing, s1), self._u[v]

    def _xdot(self, t):
        d = np.zeros(2 * self.N)
        d[0] = self.speed(t)
        return d


@dataclass
class ScenarioResult:
    trace: object
    velocity: np.ndarray
    spacing_error: np.ndarray
    peaks: dict


def scenario_platoon_tracking(model, info, controller, T_end=250.0, dt=0.05, step=True,
                              disturbance=True, x0=None, region=None):
    """Velocity step plus leader disturbance; returns traces and peak metrics.

    Starts on the initial target unless ``x0`` is given.
    """
    target = PlatoonTarget(info, step=step)
    if x0 is None:
        x0 = target(0.0)[0]
    N = model.N
    dist = None
    if disturbance:
        def dist(t):
            w = np.zeros(model.n)
            w[1] = platoon_disturbance(t)
            return w
    trace = integrate_closed_loop(model, controller, x0, target, T_end, dt, dist, region,
                                  meta={"scenario": "platoon_tracking", "seed": info.seed,
                                        "horizon": info.horizon})
    vel = trace.x[:, 1::2]
    spacing_err = trace.x[:, 2::2] - trace.xstar[:, 2::2]
    t = trace.t

    def peak(mask):
        return float(np.abs(spacing_err[mask]).max()) if mask.any() else 0.0

    peaks = {
        "spacing_all": peak(np.ones_like(t, bool)),
        "spacing_step": peak((t >= 5.0) & (t < 95.0)),
        "spacing_burst": peak((t >= 95.0) & (t < 180.0)),
        "spacing_constant": peak(t >= 180.0),
        "velocity_error_all": float(np.abs(trace.x[:, 1::2] - trace.xstar[:, 1::2]).max()),
        "error_at_95": float(trace.err[np.searchsorted(t, 95.0) - 1]) if t[-1] >= 95 else None,
        "error_at_180": float(trace.err[np.searchsorted(t, 180.0) - 1]) if t[-1] >= 180 else None,
        "burst_peak_error": float(trace.err[(t >= 95.0) & (t < 180.0)].max()) if t[-1] >= 180 else None,
    }
    return ScenarioResult(trace, vel, spacing_err, peaks)
