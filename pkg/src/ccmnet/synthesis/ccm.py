"""Grid-enforced synthesis and verification of separable contraction metrics.

The pointwise inequality is imposed on a tensor grid over the region. When
chordal splitting is on, each clique matrix ``F_k`` only depends on the
coordinates of its own nodes (and their neighbours), so each clique gets its
own, much smaller grid. Grid points enter the conic program lazily: start
from a random subset, solve, scan the full grid for violators, add the worst,
repeat; finally verify the resolved certificate on a finer grid.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, PreconditionError, SynthesisFailed
from ..graphs import CliqueTree, clique_tree, graph_union, triangulate, undirected_companion
from ..network import NetworkModel, StackedPoint, differential_matrices, stack_dynamics
from ..poly import PolyMatrix, Polynomial, directional_matrix_derivative, jacobian, monomials_upto
from .ansatz import GainAnsatz, MetricAnsatz, ParamRegistry, Region, resolve_blocks
from .certificate import CCMCertificate
from .lmi import CliqueLMI, TensorGrid, chordal_split, scan_max_eig, synthesis_blocks
from .solver import LMIProblem, lmi_feasibility

log = logging.getLogger(__name__)


OBJECTIVES = ("min_norm", "flat_gain")


@dataclass
class SynthesisConfig:
    """Knobs of :func:`solve_ccm`.

    ``grid_density`` is the number of samples per gridded coordinate;
    ``verify_density`` is the refinement factor of the verification grid,
    which has ``verify_density * (grid_density - 1) + 1`` samples per axis
    (so it contains the synthesis grid). The LMIs are imposed at the boosted
    rate ``lam * (1 + rate_headroom)`` and verified at ``lam``.
    """

    lam: float
    epsilon: float | None = None
    grid_density: int = 5
    verify_density: int = 2
    use_chordal: bool = True
    metric_degree: int = 0
    max_degree_Y: int = 2
    seed: int = 0
    w_low: float = 1e-2
    w_high: float = 1e2
    region: Region = field(default_factory=Region)
    rate_headroom: float = 1.0
    init_samples: int = 64
    add_per_round: int = 32
    max_rounds: int = 60
    max_grid_points: int = 2_000_000
    zero_gain: bool = False
    anchor: dict | None = None
    objective: str = "min_norm"
    threads: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.epsilon is None:
            self.epsilon = 1e-3 * self.lam * self.w_low
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.grid_density < 1 or self.verify_density < 1:
            raise ValueError("grid densities must be >= 1")
        if not 0 < self.w_low <= self.w_high:
            raise ValueError("need 0 < w_low <= w_high")
        if self.rate_headroom < 0:
            raise ValueError("rate_headroom must be >= 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")

    @property
    def verify_points(self):
        return self.verify_density * (self.grid_density - 1) + 1


def refined_density(grid_density, factor):
    return int(round(factor * (grid_density - 1))) + 1


# ---------------------------------------------------------- decomposition


def single_clique(N) -> CliqueTree:
    nodes = tuple(range(1, N + 1))
    return CliqueTree((frozenset(nodes),), frozenset(), (nodes,))


def decomposition(model: NetworkModel, use_chordal=True):
    """Clique tree of the triangulated union graph, plus the fill edges.

    Without chordal splitting the whole network is a single clique.
    """
    if not use_chordal:
        return single_clique(model.N), []
    g = undirected_companion(graph_union(model.g_p, model.g_c))
    chordal, fill = triangulate(g)
    return clique_tree(chordal), sorted(fill)


def clique_grid(variables, region: Region, density):
    unbounded = [str(v) for v in variables if not region.is_bounded(v)]
    if unbounded:
        raise PreconditionError(
            "the synthesis matrix depends on unbounded coordinates: " + ", ".join(unbounded)
        )
    return TensorGrid([region.points(v, density) for v in variables])


def _map_pool(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _scan(lmi: CliqueLMI, grid: TensorGrid, coef, threshold, keep):
    """Worst eigenvalue over ``grid`` and the ``keep`` worst violators."""
    worst, worst_z = -np.inf, None
    cand_l, cand_z = [], []
    for _, Z in grid.chunks():
        F = lmi.matrices(Z, coef=coef)
        w, wi, idx, lam = scan_max_eig(F, threshold)
        if w > worst:
            worst, worst_z = w, Z[wi]
        if keep and idx.size:
            if idx.size > keep:
                top = np.argpartition(-lam, keep - 1)[:keep]
                idx, lam = idx[top], lam[top]
            cand_l.append(lam)
            cand_z.append(Z[idx])
            all_l = np.concatenate(cand_l)
            if all_l.size > keep:
                all_z = np.concatenate(cand_z)
                top = np.argsort(-all_l, kind="stable")[:keep]
                cand_l, cand_z = [all_l[top]], [all_z[top]]
    if cand_l:
        all_l, all_z = np.concatenate(cand_l), np.concatenate(cand_z)
        order = np.argsort(-all_l, kind="stable")
        violators = (all_l[order], all_z[order])
    else:
        violators = (np.zeros(0), np.zeros((0, len(lmi.variables))))
    return worst, worst_z, violators


# ------------------------------------------------------------ verification


def metric_bounds(model: NetworkModel, W, region: Region, density):
    """Extreme eigenvalues of the metric blocks over the grid."""
    lo, hi = np.inf, -np.inf
    for i, Wi in enumerate(W, start=1):
        variables = sorted(Wi.variables(), key=lambda v: v.sort_key)
        if not variables:
            ev = np.linalg.eigvalsh(Wi.evaluate({}))
            lo, hi = min(lo, ev[0]), max(hi, ev[-1])
            continue
        entries = {(r, c): Wi.entries[r][c] for r in range(Wi.rows) for c in range(r, Wi.cols)}
        lmi = CliqueLMI.from_entries(Wi.rows, entries, nodes=(i,))
        grid = clique_grid(lmi.variables, region, density)
        coef = lmi.coefficient_matrix(np.zeros(0))
        for _, Z in grid.chunks():
            ev = np.linalg.eigvalsh(lmi.matrices(Z, coef=coef))
            lo, hi = min(lo, ev[:, 0].min()), max(hi, ev[:, -1].max())
    return float(lo), float(hi)


def verify_certificate(model: NetworkModel, cert: CCMCertificate, density_factor=None,
                       lam=None, threads=1, keep_violators=0):
    """Largest eigenvalue of the synthesis matrix over a refined grid.

    Under chordal splitting every clique matrix ``F_k`` is checked on the
    grid of its own coordinates (``F_k < 0`` for all ``k`` implies the
    assembled matrix is negative definite at every point of the product
    grid); otherwise the assembled matrix itself is checked. ``lam``
    overrides the certified rate. Returns the report dict; with
    ``keep_violators`` the worst positive samples per clique are attached
    under the private key ``"_violators"``.
    """
    if [(s.n, s.m) for s in model.nodes] != [tuple(d) for d in cert.dims]:
        raise DimensionError("certificate dimensions do not match the model")
    factor = cert.verify_density if density_factor is None else density_factor
    density = refined_density(cert.grid_density, factor)
    rate = cert.lam if lam is None else lam
    blocks = synthesis_blocks(model, cert.W, cert.Y, rate)
    pieces = chordal_split(blocks.keys(), cert.tree)
    lmis = [CliqueLMI(model, blocks, p, k) for k, p in enumerate(pieces)]

    def work(lmi):
        grid = clique_grid(lmi.variables, cert.region, density)
        coef = lmi.coefficient_matrix(np.zeros(0))
        w, z, viol = _scan(lmi, grid, coef, 0.0, keep_violators)
        return w, z, viol, grid.size

    results = _map_pool(work, lmis, threads)
    clique_worst = [float(r[0]) for r in results]
    k = int(np.argmax(clique_worst))
    worst_point = {str(v): float(x) for v, x in zip(lmis[k].variables, results[k][1])}
    w_min, w_max = metric_bounds(model, cert.W, cert.region, density)
    tol = 1e-9 * cert.w_high
    bounds_ok = w_min >= cert.w_low - tol and w_max <= cert.w_high + tol
    report = {
        "pass": bool(max(clique_worst) < 0 and bounds_ok),
        "worst_eigenvalue": max(clique_worst),
        "worst_clique": k,
        "worst_point": worst_point,
        "clique_worst": clique_worst,
        "lambda": float(rate),
        "density": density,
        "points_checked": int(sum(r[3] for r in results)),
        "mode": "clique" if len(lmis) > 1 or cert.use_chordal else "whole",
        "w_min": w_min,
        "w_max": w_max,
        "metric_bounds_ok": bool(bounds_ok),
    }
    if keep_violators:
        report["_violators"] = [
            [{str(v): float(x) for v, x in zip(lmi.variables, z)} for z in r[2][1]]
            for lmi, r in zip(lmis, results)
        ]
    return report


# ---------------------------------------------------------------- synthesis


class _Clique:
    """Synthesis-time state of one clique: compiled LMI, grid, active samples."""

    def __init__(self, lmi: CliqueLMI, region, density, margin, cap):
        self.lmi = lmi
        self.variables = lmi.variables
        size = region_size(self.variables, region, density)
        if size > cap:
            raise SynthesisFailed(
                f"clique {lmi.index} needs {size} grid points (cap {cap})", status="budget"
            )
        self.grid = clique_grid(self.variables, region, density)
        self.region = region
        self.margin = margin
        self.active = np.zeros((0, len(self.variables)))
        self.keys = set()

    def add(self, Z):
        added = 0
        rows = []
        for z in np.atleast_2d(Z):
            key = tuple(np.round(z, 10))
            if key not in self.keys:
                self.keys.add(key)
                rows.append(z)
                added += 1
        if rows:
            self.active = np.vstack([self.active, np.array(rows)])
        return added

    def add_points(self, points):
        rows = []
        for pt in points:
            rows.append([pt.get(str(v), _centre(self.region, v)) for v in self.variables])
        return self.add(np.array(rows)) if rows else 0


def _centre(region, v):
    lo, hi = region.interval(v)
    return 0.5 * (lo + hi)


def region_size(variables, region, density):
    size = 1
    for v in variables:
        lo, hi = region.interval(v)
        size *= 1 if lo == hi or density == 1 else density
    return size


def _metric_bound_batches(W_blocks, region, density, w_low, w_high, problem):
    for i, Wi in enumerate(W_blocks, start=1):
        n = Wi.rows
        low = {(r, c): (-Wi.entries[r][c] + (w_low if r == c else 0.0))
               for r in range(n) for c in range(r, n)}
        high = {(r, c): (Wi.entries[r][c] - (w_high if r == c else 0.0))
                for r in range(n) for c in range(r, n)}
        for entries, tag in ((low, "low"), (high, "high")):
            lmi = CliqueLMI.from_entries(n, entries, nodes=(i,))
            grid = clique_grid(lmi.variables, region, density)
            problem.batches.append(lmi.batch(grid.points(np.arange(grid.size)), 0.0, f"W{i}-{tag}"))


def _anchor_rows(model, W_blocks, Y_blocks, anchor, problem):
    """Pin ``Y(x0) = K0 W(x0)`` (K0 must respect the gain pattern)."""
    x0 = np.asarray(anchor["x"], dtype=float)
    K0 = np.asarray(anchor["K"], dtype=float)
    if K0.shape != (model.m, model.n) or x0.size != model.n:
        raise DimensionError("anchor has inconsistent dimensions")
    point = dict(zip(model.state_vars(), x0))
    xo, uo = model.state_offsets, model.input_offsets

    def linear(poly):
        coeffs, const = {}, 0.0
        for param, part in poly.split_linear().items():
            val = part.eval(point)
            if param is None:
                const += val
            else:
                coeffs[param.comp] = coeffs.get(param.comp, 0.0) + val
        return coeffs, const

    for i in range(1, model.N + 1):
        for j in range(1, model.N + 1):
            Kij = K0[uo[i - 1]:uo[i], xo[j - 1]:xo[j]]
            if (i, j) not in Y_blocks:
                if np.any(Kij != 0):
                    raise PreconditionError(f"anchor gain block ({i},{j}) violates the gain pattern")
                continue
            Yij, Wj = Y_blocks[(i, j)], W_blocks[j - 1]
            for r in range(Yij.rows):
                for c in range(Yij.cols):
                    coeffs, const = linear(Yij.entries[r][c])
                    for cc in range(Wj.rows):
                        if Kij[r, cc] == 0:
                            continue
                        wc, wk = linear(Wj.entries[cc][c])
                        for p, v in wc.items():
                            coeffs[p] = coeffs.get(p, 0.0) - Kij[r, cc] * v
                        const -= Kij[r, cc] * wk
                    problem.add_equality(coeffs, -const)


def objective_weights(registry, region, objective="min_norm"):
    """Diagonal weights of the quadratic synthesis objective.

    ``min_norm`` penalizes every gain coefficient equally. ``flat_gain``
    penalizes only non-constant gain monomials, each scaled by the squared
    half-widths of its variables, so the gain varies as little as possible
    over the region (useful together with an anchor).
    """
    weights = np.full(len(registry), 1e-6)
    for k, lab in enumerate(registry.labels):
        if lab[0] != "Y":
            continue
        if objective == "min_norm":
            weights[k] = 1.0
            continue
        mono = lab[5]
        if mono:
            scale = 1.0
            for v, e in mono:
                lo, hi = region.interval(v)
                scale *= (0.5 * (hi - lo)) ** (2 * e)
            weights[k] = scale
    return weights


def solve_ccm(model: NetworkModel, config: SynthesisConfig, metric: MetricAnsatz | None = None,
              gain: GainAnsatz | None = None, registry: ParamRegistry | None = None,
              stats: dict | None = None) -> CCMCertificate:
    """Synthesize a separable metric and structured gain on the grid.

    ``metric``/``gain`` default to the ansatz families described by
    ``config``; pass ``registry`` along with custom ones. ``stats`` (if given)
    receives wall-clock time, round count and sample counts.
    """
    t0 = time.perf_counter()
    cfg = config
    region = cfg.region
    if registry is None:
        registry = ParamRegistry()
    if metric is None:
        metric = MetricAnsatz.build(model, registry, cfg.metric_degree, cfg.w_low, cfg.w_high)
    if gain is None:
        gain = GainAnsatz.build(model, registry, cfg.max_degree_Y, region, zero=cfg.zero_gain)
    P = len(registry)

    tree, fill = decomposition(model, cfg.use_chordal)
    lam_s = cfg.lam * (1.0 + cfg.rate_headroom)
    blocks = synthesis_blocks(model, metric.blocks, gain.blocks, lam_s)
    pieces = chordal_split(blocks.keys(), tree)
    margin = cfg.epsilon / len(pieces)
    cliques = [
        _Clique(CliqueLMI(model, blocks, p, k), region, cfg.grid_density, margin, cfg.max_grid_points)
        for k, p in enumerate(pieces)
    ]
    for c in cliques:
        verify_size = region_size(c.variables, region, cfg.verify_points)
        if verify_size > cfg.max_grid_points:
            raise SynthesisFailed(
                f"clique {c.lmi.index} needs {verify_size} verification points (cap {cfg.max_grid_points})",
                status="budget",
            )

    rng = np.random.default_rng(cfg.seed)
    for c in cliques:
        size = c.grid.size
        pick = np.arange(size) if size <= cfg.init_samples else np.sort(
            rng.choice(size, cfg.init_samples, replace=False))
        c.add(c.grid.points(pick))

    base = LMIProblem(P)
    _metric_bound_batches(metric.blocks, region, cfg.verify_points, cfg.w_low, cfg.w_high, base)
    if cfg.anchor is not None:
        _anchor_rows(model, metric.blocks, gain.blocks, cfg.anchor, base)
    weights = objective_weights(registry, region, cfg.objective)

    cert = None
    rounds = 0
    iterations = 0
    phase = "grid"
    for rounds in range(1, cfg.max_rounds + 1):
        problem = LMIProblem(P, list(base.batches), list(base.eq_rows), quad_weights=weights)
        for c in cliques:
            problem.batches.append(c.lmi.batch(c.active, c.margin, f"F{c.lmi.index}"))
        res = lmi_feasibility(problem)
        iterations += res.iterations
        log.info("round %d: %s (%d samples)", rounds, res.solver_status,
                 sum(len(c.active) for c in cliques))
        if res.status == "infeasible":
            raise SynthesisFailed("the sampled inequalities are infeasible", status="infeasible")
        if not res.ok:
            raise SynthesisFailed(f"solver stopped with status {res.solver_status}")
        d = res.x

        if phase == "grid":
            def work(c):
                coef = c.lmi.coefficient_matrix(d)
                return _scan(c.lmi, c.grid, coef, -0.5 * c.margin, cfg.add_per_round)

            results = _map_pool(work, cliques, cfg.threads)
            added = sum(c.add(r[2][1]) for c, r in zip(cliques, results))
            if added:
                continue
            phase = "verify"

        W_res = resolve_blocks(metric.blocks, d)
        Y_res = {k: b for k, b in resolve_blocks(gain.blocks, d).items() if not b.is_zero()}
        cert = _make_certificate(model, cfg, W_res, Y_res, tree, fill)
        report = verify_certificate(model, cert, threads=cfg.threads,
                                    keep_violators=cfg.add_per_round)
        violators = report.pop("_violators")
        cert.report = report
        if report["pass"]:
            break
        added = sum(c.add_points(pts) for c, pts in zip(cliques, violators))
        if not added:
            break
    if stats is not None:
        stats.update(seconds=time.perf_counter() - t0, rounds=rounds, solver_iterations=iterations,
                     samples=int(sum(len(c.active) for c in cliques)), decisions=P,
                     cliques=len(cliques))
    if cert is None:
        raise SynthesisFailed(f"no grid-feasible point after {cfg.max_rounds} rounds")
    if not cert.passed:
        raise SynthesisFailed(
            "verification failed: worst eigenvalue "
            f"{cert.report['worst_eigenvalue']:.3e} at {cert.report['worst_point']}",
            status="inconclusive",
            worst=(cert.report["worst_eigenvalue"], cert.report["worst_point"]),
            certificate=cert,
        )
    return cert


def _make_certificate(model, cfg, W, Y, tree, fill):
    return CCMCertificate(
        W=W, Y=Y, lam=float(cfg.lam), epsilon=float(cfg.epsilon), w_low=float(cfg.w_low),
        w_high=float(cfg.w_high), region=cfg.region, grid_density=cfg.grid_density,
        verify_density=cfg.verify_density, use_chordal=cfg.use_chordal, tree=tree,
        fill_edges=[tuple(e) for e in fill],
        fingerprints={"model": model.fingerprint(), "g_p": model.g_p.fingerprint(),
                      "g_c": model.g_c.fingerprint()},
        dims=[(s.n, s.m) for s in model.nodes],
        meta={"region_json": cfg.region.to_json(model), "rate_headroom": cfg.rate_headroom,
              "seed": cfg.seed},
    )


# ------------------------------------------------------ Killing condition


def _full_metric(model, W):
    if isinstance(W, PolyMatrix):
        return W
    full = PolyMatrix.zeros(model.n, model.n)
    for i, Wi in enumerate(W, start=1):
        o = model.state_offsets[i - 1]
        for r in range(Wi.rows):
            for c in range(Wi.cols):
                full.entries[o + r][o + c] = Wi.entries[r][c]
    return full


def killing_matrices(model: NetworkModel, W):
    """Symbolic ``d_b W - (db/dx) W - W (db/dx)^T`` for every input column ``b``."""
    Wf = _full_metric(model, W)
    _, B = stack_dynamics(model)
    xs = model.state_vars()
    out = []
    for col in range(model.m):
        b = PolyMatrix.column([B.entries[r][col] for r in range(model.n)])
        J = jacobian(b, xs)
        out.append(directional_matrix_derivative(Wf, b, xs) - J @ Wf - Wf @ J.T())
    return out


def killing_residual(model: NetworkModel, W, region: Region | None = None, density=5):
    """Per input column, the largest spectral norm of the Killing residual on the grid."""
    region = region or Region()
    res = []
    for R in killing_matrices(model, W):
        if R.is_zero():
            res.append(0.0)
            continue
        entries = {(r, c): R.entries[r][c] for r in range(R.rows) for c in range(r, R.cols)
                   if not R.entries[r][c].is_zero()}
        lmi = CliqueLMI.from_entries(R.rows, entries)
        grid = clique_grid(lmi.variables, region, density)
        coef = lmi.coefficient_matrix(np.zeros(0))
        worst = 0.0
        for _, Z in grid.chunks():
            ev = np.linalg.eigvalsh(lmi.matrices(Z, coef=coef))
            worst = max(worst, float(np.abs(ev).max()))
        res.append(worst)
    return np.array(res)


def corollary_R_synthesis(model: NetworkModel, config: SynthesisConfig, rho_degree=0,
                          stats=None) -> CCMCertificate:
    """Decentralized synthesis with ``Y = -R B^T / 2``, ``R = diag(rho_i(x_i) I)``.

    Requires every input column to be a Killing field of the metric family;
    checked symbolically on the metric ansatz.
    """
    registry = ParamRegistry()
    metric = MetricAnsatz.build(model, registry, config.metric_degree, config.w_low, config.w_high)
    if any(not R.is_zero() for R in killing_matrices(model, metric.blocks)):
        raise PreconditionError("input columns are not Killing fields of the metric ansatz")
    blocks = {}
    for i, spec in enumerate(model.nodes, start=1):
        if spec.m == 0:
            continue
        xs = [v for v in model.state_vars(i) if config.region.is_bounded(v)]
        terms = {}
        for mono in monomials_upto(xs, rho_degree):
            p = registry.new(("Y", i, i, "rho", mono))
            terms[mono + ((p, 1),)] = 1.0
        rho = Polynomial(terms)
        blocks[(i, i)] = _rho_block(spec, rho)
    gain = GainAnsatz(blocks, {k: [] for k in blocks}, rho_degree)
    cert = solve_ccm(model, config, metric, gain, registry, stats)
    cert.meta["form"] = "rho"
    return cert


def _rho_block(spec, rho: Polynomial):
    """``-rho b^T / 2`` for a node with input matrix ``b``."""
    return PolyMatrix([[e * rho * -0.5 for e in row] for row in spec.b.T().entries])


# ------------------------------------------------------ local diagnostic


def local_positive_diagnostic(model: NetworkModel, x_e, u_e=None, tol=1e-8, margin=1e-6):
    """Search diagonal ``P > 0`` and ``K`` with ``A + B K`` Metzler and
    ``P (A + B K) + (A + B K)^T P < 0`` at an equilibrium.

    Uses ``Q = P^{-1}`` and ``Z = K Q``, which makes both conditions linear.
    """
    if any(s.n != 1 for s in model.nodes):
        raise PreconditionError("the diagnostic needs scalar node states")
    p = StackedPoint.make(model, x_e, u_e)
    if np.linalg.norm(model.vector_field(p.x, p.u)) > tol:
        raise PreconditionError("(x_e, u_e) is not an equilibrium")
    A, B = differential_matrices(model, p)
    n, m = model.n, model.m
    # decisions: q_1..q_n, then Z row-major (m x n)
    P_dec = n + m * n
    zi = lambda r, c: n + r * n + c  # noqa: E731
    prob = LMIProblem(P_dec)
    S0 = np.zeros((n, n))
    coeffs = {}
    for j in range(n):
        E = np.zeros((n, n))
        E[:, j] += A[:, j]
        coeffs[j] = E + E.T
        prob.bound(j, lo=1.0)
    for r in range(m):
        for c in range(n):
            E = np.zeros((n, n))
            E[:, c] = B[:, r]
            if np.any(E):
                coeffs[zi(r, c)] = E + E.T
    prob.add_lmi(S0, coeffs, margin, "lyapunov")
    # Metzler: (A Q + B Z)_ij >= 0 for i != j
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            row = {j: A[i, j]} if A[i, j] else {}
            for r in range(m):
                if B[i, r]:
                    row[zi(r, j)] = row.get(zi(r, j), 0.0) + B[i, r]
            prob.add_lmi(np.zeros((1, 1)), {k: -np.array([[v]]) for k, v in row.items()}, 0.0, "metzler")
    w = np.full(P_dec, 1.0)
    w[:n] = 1e-6
    prob.quad_weights = w
    res = lmi_feasibility(prob)
    if not res.ok:
        return {"exists": False, "P": None, "K": None, "status": res.status}
    q = res.x[:n]
    Z = res.x[n:].reshape(m, n)
    K = Z / q[None, :]
    Pd = np.diag(1.0 / q)
    Acl = A + B @ K
    off = Acl - np.diag(np.diag(Acl))
    ok = bool(off.min(initial=0.0) >= -1e-9 and np.linalg.eigvalsh(Pd @ Acl + Acl.T @ Pd)[-1] < 0)
    return {"exists": ok, "P": Pd, "K": K, "status": res.status}
