"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line per criterion (plus the individual
checks) and the lines are repeated in the terminal summary.
"""
import time

import numpy as np
import pytest

from ccmnet.cli import platoon_decay
from ccmnet.errors import DivergenceError, SynthesisFailed
from ccmnet.geodesic import DistributedController, node_geodesic
from ccmnet.graphs import banded, clique_tree, undirected_companion
from ccmnet.poly import PolyMatrix
from ccmnet.scenarios import (
    PlatoonTarget, build_cubic_network, build_platoon, cubic_region, cubic_target, platoon_hinf,
    platoon_region, random_initial_states, scenario_platoon_tracking,
)
from ccmnet.simulate import decay_check, integrate_closed_loop
from ccmnet.synthesis.ansatz import xi_pattern
from ccmnet.synthesis.ccm import decomposition, killing_residual, solve_ccm, verify_certificate
from ccmnet.synthesis.lmi import chordal_split, reconstruct, split_matrix

from conftest import cubic_certificate, cubic_config, platoon_certificate
from test_geodesic import constant_certificate, exp_metric, full_K
from test_lmi import banded_pattern, random_patterned
from test_simulate import rk4_orders
from test_synthesis import _full_numeric

STRUCTURES = ("complete", "neighbor", "decentralized")
LAM = 0.1


def run_decay(model, ctrl, x0s, lam, T_end=60.0, dt=0.02):
    out = []
    for x0 in x0s:
        try:
            tr = integrate_closed_loop(model, ctrl, x0, cubic_target(model), T_end, dt)
            out.append(decay_check(tr, lam))
        except DivergenceError:
            out.append({"pass": False, "rate_fit": -np.inf})
    return out


# ------------------------------------------------------------- criterion 1


def test_criterion_1_cubic_convergence(criterion):
    t0 = time.perf_counter()
    with criterion("1 (cubic network convergence, N=4)") as c:
        x0s = None
        for s in STRUCTURES:
            model, cert, _ = cubic_certificate(s)
            if x0s is None:
                x0s = random_initial_states(model, cubic_region(2.0), 10, seed=0)
            ctrl = DistributedController.from_certificate(model, cert)
            runs = run_decay(model, ctrl, x0s, cert.lam)
            rates = [r["rate_fit"] for r in runs]
            c.check(f"{s}: 10 closed loops pass decay_check", all(r["pass"] for r in runs),
                    f"min rate_fit {min(rates):.4f}, need >= {0.9 * LAM:.3f}")
        model = build_cubic_network(4, "decentralized")
        runs = run_decay(model, None, x0s, LAM)
        c.check("open loop fails decay_check", not any(r["pass"] for r in runs),
                f"max rate_fit {max(r['rate_fit'] for r in runs):.4f}")
        elapsed = time.perf_counter() - t0
        c.check("total runtime under 5 minutes", elapsed < 300.0, f"{elapsed:.1f} s")
    assert c.passed


# ------------------------------------------------------------- criterion 2


def test_criterion_2_string_cliques(criterion):
    with criterion("2 (string topology gives N-1 two-node cliques)") as c:
        for N in (4, 8, 16, 32):
            tree, fill = decomposition(build_cubic_network(N, "neighbor"))
            sizes = sorted(len(k) for k in tree.cliques)
            c.check(f"N={N}", len(tree) == N - 1 and sizes == [2] * (N - 1) and not fill,
                    f"{len(tree)} cliques, sizes {set(sizes)}")
    assert c.passed


# ------------------------------------------------------------- criterion 3


def synth_seconds(N, structure):
    stats = {}
    cert = solve_ccm(build_cubic_network(N, structure), cubic_config(LAM), stats=stats)
    return stats["seconds"], cert.passed


@pytest.mark.slow
def test_criterion_3_scaling(criterion):
    Ns = np.array([4, 8, 16, 32, 64])
    with criterion("3 (chordal synthesis scales sub-quadratically)") as c:
        for s in ("neighbor", "decentralized"):
            secs, ok = zip(*(synth_seconds(int(N), s) for N in Ns))
            slope = np.polyfit(np.log(Ns), np.log(secs), 1)[0]
            c.check(f"{s}: every N certified", all(ok))
            c.check(f"{s}: log-log slope <= 1.5", slope <= 1.5,
                    f"slope {slope:.2f}; seconds " + " ".join(f"{t:.1f}" for t in secs))
        try:
            synth_seconds(8, "complete")
            status = "verified"
        except SynthesisFailed as exc:
            status = exc.status
        c.check("dense N=8 exceeds the grid budget", status == "budget", f"status {status}")
    assert c.passed


# ------------------------------------------------------------- criterion 4


def platoon_run(horizon):
    model, info, cert, hinf, _ = platoon_certificate(horizon)
    ctrl = DistributedController.from_certificate(model, cert)
    res = scenario_platoon_tracking(model, info, ctrl, region=platoon_region(model.N), dt=0.01)
    return model, info, cert, hinf, res


@pytest.mark.slow
def test_criterion_4_platoon(criterion):
    with criterion("4 (platoon, N=4, seed 0)") as c:
        peaks = {}
        for h in (0, 1):
            model, info, cert, hinf, res = platoon_run(h)
            rep = verify_certificate(model, cert, density_factor=2 * cert.verify_density)
            c.check(f"h={h}: verifies on the 2x grid", rep["pass"] and rep["worst_eigenvalue"] < 0,
                    f"worst eigenvalue {rep['worst_eigenvalue']:.3e}")
            chk = platoon_decay(res.trace, cert.lam, PlatoonTarget(info).t_step)
            c.check(f"h={h}: tracking converges after the step", chk["pass"],
                    f"rate_fit {chk['rate_fit']:.4f}, need >= {0.9 * cert.lam:.3f}")
            peaks[h] = res.peaks["spacing_all"]
            base = platoon_hinf(model, info)
            c.check(f"h={h}: H-infinity baseline gives finite alpha", np.isfinite(base["alpha"]),
                    f"alpha {base['alpha']:.4g}")
        c.check("peak spacing error h=1 <= h=0", peaks[1] <= peaks[0],
                f"{peaks[1]:.4f} m vs {peaks[0]:.4f} m")
    assert c.passed


# ------------------------------------------------------------- criterion 5


def test_criterion_5_properties(criterion):
    rng = np.random.default_rng(2024)
    with criterion("5 (property suites)") as c:
        worst = 0.0
        for _ in range(100):
            N, width = int(rng.integers(2, 9)), int(rng.integers(1, 3))
            dims = list(rng.integers(1, 4, N))
            pieces = chordal_split(banded_pattern(N, width), clique_tree(undirected_companion(banded(N, width))))
            T = random_patterned(rng, dims, banded_pattern(N, width))
            worst = max(worst, float(np.abs(reconstruct(split_matrix(T, dims, pieces), dims, pieces) - T).max()))
        c.check("chordal reconstruction exact to 1e-12", worst <= 1e-12, f"max error {worst:.1e}")

        errs = []
        for _ in range(20):
            R = rng.normal(size=(3, 3))
            M = R @ R.T + np.eye(3)
            a, b = rng.normal(size=3), rng.normal(size=3)
            _, E = node_geodesic(M, a, b, 8)
            exact = (b - a) @ M @ (b - a)
            errs.append(abs(E - exact) / exact)
        c.check("straight-line energy equals (b-a)'M(b-a)", max(errs) <= 1e-14, f"max rel error {max(errs):.1e}")

        model, cert = constant_certificate(rng)
        K = full_K(model, cert)
        ctrl = DistributedController.from_certificate(model, cert)
        gap = 0.0
        for _ in range(20):
            x, xs, us = rng.normal(size=model.n), rng.normal(size=model.n), rng.normal(size=model.m)
            gap = max(gap, float(np.abs(ctrl(x, xs, us) - us - K @ (x - xs)).max()))
        c.check("constant W, Y controller equals u* + K(x - x*)", gap <= 1e-12, f"max gap {gap:.1e}")

        leak = 0.0
        for s in STRUCTURES:
            model, cert, _ = cubic_certificate(s)
            allowed = set(xi_pattern(model.g_c, model))
            extra = set(cert.Y) - allowed
            for _ in range(20):
                W, Y = _full_numeric(model, cert, rng.uniform(-2, 2, model.n))
                K = Y @ np.linalg.inv(W)
                for i in range(1, model.N + 1):
                    for j in range(1, model.N + 1):
                        if (i, j) not in allowed:
                            leak = max(leak, float(np.abs(K[model.uslice(i), model.xslice(j)]).max()))
            c.check(f"{s}: K sparsity follows the Xi pattern", not extra and leak <= 1e-12,
                    f"largest off-pattern entry {leak:.1e}")

        cubic_res = killing_residual(build_cubic_network(3), [PolyMatrix.identity(2)] * 3, cubic_region())
        model, _ = build_platoon(4)
        plat_res = killing_residual(model, [PolyMatrix.identity(2)] * 4, platoon_region(4))
        c.check("Killing residual: zero for constant B, flagged for the platoon",
                not cubic_res.any() and (plat_res > 1e-6).all(),
                f"platoon residuals {np.round(plat_res, 4).tolist()}")

        _, E = node_geodesic(exp_metric, [0.0], [1.0], 256)
        ref = (np.e - 1.0) ** 2
        c.check("e^{2x} geodesic energy within 1% at S=256", abs(E - ref) <= 0.01 * ref,
                f"relative error {abs(E - ref) / ref:.2e}")

        order = float(rk4_orders().min())
        c.check("RK4 measured order >= 3.8", order >= 3.8, f"order {order:.2f}")

        for s in STRUCTURES:
            model, cert, _ = cubic_certificate(s)
            half = verify_certificate(model, cert, lam=cert.lam / 2)
            c.check(f"{s}: certificate re-verifies at lambda/2", half["pass"],
                    f"worst eigenvalue {half['worst_eigenvalue']:.3e}")
    assert c.passed
