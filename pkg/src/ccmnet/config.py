"""Run configuration: JSON files validated against a bundled schema."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import CCMError, ConfigError
from .graphs import parse_graph
from .network import NetworkModel, NodeSpec, validate_model
from .poly import PolyMatrix, parse_poly, uvar, xvar
from .scenarios import build_cubic_network, build_platoon
from .synthesis.ansatz import Region
from .synthesis.ccm import SynthesisConfig

log = logging.getLogger(__name__)

_SCHEMA = None
MAX_QUIET_DEGREE = 6


def schema():
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("ccmnet").joinpath("schema/run_config.schema.json").read_text()
        _SCHEMA = json.loads(text)
    return _SCHEMA


def shipped_configs():
    """Names of the example configs bundled with the package."""
    root = resources.files("ccmnet").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def shipped_config_path(name):
    return Path(str(resources.files("ccmnet").joinpath(f"configs/{name}.json")))


@dataclass
class RunConfig:
    """A validated configuration with the model already built."""

    raw: dict
    model: NetworkModel
    synthesis: SynthesisConfig
    source: str = "<memory>"
    platoon: object = None          # PlatoonInfo for the builtin platoon
    anchor: dict | None = None
    form: str = "general"
    rho_degree: int = 0
    scenario: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.raw.get("name", self.model.name)

    @property
    def structure(self):
        """Label used to group timing records (structure or horizon)."""
        m = self.raw["model"]
        if m.get("builtin") == "cubic":
            return m["structure"]
        if m.get("builtin") == "platoon":
            return f"h{m['horizon']}"
        return m.get("name", "custom")


def _field_path(err):
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate(data):
    """Raise :class:`ConfigError` listing every schema violation."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"{_field_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))


def load_config(path, seed=None) -> RunConfig:
    """Read, validate and build a run configuration.

    ``seed`` overrides the synthesis and scenario seeds (not the platoon
    parameter draw, which is part of the model).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return from_dict(data, source=str(path), seed=seed)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def from_dict(data, source="<memory>", seed=None) -> RunConfig:
    validate(data)
    try:
        model, platoon = _build_model(data["model"])
        syn = data["synthesis"]
        region = _build_region(syn["region"], model)
        cfg = SynthesisConfig(
            lam=float(syn["lambda"]),
            epsilon=syn.get("epsilon"),
            grid_density=syn.get("grid_density", 5),
            verify_density=syn.get("verify_density", 2),
            use_chordal=syn.get("use_chordal", True),
            metric_degree=syn.get("metric_degree", 0),
            max_degree_Y=syn.get("gain_degree", 2),
            seed=syn.get("seed", 0) if seed is None else seed,
            w_low=syn.get("w_low", 1e-2),
            w_high=syn.get("w_high", 1e2),
            region=region,
            rate_headroom=syn.get("rate_headroom", 1.0),
            init_samples=syn.get("init_samples", 64),
            add_per_round=syn.get("add_per_round", 32),
            max_rounds=syn.get("max_rounds", 60),
            max_grid_points=syn.get("max_grid_points", 2_000_000),
            objective=syn.get("objective", "min_norm"),
        )
    except (CCMError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    degrees = [cfg.max_degree_Y, cfg.metric_degree] + [
        max(p.degree() for row in s.f.entries + s.b.entries for p in row) for s in model.nodes]
    if max(degrees) > MAX_QUIET_DEGREE:
        log.warning("polynomial degree %d exceeds %d; grid enforcement becomes unreliable",
                    max(degrees), MAX_QUIET_DEGREE)
    anchor = syn.get("anchor")
    if anchor is not None and platoon is None:
        raise ConfigError("synthesis.anchor: the hinf anchor needs the builtin platoon model")
    scenario = dict(data.get("scenario", {}))
    if seed is not None and "x0" in scenario:
        scenario["x0"] = dict(scenario["x0"], seed=seed)
    if scenario.get("name") == "platoon_tracking" and platoon is None:
        raise ConfigError("scenario.name: platoon_tracking needs the builtin platoon model")
    return RunConfig(raw=data, model=model, synthesis=cfg, source=source, platoon=platoon,
                     anchor=anchor, form=syn.get("form", "general"),
                     rho_degree=syn.get("rho_degree", 0), scenario=scenario,
                     output=dict(data.get("output", {})))


def _build_model(m):
    if m.get("builtin") == "cubic":
        return build_cubic_network(m["N"], m["structure"], m.get("coupling", 0.01)), None
    if m.get("builtin") == "platoon":
        kw = {k: m[k] for k in ("spacing", "v_nominal") if k in m}
        return build_platoon(m["N"], seed=m.get("seed", 0), horizon=m["horizon"], **kw)
    nodes = []
    for i, spec in enumerate(m["nodes"], start=1):
        where = f"model.nodes.{i - 1}"
        n = len(spec["f"])
        if len(spec["b"]) != n:
            raise ConfigError(f"{where}.b: needs {n} rows to match f")
        widths = {len(row) for row in spec["b"]}
        if len(widths) != 1:
            raise ConfigError(f"{where}.b: rows have different lengths")
        try:
            f = PolyMatrix.column([parse_poly(s) for s in spec["f"]])
            b = PolyMatrix([[parse_poly(s) for s in row] for row in spec["b"]], n, widths.pop())
        except CCMError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        nodes.append(NodeSpec(n, b.cols, f, b))
    N = len(nodes)
    try:
        g_p = parse_graph(m["g_p"], N)
        g_c = parse_graph(m["g_c"], N)
    except (CCMError, ValueError) as exc:
        raise ConfigError(f"model graphs: {exc}") from None
    model = NetworkModel(nodes, g_p, g_c, name=m.get("name", "custom"))
    problems = validate_model(model)
    if problems:
        raise ConfigError("model: " + "; ".join(str(p) for p in problems))
    return model, None


def _bound(x):
    return float(x)


def _interval(pair):
    lo, hi = _bound(pair[0]), _bound(pair[1])
    if lo > hi:
        raise ConfigError(f"empty interval [{lo}, {hi}]")
    return lo, hi


def _build_region(spec, model) -> Region:
    intervals = {}
    for k, iv in spec.get("node_states", {}).items():
        for i in range(1, model.N + 1):
            if int(k) <= model.nodes[i - 1].n:
                intervals[xvar(i, int(k))] = _interval(iv)
    for k, iv in spec.get("node_inputs", {}).items():
        for i in range(1, model.N + 1):
            if int(k) <= model.nodes[i - 1].m:
                intervals[uvar(i, int(k))] = _interval(iv)
    known = set(model.state_vars()) | set(model.input_vars())
    for name, iv in spec.get("intervals", {}).items():
        (v,) = parse_poly(name).variables()
        if v not in known:
            raise ConfigError(f"synthesis.region.intervals: {name} is not a model coordinate")
        intervals[v] = _interval(iv)
    return Region(intervals,
                  default_x=_interval(spec.get("x", ["-inf", "inf"])),
                  default_u=_interval(spec.get("u", ["-inf", "inf"])))


def equilibrium_target(run: RunConfig):
    """``(x*, u*)`` of the equilibrium scenario (zeros unless given)."""
    tgt = run.scenario.get("target", {})
    x = np.asarray(tgt.get("x", np.zeros(run.model.n)), dtype=float)
    u = np.asarray(tgt.get("u", np.zeros(run.model.m)), dtype=float)
    if x.size != run.model.n or u.size != run.model.m:
        raise ConfigError("scenario.target: dimensions do not match the model")
    return x, u
