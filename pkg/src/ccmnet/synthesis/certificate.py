"""Certificate container and its JSON form.

The file layout is deterministic: dense row-major metric blocks when they
are constant, polynomial coefficient tables in canonical term order
otherwise, so ``dumps(loads(s)) == s`` holds byte for byte.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..graphs import CliqueTree
from ..poly import PolyMatrix, Polynomial, Variable
from .ansatz import Region

FORMAT = "ccmnet-certificate/1"

_VAR_RE = re.compile(r"^([xu])\[(\d+)\]\[(\d+)\]$")


def var_from_str(text) -> Variable:
    m = _VAR_RE.match(text)
    if not m:
        raise ConfigError(f"bad variable name {text!r}")
    return Variable(int(m.group(2)), m.group(1), int(m.group(3)))


def poly_to_json(p: Polynomial):
    return [[[[str(v), e] for v, e in mono], c] for mono, c in p.sorted_terms()]


def poly_from_json(data) -> Polynomial:
    terms = {}
    for mono, c in data:
        key = tuple(sorted(((var_from_str(v), int(e)) for v, e in mono), key=lambda t: t[0].sort_key))
        terms[key] = float(c)
    return Polynomial(terms)


def _matrix_to_json(M: PolyMatrix):
    if M.is_constant():
        return {"constant": True,
                "matrix": [[e.constant_value() for e in row] for row in M.entries]}
    return {"constant": False,
            "entries": [[poly_to_json(e) for e in row] for row in M.entries]}


def _matrix_from_json(data) -> PolyMatrix:
    if data["constant"]:
        return PolyMatrix.from_array(np.array(data["matrix"], dtype=float))
    return PolyMatrix([[poly_from_json(e) for e in row] for row in data["entries"]])


@dataclass
class CCMCertificate:
    """Resolved metric and gain plus everything needed to re-verify them.

    ``W`` is the list of node metric blocks, ``Y`` maps ``(i, j)`` to the
    ``m_i x n_j`` gain block. ``report`` is the output of the verification
    sweep; ``margin_achieved`` is its worst eigenvalue.
    """

    W: list
    Y: dict
    lam: float
    epsilon: float
    w_low: float
    w_high: float
    region: Region
    grid_density: int
    verify_density: int
    use_chordal: bool
    tree: CliqueTree
    fill_edges: list
    fingerprints: dict
    dims: list
    report: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def margin_achieved(self):
        return self.report.get("worst_eigenvalue")

    @property
    def passed(self):
        return bool(self.report.get("pass", False))

    def to_dict(self, model=None):
        region = self.meta.get("region_json")
        if region is None:
            region = self.region.to_json(model)
        return {
            "format": FORMAT,
            "fingerprints": dict(self.fingerprints),
            "dims": [list(d) for d in self.dims],
            "lambda": self.lam,
            "epsilon": self.epsilon,
            "w_low": self.w_low,
            "w_high": self.w_high,
            "region": region,
            "grid_density": self.grid_density,
            "verify_density": self.verify_density,
            "use_chordal": self.use_chordal,
            "decomposition": {
                "cliques": [list(s) for s in self.tree.selectors],
                "tree_edges": sorted([sorted(e) for e in self.tree.tree_edges]),
                "fill_edges": [list(e) for e in self.fill_edges],
            },
            "W": [dict(node=i, **_matrix_to_json(M)) for i, M in enumerate(self.W, start=1)],
            "Y": [dict(block=[i, j], **_matrix_to_json(self.Y[(i, j)])) for i, j in sorted(self.Y)],
            "report": self.report,
            "meta": {k: v for k, v in self.meta.items() if k != "region_json"},
        }

    def dumps(self, model=None):
        return json.dumps(self.to_dict(model), indent=1) + "\n"

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != FORMAT:
            raise ConfigError(f"unsupported certificate format {data.get('format')!r}")
        dec = data["decomposition"]
        selectors = tuple(tuple(c) for c in dec["cliques"])
        tree = CliqueTree(tuple(frozenset(c) for c in selectors),
                          frozenset(tuple(e) for e in dec["tree_edges"]), selectors)
        W = [_matrix_from_json(b) for b in data["W"]]
        Y = {tuple(b["block"]): _matrix_from_json(b) for b in data["Y"]}
        meta = dict(data.get("meta", {}))
        meta["region_json"] = data["region"]
        return cls(
            W=W, Y=Y, lam=data["lambda"], epsilon=data["epsilon"], w_low=data["w_low"],
            w_high=data["w_high"], region=Region.from_json(data["region"]),
            grid_density=data["grid_density"], verify_density=data["verify_density"],
            use_chordal=data["use_chordal"], tree=tree,
            fill_edges=[tuple(e) for e in dec["fill_edges"]],
            fingerprints=dict(data["fingerprints"]), dims=[tuple(d) for d in data["dims"]],
            report=data.get("report", {}), meta=meta,
        )

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def check_model(self, model):
        """True iff the certificate was produced for ``model``."""
        return self.fingerprints.get("model") == model.fingerprint()
