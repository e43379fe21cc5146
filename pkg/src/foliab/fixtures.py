"""Registry of analytic example foliations.

Definitions live in ``data/fixtures.json`` and use the same expression
grammar as user-supplied metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .core import DifferentiationConfig, FoliationSpec, MetricField
from .expr import Expr
from .jets import Jet


class FixtureMissing(KeyError):
    pass


@dataclass(frozen=True)
class Fixture:
    name: str
    description: str
    metric: MetricField
    projection: Optional[tuple] = None  # Expr per base coordinate
    base_metric: Optional[MetricField] = None
    embedding: Optional[tuple] = None
    base_embedding: Optional[tuple] = None
    sample_box: Optional[np.ndarray] = None

    @property
    def spec(self) -> FoliationSpec:
        return self.metric.spec

    @property
    def has_projection(self) -> bool:
        return self.projection is not None and self.base_metric is not None

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xs = [x[..., k] for k in range(x.shape[-1])]
        return np.stack([np.broadcast_to(e(xs), x.shape[:-1]) for e in self.projection], axis=-1)

    def project_vector(self, x, v) -> np.ndarray:
        """Push forward ``v`` at ``x`` through the submersion (exact jets)."""
        x = np.asarray(x, dtype=float)
        xs = Jet.variables(x, 1)
        out = []
        for e in self.projection:
            val = e(xs)
            if isinstance(val, Jet):
                grad = np.stack([val.partial(tuple(int(i == k) for i in range(len(xs)))) for k in range(len(xs))], -1)
                out.append(np.einsum("...k,...k->...", grad, v))
            else:
                out.append(np.zeros(x.shape[:-1]))
        return np.stack(out, axis=-1)

    def embed(self, x, base: bool = False) -> np.ndarray:
        """Points of the declared embedding; falls back to chart coordinates."""
        x = np.asarray(x, dtype=float)
        exprs = self.base_embedding if base else self.embedding
        if exprs is None:
            return x
        xs = [x[..., k] for k in range(x.shape[-1])]
        return np.stack([np.broadcast_to(e(xs), x.shape[:-1]) for e in exprs], axis=-1)


def _resolve(value, params):
    if isinstance(value, str):
        if value in params:
            return float(params[value])
        raise ValueError(f"unknown parameter {value!r}")
    return float(value)


def _box(raw, params):
    return np.array([[_resolve(a, params), _resolve(b, params)] for a, b in raw], dtype=float)


def build_fixture(name: str, d: dict, diff: DifferentiationConfig = DifferentiationConfig(), **params) -> Fixture:
    """Assemble a fixture from a definition dict (the data-file schema)."""
    merged = dict(d.get("params", {}))
    unknown = set(params) - set(merged)
    if unknown:
        raise ValueError(f"fixture {name} has no parameters {sorted(unknown)}")
    merged.update(params)
    spec = FoliationSpec(int(d["n_transverse"]), int(d["n_leafwise"]))
    metric = MetricField.from_strings(spec, _box(d["domain"], merged), d["metric"], diff=diff, name=name)
    projection = base = emb = bemb = None
    if "projection" in d and "base_metric" in d:
        projection = tuple(Expr.parse(s, spec.n_total) for s in d["projection"])
        base = MetricField.from_strings(None, _box(d["base_domain"], merged), d["base_metric"], diff=diff, name=name + ":base")
    if "embedding" in d:
        emb = tuple(Expr.parse(s, spec.n_total) for s in d["embedding"])
    if "base_embedding" in d:
        bemb = tuple(Expr.parse(s, len(d["projection"])) for s in d["base_embedding"])
    box = _box(d["sample_box"], merged) if "sample_box" in d else metric.domain
    return Fixture(name, d.get("description", ""), metric, projection, base, emb, bemb, box)


def _load() -> dict:
    text = resources.files("foliab").joinpath("data/fixtures.json").read_text()
    return json.loads(text)


_DATA = None


def definitions() -> dict:
    global _DATA
    if _DATA is None:
        _DATA = _load()
    return _DATA["fixtures"]


def names() -> list[str]:
    return list(definitions())


def get(name: str, diff: DifferentiationConfig = DifferentiationConfig(), **params) -> Fixture:
    defs = definitions()
    if name not in defs:
        raise FixtureMissing(name)
    return build_fixture(name, defs[name], diff, **params)


def list_fixtures() -> list[dict]:
    rows = []
    for name, d in definitions().items():
        rows.append(
            {
                "name": name,
                "n_transverse": int(d["n_transverse"]),
                "n_leafwise": int(d["n_leafwise"]),
                "projection": "yes" if "projection" in d else "no",
                "description": d.get("description", ""),
            }
        )
    return rows
