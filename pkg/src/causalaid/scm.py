"""Synthetic structural causal models with known treatment effects.

A node's mechanism is ``form(intercept + sum(coef * parent) + sum(coef *
a * b)) + noise * e`` with ``e`` standard normal, ``form`` the identity
unless a registered nonlinearity is named. The treatment node may instead
be *assigned*: ``logistic`` draws ``T ~ Bernoulli(sigmoid(linear + noise*e))``
and ``threshold`` sets ``T = 1[linear + noise*e > 0]``.

Sampling draws noise in topological order from a PCG64 stream, so a
(spec, n, seed) triple always gives the same table.

Text format, one node per line::

    treatment: T
    outcome: Y
    X1: intercept=0.0 noise=1.0
    T: X1=0.5 assign=logistic
    Y: T=2.0 X1=1.0 T*X1=0.5 noise=1.0 form=tanh
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import pandas as pd

from ._random import make_rng
from .graph import CausalDag, DagError

__all__ = [
    "Mechanism",
    "NONLINEAR_FORMS",
    "ScmSpec",
    "benchmark_suite",
    "brute_force_d_separated",
    "dump_scm",
    "get_benchmark",
    "monte_carlo_ate",
    "parse_scm",
    "sample",
    "study_frame",
    "true_ate",
]

NONLINEAR_FORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "softplus": lambda x: np.logaddexp(0.0, x),
    "square": np.square,
    "sin": np.sin,
}
ASSIGNMENTS = ("logistic", "threshold")


@dataclass(frozen=True)
class Mechanism:
    intercept: float = 0.0
    coefs: Mapping[str, float] = field(default_factory=dict)
    products: Mapping[tuple[str, str], float] = field(default_factory=dict)
    noise: float = 1.0
    form: str | None = None
    assign: str | None = None

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise standard deviation must be >= 0")
        if self.form is not None and self.form not in NONLINEAR_FORMS:
            raise ValueError(f"unknown nonlinear form {self.form!r}")
        if self.assign is not None and self.assign not in ASSIGNMENTS:
            raise ValueError(f"unknown assignment {self.assign!r}")
        object.__setattr__(self, "coefs", dict(self.coefs))
        object.__setattr__(self, "products", {tuple(k): v for k, v in self.products.items()})

    @property
    def parents(self) -> set[str]:
        out = set(self.coefs)
        for a, b in self.products:
            out.update((a, b))
        return out

    @property
    def is_linear(self) -> bool:
        return self.form is None and not self.products and self.assign is None

    def linear_part(self, values: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        out = np.full(n, float(self.intercept))
        for p, c in self.coefs.items():
            out = out + c * values[p]
        for (a, b), c in self.products.items():
            out = out + c * values[a] * values[b]
        return out


@dataclass(frozen=True)
class ScmSpec:
    dag: CausalDag
    mechanisms: Mapping[str, Mechanism]

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", dict(self.mechanisms))
        if set(self.mechanisms) != set(self.dag.nodes):
            raise ValueError("need exactly one mechanism per DAG node")
        for node, mech in self.mechanisms.items():
            if mech.parents != set(self.dag.parents(node)):
                raise ValueError(
                    f"mechanism of {node} uses parents {sorted(mech.parents)} but the DAG "
                    f"has {sorted(self.dag.parents(node))}")
            if mech.assign is not None and node != self.dag.treatment:
                raise ValueError(f"only the treatment node may be assigned ({node})")

    @classmethod
    def from_mechanisms(cls, mechanisms: Mapping[str, Mechanism], treatment: str,
                        outcome: str) -> "ScmSpec":
        nodes = list(mechanisms)
        edges = []
        for node, mech in mechanisms.items():
            for p in sorted(mech.parents, key=nodes.index):
                edges.append((p, node))
        return cls(CausalDag(tuple(nodes), tuple(edges), treatment, outcome), mechanisms)

    @property
    def treatment(self) -> str:
        return self.dag.treatment

    @property
    def outcome(self) -> str:
        return self.dag.outcome


def _evaluate(spec: ScmSpec, noise: Mapping[str, np.ndarray], uniforms, n, do=None):
    do = do or {}
    values: dict[str, np.ndarray] = {}
    for node in spec.dag.topological_order():
        if node in do:
            values[node] = np.broadcast_to(np.asarray(do[node], dtype=float), (n,)).copy()
            continue
        mech = spec.mechanisms[node]
        lin = mech.linear_part(values, n)
        if mech.assign == "logistic":
            latent = lin + mech.noise * noise[node]
            values[node] = (uniforms < 1.0 / (1.0 + np.exp(-latent))).astype(float)
        elif mech.assign == "threshold":
            values[node] = (lin + mech.noise * noise[node] > 0).astype(float)
        else:
            base = NONLINEAR_FORMS[mech.form](lin) if mech.form else lin
            values[node] = base + mech.noise * noise[node]
    return values


def _draw_noise(spec: ScmSpec, n: int, seed: int):
    rng = make_rng(seed, "scm")
    noise = {node: rng.standard_normal(n) for node in spec.dag.topological_order()}
    uniforms = rng.random(n)
    return noise, uniforms


def sample(spec: ScmSpec, n: int, seed: int, do: Mapping[str, object] | None = None) -> pd.DataFrame:
    """Ancestral sample of ``n`` rows; ``do`` fixes node values (scalar or per-row)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    noise, uniforms = _draw_noise(spec, n, seed)
    values = _evaluate(spec, noise, uniforms, n, do)
    return pd.DataFrame({node: values[node] for node in spec.dag.nodes})


def _closed_form_effect(spec: ScmSpec):
    t, y = spec.treatment, spec.outcome
    on_path = (spec.dag.descendants(t) & spec.dag.ancestors([y])) | {y}
    if y not in spec.dag.descendants(t):
        return 0.0
    if not all(spec.mechanisms[v].is_linear for v in on_path):
        return None
    effect = {t: 1.0}
    for node in spec.dag.topological_order():
        if node in on_path:
            effect[node] = sum(c * effect.get(p, 0.0)
                               for p, c in spec.mechanisms[node].coefs.items())
    return effect[y]


def monte_carlo_ate(spec: ScmSpec, n_mc: int, seed: int) -> tuple[float, float]:
    """Shared-noise estimate of E[Y|do(T=1)] - E[Y|do(T=0)] and its standard error."""
    noise, uniforms = _draw_noise(spec, n_mc, seed)
    y1 = _evaluate(spec, noise, uniforms, n_mc, {spec.treatment: 1.0})[spec.outcome]
    y0 = _evaluate(spec, noise, uniforms, n_mc, {spec.treatment: 0.0})[spec.outcome]
    diff = y1 - y0
    se = float(diff.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0
    return float(diff.mean()), se


def true_ate(spec: ScmSpec, n_mc: int = 1_000_000, seed: int = 0) -> float:
    """Ground-truth ATE: path-coefficient sum when the T->Y mechanisms are linear,
    shared-noise Monte Carlo otherwise."""
    closed = _closed_form_effect(spec)
    if closed is not None:
        return float(closed)
    return monte_carlo_ate(spec, n_mc, seed)[0]


def study_frame(spec: ScmSpec, n: int, seed: int, covariates=None):
    """Sample ``n`` rows and package them as a StudyFrame adjusted for ``covariates``
    (default: the treatment's parents)."""
    from .tabular import StudyFrame

    data = sample(spec, n, seed)
    if covariates is None:
        covariates = list(spec.dag.parents(spec.treatment))
    t = data[spec.treatment].to_numpy()
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("treatment of this spec is not binary")
    return StudyFrame.from_arrays(t, data[spec.outcome].to_numpy(),
                                  data[list(covariates)].to_numpy(), tuple(covariates))


# ---------------------------------------------------------------------------
# d-separation oracle

def brute_force_d_separated(dag: CausalDag, x: str, y: str, z, max_nodes: int = 12) -> bool:
    """Enumerate every simple undirected path between ``x`` and ``y`` and
    check each is blocked by ``z``."""
    if len(dag.nodes) > max_nodes:
        raise ValueError(f"path enumeration limited to {max_nodes} nodes")
    z = frozenset(z)
    for v in (x, y, *z):
        if v not in dag.nodes:
            raise DagError(f"unknown node {v!r}")
    edges = set(dag.edges)
    adjacency = {v: set() for v in dag.nodes}
    for a, b in edges:
        adjacency[a].add(b)
        adjacency[b].add(a)
    desc_inclusive = {v: dag.descendants(v) | {v} for v in dag.nodes}

    def blocked(path):
        for i in range(1, len(path) - 1):
            prev, mid, nxt = path[i - 1], path[i], path[i + 1]
            collider = (prev, mid) in edges and (nxt, mid) in edges
            if collider:
                if not (desc_inclusive[mid] & z):
                    return True
            elif mid in z:
                return True
        return False

    def walk(path, seen):
        node = path[-1]
        if node == y:
            yield list(path)
            return
        for nb in sorted(adjacency[node]):
            if nb not in seen:
                seen.add(nb)
                path.append(nb)
                yield from walk(path, seen)
                path.pop()
                seen.discard(nb)

    return all(blocked(p) for p in walk([x], {x}))


# ---------------------------------------------------------------------------
# text format

_RESERVED_KEYS = ("intercept", "noise", "form", "assign")


def dump_scm(spec: ScmSpec) -> str:
    lines = [f"treatment: {spec.treatment}", f"outcome: {spec.outcome}"]
    for node in spec.dag.nodes:
        m = spec.mechanisms[node]
        tokens = [f"intercept={float(m.intercept)!r}"]
        tokens += [f"{p}={float(c)!r}" for p, c in m.coefs.items()]
        tokens += [f"{a}*{b}={float(c)!r}" for (a, b), c in m.products.items()]
        tokens.append(f"noise={float(m.noise)!r}")
        if m.form:
            tokens.append(f"form={m.form}")
        if m.assign:
            tokens.append(f"assign={m.assign}")
        lines.append(f"{node}: " + " ".join(tokens))
    return "\n".join(lines) + "\n"


def parse_scm(text: str) -> ScmSpec:
    header = {}
    mechanisms: dict[str, Mechanism] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, rest = line.partition(":")
        if not sep:
            raise ValueError(f"line {lineno}: expected '<node>: key=value ...'")
        name = name.strip()
        if name in ("treatment", "outcome") and "=" not in rest:
            header[name] = rest.strip()
            continue
        kw = {"coefs": {}, "products": {}}
        for token in rest.split():
            key, eq, value = token.partition("=")
            if not eq:
                raise ValueError(f"line {lineno}: malformed token {token!r}")
            if key in ("intercept", "noise"):
                kw[key] = float(value)
            elif key in ("form", "assign"):
                kw[key] = value
            elif "*" in key:
                a, b = key.split("*", 1)
                kw["products"][(a, b)] = float(value)
            else:
                kw["coefs"][key] = float(value)
        if name in mechanisms:
            raise ValueError(f"line {lineno}: node {name} defined twice")
        mechanisms[name] = Mechanism(**kw)
    if "treatment" not in header or "outcome" not in header:
        raise ValueError("treatment and outcome directives are required")
    return ScmSpec.from_mechanisms(mechanisms, header["treatment"], header["outcome"])


# ---------------------------------------------------------------------------
# benchmarks

def _confounded_linear() -> ScmSpec:
    return ScmSpec.from_mechanisms({
        "X1": Mechanism(),
        "X2": Mechanism(),
        "X3": Mechanism(),
        "T": Mechanism(coefs={"X1": 0.5, "X2": 0.4, "X3": 0.3}, noise=0.0, assign="logistic"),
        "Y": Mechanism(intercept=1.0, coefs={"T": 2.0, "X1": 0.5, "X2": 0.5, "X3": 0.5}),
    }, "T", "Y")


def _null() -> ScmSpec:
    # T -> Y edge kept with a zero coefficient so the DAG still asks the causal question
    return ScmSpec.from_mechanisms({
        "X1": Mechanism(),
        "X2": Mechanism(),
        "X3": Mechanism(),
        "T": Mechanism(coefs={"X1": 0.5, "X2": 0.4, "X3": 0.3}, noise=0.0, assign="logistic"),
        "Y": Mechanism(coefs={"T": 0.0, "X1": 0.5, "X2": 0.5, "X3": 0.5}),
    }, "T", "Y")


def _heterogeneous() -> ScmSpec:
    return ScmSpec.from_mechanisms({
        "X1": Mechanism(intercept=0.5),
        "X2": Mechanism(),
        "T": Mechanism(coefs={"X1": 0.7, "X2": 0.5}, intercept=-0.35, noise=0.0,
                       assign="logistic"),
        "Y": Mechanism(coefs={"T": 1.0, "X1": 1.0, "X2": 0.5}, products={("T", "X1"): 1.0}),
    }, "T", "Y")


def _somalia_shaped() -> ScmSpec:
    # standardized latent scale; signs follow the usual drought-crisis story
    return ScmSpec.from_mechanisms({
        "ENSO": Mechanism(),
        "SPI": Mechanism(coefs={"ENSO": -0.5}, noise=0.85),
        "Fatalities": Mechanism(),
        "Population": Mechanism(),
        "SorghumProduction": Mechanism(coefs={"SPI": 0.6}, noise=0.8),
        "Displacement": Mechanism(coefs={"SPI": -0.5, "Fatalities": 0.4}, noise=0.75),
        "MarketPrices": Mechanism(coefs={"SPI": -0.4, "Fatalities": 0.3}, noise=0.85),
        "Cash": Mechanism(coefs={"MarketPrices": 0.3, "SorghumProduction": -0.3,
                                 "Displacement": 0.5, "Population": 0.2,
                                 "Fatalities": -0.2}, noise=0.7),
        "GAM": Mechanism(coefs={"MarketPrices": 0.3, "SorghumProduction": -0.3,
                                "Displacement": 0.4, "Population": 0.1,
                                "Fatalities": 0.2, "Cash": -0.25}, noise=0.6),
    }, "Cash", "GAM")


_BENCHMARKS = {
    "confounded-linear": _confounded_linear,
    "null": _null,
    "heterogeneous": _heterogeneous,
    "somalia-shaped": _somalia_shaped,
}


def benchmark_suite() -> list[tuple[ScmSpec, str]]:
    return [(build(), name) for name, build in _BENCHMARKS.items()]


def get_benchmark(name: str) -> ScmSpec:
    try:
        return _BENCHMARKS[name]()
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(_BENCHMARKS)}") \
            from None


def all_dags(n_nodes: int):
    """Every labelled DAG on ``n_nodes`` nodes named A, B, C, ..."""
    names = tuple("ABCDEFGHIJKL"[:n_nodes])
    pairs = list(itertools.combinations(range(n_nodes), 2))
    for states in itertools.product((0, 1, 2), repeat=len(pairs)):
        edges = []
        for (i, j), s in zip(pairs, states):
            if s == 1:
                edges.append((names[i], names[j]))
            elif s == 2:
                edges.append((names[j], names[i]))
        try:
            yield CausalDag(names, tuple(edges), names[0], names[-1])
        except DagError:
            continue


def random_dag(n_nodes: int, edge_prob: float, rng: np.random.Generator) -> CausalDag:
    names = tuple(f"V{i}" for i in range(n_nodes))
    order = rng.permutation(n_nodes)
    edges = []
    for a in range(n_nodes):
        for b in range(a + 1, n_nodes):
            if rng.random() < edge_prob:
                edges.append((names[order[a]], names[order[b]]))
    return CausalDag(names, tuple(edges), names[0], names[-1])
