"""Run configuration: one JSON document describing model, field, grids,
expansion order, epsilon ladder and oracle choices."""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import StateVelocity, TestFunction, UGrid, VelocityField
from .model import SemiMarkovModel, SojournDistribution


class ConfigError(ValueError):
    """Malformed configuration document."""


@dataclass
class OracleConfig:
    method: str = "direct"
    n_samples: int = 100000
    seed: int = 20240811
    h_s: float = 0.02
    u_stride: int = 16
    t_eval: tuple = (0.5, 1.0)
    richardson: bool = False


@dataclass
class OutputConfig:
    t_stride: int = 25
    tau_stride: int = 40
    u_stride: int = 1


@dataclass
class RunConfig:
    model: SemiMarkovModel
    grid: UGrid
    field: VelocityField
    phi: TestFunction
    order: int = 2
    horizon: float = 1.0
    h_t: float = 0.002
    h_tau: float = 0.005
    tau_max: float | None = None
    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    oracle: OracleConfig = dc_field(default_factory=OracleConfig)
    output: OutputConfig = dc_field(default_factory=OutputConfig)


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ConfigError(f"missing key {key!r} in {context}")
    return doc[key]


def _sojourn_from_doc(doc: dict, where: str) -> SojournDistribution:
    fam = _require(doc, "family", where)
    try:
        if fam == "exponential":
            return SojournDistribution("exponential", rate=float(_require(doc, "rate", where)))
        if fam == "erlang":
            return SojournDistribution("erlang", rate=float(_require(doc, "rate", where)),
                                       shape=int(_require(doc, "shape", where)))
        if fam == "uniform":
            return SojournDistribution("uniform", a=float(_require(doc, "a", where)),
                                       b=float(_require(doc, "b", where)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sojourn parameters in {where}: {exc}") from exc
    raise ConfigError(f"unknown sojourn family {fam!r} in {where}")


def _velocity_from_doc(doc: dict, where: str, grid: UGrid) -> StateVelocity:
    kind = _require(doc, "kind", where)
    if kind == "constant":
        return StateVelocity("constant", value=float(_require(doc, "value", where)))
    if kind == "linear":
        return StateVelocity("linear", slope=float(_require(doc, "slope", where)),
                             intercept=float(_require(doc, "intercept", where)))
    if kind == "tabulated":
        vals = np.asarray(_require(doc, "values", where), dtype=float)
        if vals.shape != (grid.n_points,):
            raise ConfigError(f"tabulated velocity in {where} must have {grid.n_points} values")
        return StateVelocity("tabulated", table=vals)
    raise ConfigError(f"unknown velocity kind {kind!r} in {where}")


def config_from_document(doc: dict) -> RunConfig:
    mdoc = _require(doc, "model", "document")
    states = tuple(_require(mdoc, "states", "model"))
    P = np.asarray(_require(mdoc, "transitions", "model"), dtype=float)
    sojourns = [_sojourn_from_doc(s, f"model.sojourns[{i}]")
                for i, s in enumerate(_require(mdoc, "sojourns", "model"))]
    if len(sojourns) != len(states):
        raise ConfigError("model.sojourns must list one entry per state")
    if P.shape != (len(states), len(states)):
        raise ConfigError(f"transitions must be {len(states)}x{len(states)}")
    try:
        model = SemiMarkovModel(states=states, P=P, sojourns=tuple(sojourns))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    gdoc = doc.get("grid", {})
    grid = UGrid(u_min=float(gdoc.get("u_min", -8.0)),
                 u_max=float(gdoc.get("u_max", 8.0)),
                 n_points=int(gdoc.get("n_points", 257)),
                 boundary_mode=gdoc.get("boundary_mode", "extrapolate"))

    vdoc = _require(doc, "velocity", "document")
    if len(vdoc) != len(states):
        raise ConfigError("velocity must list one entry per state")
    fld = VelocityField(grid, tuple(_velocity_from_doc(v, f"velocity[{i}]", grid)
                                    for i, v in enumerate(vdoc)))

    tdoc = doc.get("test_function", {})
    phi = TestFunction(kind=tdoc.get("kind", "gaussian"),
                       center=float(tdoc.get("center", 0.0)),
                       width=float(tdoc.get("width", 1.0)),
                       coeffs=tuple(tdoc.get("coeffs", (1.0,))))

    time_doc = doc.get("time", {})
    layer_doc = doc.get("layer", {})
    eps = tuple(float(e) for e in doc.get("epsilons", (0.2, 0.1, 0.05, 0.025)))
    for e in eps:
        if not 0.0 < e < 1.0:
            raise ConfigError(f"epsilon {e} outside (0, 1)")

    odoc = doc.get("oracle", {})
    oracle = OracleConfig(method=odoc.get("method", "direct"),
                          n_samples=int(odoc.get("n_samples", 100000)),
                          seed=int(odoc.get("seed", 20240811)),
                          h_s=float(odoc.get("h_s", 0.02)),
                          u_stride=int(odoc.get("u_stride", 16)),
                          t_eval=tuple(float(t) for t in odoc.get("t_eval", (0.5, 1.0))),
                          richardson=bool(odoc.get("richardson", False)))
    if oracle.method not in ("direct", "mc"):
        raise ConfigError(f"oracle.method must be 'direct' or 'mc', got {oracle.method!r}")

    outdoc = doc.get("output", {})
    output = OutputConfig(t_stride=int(outdoc.get("t_stride", 25)),
                          tau_stride=int(outdoc.get("tau_stride", 40)),
                          u_stride=int(outdoc.get("u_stride", 1)))

    order = int(doc.get("order", 2))
    if not 0 <= order <= 3:
        raise ConfigError(f"order {order} outside the supported range 0..3")

    return RunConfig(model=model, grid=grid, field=fld, phi=phi, order=order,
                     horizon=float(time_doc.get("horizon", 1.0)),
                     h_t=float(time_doc.get("h_t", 0.002)),
                     h_tau=float(layer_doc.get("h_tau", 0.005)),
                     tau_max=layer_doc.get("tau_max"),
                     epsilons=eps, oracle=oracle, output=output)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return config_from_document(doc)
