"""Scenario files: one JSON document describing a full problem instance.

Schema version 1.  Matrices are row-major nested lists indexed
(bus, period); energy in MWh, prices in $/MWh.  Serialization round-trips
numeric fields bit-identically (floats pass through repr).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .games import AggregatorConfig
from .network import DemandProfile, Network
from .storage import AffineConstraint, StorageUnit
from .welfare import MpmpConfig

SCHEMA_VERSION = 1


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(ScenarioError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class VersionError(ScenarioError):
    pass


@dataclass(frozen=True)
class Scenario:
    network: Network
    demand: DemandProfile
    units: tuple
    aggregator: AggregatorConfig
    discount: float
    mpmp: Optional[MpmpConfig] = None
    name: str = ""
    description: str = ""

    @property
    def horizon(self) -> int:
        return self.demand.n_periods

    def unit(self, uid: str) -> StorageUnit:
        for u in self.units:
            if u.id == uid:
                return u
        raise KeyError(uid)


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ValidationError(f"{context}.{key}" if context else key, "missing field")
    return doc[key]


def _build_unit(raw: dict, idx: int, n_buses: int, horizon: int) -> StorageUnit:
    ctx = f"units[{idx}]"
    weights = raw.get("cost_weights", {})
    extras = []
    for k, c in enumerate(raw.get("extra_constraints", [])):
        cp = np.asarray(_require(c, "coeff_plus", f"{ctx}.extra_constraints[{k}]"), float)
        cm = np.asarray(_require(c, "coeff_minus", f"{ctx}.extra_constraints[{k}]"), float)
        if len(cp) != horizon or len(cm) != horizon:
            raise ValidationError(f"{ctx}.extra_constraints[{k}]",
                                  "coefficient length differs from the horizon")
        extras.append(AffineConstraint(cp, cm, float(_require(c, "rhs", ctx))))
    try:
        unit = StorageUnit(
            id=str(_require(raw, "id", ctx)),
            bus=int(_require(raw, "bus", ctx)),
            eta_plus=float(_require(raw, "eta_plus", ctx)),
            eta_minus=float(_require(raw, "eta_minus", ctx)),
            d_plus_max=float(_require(raw, "d_plus_max", ctx)),
            d_minus_max=float(_require(raw, "d_minus_max", ctx)),
            soc_min=float(_require(raw, "soc_min", ctx)),
            soc_max=float(_require(raw, "soc_max", ctx)),
            soc_init=float(_require(raw, "soc_init", ctx)),
            w_plus=float(weights.get("w_plus", 1.0)),
            w_minus=float(weights.get("w_minus", 1.0)),
            extra_constraints=tuple(extras),
        )
    except ValueError as exc:
        msg = str(exc)
        field_name = ctx
        for probe in ("eta_plus", "eta_minus", "soc", "limit", "weight"):
            if probe in msg:
                field_name = f"{ctx}.{probe.split()[0]}"
                break
        raise ValidationError(field_name, msg) from exc
    if not 0 <= unit.bus < n_buses:
        raise ValidationError(f"{ctx}.bus", f"bus {unit.bus} outside 0..{n_buses - 1}")
    return unit


def from_dict(doc: dict) -> Scenario:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    raw_net = _require(doc, "network", "")
    gen = _require(raw_net, "gen_cost", "network")
    try:
        network = Network(
            gen_cost_intercept=_require(gen, "intercept", "network.gen_cost"),
            gen_cost_slope=_require(gen, "slope", "network.gen_cost"),
            shift_factors=np.asarray(raw_net.get("shift_factors", []), float).reshape(
                -1, np.atleast_2d(np.asarray(gen["intercept"], float)).shape[0]),
            line_limits=raw_net.get("line_limits", []),
        )
    except ValueError as exc:
        raise ValidationError("network", str(exc)) from exc
    try:
        demand = DemandProfile(_require(doc, "demand", ""))
    except ValueError as exc:
        raise ValidationError("demand", str(exc)) from exc
    if demand.q.shape[0] != network.n_buses:
        raise ValidationError("demand", "bus count differs from the network")
    if demand.n_periods != network.n_periods:
        raise ValidationError("demand", "period count differs from the network horizon")

    raw_units = _require(doc, "units", "")
    units = tuple(_build_unit(raw, i, network.n_buses, demand.n_periods)
                  for i, raw in enumerate(raw_units))
    ids = [u.id for u in units]
    if len(set(ids)) != len(ids):
        raise ValidationError("units", "duplicate unit ids")

    raw_agg = _require(doc, "aggregator", "")
    try:
        aggregator = AggregatorConfig(
            price_bound=float(_require(raw_agg, "price_bound", "aggregator")),
            managed_units=tuple(_require(raw_agg, "managed_units", "aggregator")),
        )
    except ValueError as exc:
        raise ValidationError("aggregator", str(exc)) from exc
    for uid in aggregator.managed_units:
        if uid not in ids:
            raise ValidationError("aggregator.managed_units", f"unknown unit id {uid!r}")

    raw_rep = _require(doc, "repeated", "")
    discount = float(_require(raw_rep, "discount", "repeated"))
    if not 0.0 < discount < 1.0:
        raise ValidationError("repeated.discount", "must lie strictly inside (0, 1)")

    mpmp = None
    if doc.get("mpmp") is not None:
        constants = np.asarray(_require(doc["mpmp"], "constants", "mpmp"), float)
        if constants.shape != (network.n_buses, demand.n_periods):
            raise ValidationError("mpmp.constants", "shape differs from (buses, periods)")
        mpmp = MpmpConfig(constants)

    meta = doc.get("metadata", {})
    return Scenario(network=network, demand=demand, units=units, aggregator=aggregator,
                    discount=discount, mpmp=mpmp,
                    name=str(meta.get("name", "")), description=str(meta.get("description", "")))


def to_dict(s: Scenario) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "metadata": {"name": s.name, "description": s.description},
        "network": {
            "gen_cost": {
                "intercept": s.network.gen_cost_intercept.tolist(),
                "slope": s.network.gen_cost_slope.tolist(),
            },
            "shift_factors": s.network.shift_factors.tolist(),
            "line_limits": s.network.line_limits.tolist(),
        },
        "demand": s.demand.q.tolist(),
        "units": [
            {
                "id": u.id, "bus": u.bus,
                "eta_plus": u.eta_plus, "eta_minus": u.eta_minus,
                "d_plus_max": u.d_plus_max, "d_minus_max": u.d_minus_max,
                "soc_min": u.soc_min, "soc_max": u.soc_max, "soc_init": u.soc_init,
                "cost_weights": {"w_plus": u.w_plus, "w_minus": u.w_minus},
                "extra_constraints": [
                    {"coeff_plus": c.coeff_plus.tolist(),
                     "coeff_minus": c.coeff_minus.tolist(), "rhs": c.rhs}
                    for c in u.extra_constraints
                ],
            }
            for u in s.units
        ],
        "aggregator": {
            "price_bound": s.aggregator.price_bound,
            "managed_units": list(s.aggregator.managed_units),
        },
        "repeated": {"discount": s.discount},
    }
    if s.mpmp is not None:
        doc["mpmp"] = {"constants": s.mpmp.constants.tolist()}
    return doc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path.name}: {exc.msg}", line=exc.lineno, column=exc.colno)
    if not isinstance(doc, dict):
        raise ParseError(f"{path.name}: top level must be a JSON object")
    return from_dict(doc)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(canonical_json(to_dict(s)) + "\n")


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)


def scenario_hash(s: Scenario) -> str:
    return hashlib.sha256(canonical_json(to_dict(s)).encode()).hexdigest()
