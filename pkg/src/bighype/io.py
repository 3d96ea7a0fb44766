"""JSON documents for game instances, run settings and results.

Every document carries ``"schema": 1`` and a ``"kind"``:

* ``"game"``: a linear-quadratic instance, matrices as row-major nested lists;
* ``"demand_response"``: a demand-response configuration, rebuilt on load;
* ``"summary"``: a finished run, holding the instance and the solver
  settings it was run with, so it can be fed back as a config.

Any document may carry a ``"solver"`` object with run settings (schedules,
preset, limits).  Writes go through a temporary file and a rename.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import ConfigInvalid
from .game import GameSpec, PolyhedronSpec, QuadCostSpec, QuadraticLeaderCost
from .sets import Ball, Box, Product, Simplex

SCHEMA = 1


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def _opt(a):
    return None if a is None else _arr(a)


# --------------------------------------------------------------------------
# leader sets


def leader_set_to_dict(X):
    if isinstance(X, Box):
        return {"box": {"lo": _arr(X.lo), "hi": _arr(X.hi), "sum_max": X.sum_max}}
    if isinstance(X, Ball):
        return {"ball": {"center": _arr(X.center), "radius": float(X.radius)}}
    if isinstance(X, Simplex):
        return {"simplex": {"dim": int(X.dim), "lower": _arr(X.lower), "total": float(X.total)}}
    if isinstance(X, Product):
        return {"product": [leader_set_to_dict(p) for p in X.parts]}
    raise TypeError(f"cannot serialize leader set {type(X).__name__}")


def leader_set_from_dict(doc):
    if not isinstance(doc, dict) or len(doc) != 1:
        raise ConfigInvalid({"leader_set": "expected a single-key tagged object"})
    (tag, body), = doc.items()
    try:
        if tag == "box":
            return Box(body["lo"], body["hi"], body.get("sum_max"))
        if tag == "ball":
            return Ball(body["center"], float(body["radius"]))
        if tag == "simplex":
            return Simplex(int(body["dim"]), body.get("lower"), float(body.get("total", 1.0)))
        if tag == "product":
            return Product(tuple(leader_set_from_dict(p) for p in body))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid({f"leader_set.{tag}": str(exc)}) from exc
    raise ConfigInvalid({"leader_set": f"unknown set type {tag!r}"})


# --------------------------------------------------------------------------
# games


def spec_to_dict(spec):
    """Serialize a game; demand-response games are stored by configuration."""
    if spec.meta.get("kind") == "demand_response":
        return {"schema": SCHEMA, "kind": "demand_response", "config": spec.meta["config"]}
    if spec.costs is None:
        raise TypeError("only linear-quadratic and demand-response games are serializable")
    followers = []
    for c, P in zip(spec.costs, spec.polyhedra):
        cost = {"Q": _arr(c.Q), "E0": _arr(c.E0), "e": _arr(c.e), "E": {str(j): _arr(v) for j, v in c.E.items()}}
        if c.B is not None:
            cost["B"] = _arr(c.B)
        poly = {k: _arr(getattr(P, k)) for k in ("A", "b", "G", "C", "d", "H")}
        followers.append({"n": int(c.n), "cost": cost, "poly": poly})
    lc = spec.leader_cost
    leader = {
        "type": "quadratic",
        "nv": lc.nv,
        "Pxx": _arr(lc.Pxx),
        "Pxv": _arr(lc.Pxv),
        "Pvv": _arr(lc.Pvv),
        "qx": _arr(lc.qx),
        "qv": _arr(lc.qv),
        "const": lc.const,
        "aggregate": lc.aggregate,
    }
    return {
        "schema": SCHEMA,
        "kind": "game",
        "variant": spec.variant,
        "m": spec.m,
        "followers": followers,
        "aggregation": None if spec.aggregation is None else [_arr(K) for K in spec.aggregation],
        "leader_cost": leader,
        "leader_set": leader_set_to_dict(spec.leader_set),
        "gamma": spec.gamma,
    }


def _check_schema(doc):
    if not isinstance(doc, dict):
        raise ConfigInvalid({"document": "expected a JSON object"})
    if doc.get("schema") != SCHEMA:
        raise ConfigInvalid({"schema": f"expected {SCHEMA}, got {doc.get('schema')!r}"})


def spec_from_dict(doc):
    _check_schema(doc)
    kind = doc.get("kind", "game")
    if kind == "summary":
        return spec_from_dict(doc["instance"])
    if kind == "demand_response":
        from .demand_response import build

        return build(doc.get("config", {}))
    if kind != "game":
        raise ConfigInvalid({"kind": f"unknown document kind {kind!r}"})
    errors = {}
    try:
        m = int(doc["m"])
        costs, polys = [], []
        for i, f in enumerate(doc["followers"]):
            n = int(f["n"])
            c = f["cost"]
            B = c.get("B")
            costs.append(
                QuadCostSpec(
                    Q=c["Q"],
                    E0=np.asarray(c["E0"], float).reshape(n, m),
                    e=c["e"],
                    E={int(j): v for j, v in c.get("E", {}).items()},
                    B=B,
                )
            )
            p = f["poly"]
            polys.append(PolyhedronSpec.build(n, m, **{k: _shape_or_none(p.get(k)) for k in ("A", "b", "G", "C", "d", "H")}))
        lc = doc["leader_cost"]
        if lc.get("type", "quadratic") != "quadratic":
            raise ConfigInvalid({"leader_cost.type": "only quadratic leader costs are supported"})
        leader = QuadraticLeaderCost(
            m,
            int(lc["nv"]),
            **{k: _shape_or_none(lc.get(k)) for k in ("Pxx", "Pxv", "Pvv", "qx", "qv")},
            const=lc.get("const", 0.0),
            aggregate=bool(lc.get("aggregate", False)),
        )
        X = leader_set_from_dict(doc["leader_set"])
        return GameSpec.from_costs(
            costs,
            polys,
            leader,
            X,
            variant=doc.get("variant", "lqg"),
            aggregation=doc.get("aggregation"),
            gamma=doc.get("gamma"),
        )
    except ConfigInvalid:
        raise
    except KeyError as exc:
        errors[str(exc.args[0])] = "missing field"
    except (TypeError, ValueError) as exc:
        errors["game"] = str(exc)
    raise ConfigInvalid(errors)


def _shape_or_none(v):
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    return a if a.size else None


# --------------------------------------------------------------------------
# files


def atomic_write_text(path, text):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(doc):
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def save_json(path, doc):
    atomic_write_text(path, dumps(doc))


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigInvalid({"config": f"file not found: {path}"}) from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid({"config": f"invalid JSON: {exc}"}) from exc


def save_spec(path, spec):
    save_json(path, spec_to_dict(spec))


def load_spec(path):
    return spec_from_dict(load_json(path))


def load_config(path):
    """Return ``(spec, solver_settings, document)`` from any supported document."""
    doc = load_json(path)
    spec = spec_from_dict(doc)
    solver = dict(doc.get("solver") or {})
    return spec, solver, doc
