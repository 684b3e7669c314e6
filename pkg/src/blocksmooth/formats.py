"""JSON and CSV formats for systems, models, scenarios, traces and estimates.

Blocks are written as flat row-major lists; nested lists are accepted on
input.  Floats go through ``repr`` (via :mod:`json`), which is the shortest
decimal string that parses back to the same double.
"""

import csv
import json

import numpy as np

from .blocktri import BlockTriSystem
from .errors import DimensionMismatch
from .kalman import LinearGaussianModel
from .sim import Scenario


def _flat(blocks):
    return [np.asarray(b, dtype=float).reshape(-1).tolist() for b in blocks]


def _blocks(items, rows, cols, name):
    out = []
    for k, item in enumerate(items):
        arr = np.asarray(item, dtype=float)
        if arr.size != rows * cols:
            raise DimensionMismatch(f"{name}[{k}] has {arr.size} entries, expected {rows}x{cols}")
        out.append(arr.reshape(rows, cols))
    return np.array(out).reshape(len(out), rows, cols)


def system_to_dict(sys):
    return {
        "n": sys.n,
        "N": sys.N,
        "ell": sys.ell,
        "diag": _flat(sys.diag),
        "sub": _flat(sys.sub),
        "rhs": _flat(sys.rhs),
    }


def system_from_dict(doc):
    n, N = int(doc["n"]), int(doc["N"])
    ell = int(doc.get("ell", 1))
    if len(doc["diag"]) != N or len(doc["sub"]) != N - 1 or len(doc["rhs"]) != N:
        raise DimensionMismatch(f"expected {N} diag, {N - 1} sub and {N} rhs blocks")
    return BlockTriSystem(
        _blocks(doc["diag"], n, n, "diag"),
        _blocks(doc["sub"], n, n, "sub"),
        _blocks(doc["rhs"], n, ell, "rhs"),
    )


def model_to_dict(model):
    return {
        "n": model.n,
        "N": model.N,
        "x0": model.x0.tolist(),
        "G": _flat(model.G),
        "Q": _flat(model.Q),
        "H": _flat(model.H),
        "R": _flat(model.R),
        "z": _flat(model.z),
    }


def model_from_dict(doc, name="model"):
    n, N = int(doc["n"]), int(doc["N"])
    G = doc["G"]
    G = _blocks(G, n, n, "G") if len(G) else np.zeros((0, n, n))
    H, R, z = [], [], []
    for k in range(N):
        zk = np.asarray(doc["z"][k], dtype=float).reshape(-1)
        m = zk.size
        H.append(_blocks([doc["H"][k]], m, n, "H")[0] if m else None)
        R.append(_blocks([doc["R"][k]], m, m, "R")[0] if m else None)
        z.append(zk if m else None)
    return LinearGaussianModel(
        np.asarray(doc["x0"], dtype=float), G, _blocks(doc["Q"], n, n, "Q"), H, R, z, name=name,
    )


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def scenario_to_dict(sc):
    return {
        "name": sc.name,
        "seed": sc.seed,
        "params": _plain(sc.params),
        "expected": {k: {"value": _plain(v), "tag": tag} for k, (v, tag) in sc.expected.items()},
        "model": model_to_dict(sc.model) if sc.model is not None else None,
        "system": system_to_dict(sc.system) if sc.system is not None else None,
    }


def scenario_from_dict(doc):
    """Read a scenario, a bare model or a bare system document."""
    if "diag" in doc:
        return Scenario(doc.get("name", "system"), system=system_from_dict(doc))
    if "Q" in doc:
        return Scenario(doc.get("name", "model"), model=model_from_dict(doc))
    name = doc.get("name", "scenario")
    model = model_from_dict(doc["model"], name=name) if doc.get("model") else None
    system = system_from_dict(doc["system"]) if doc.get("system") else None
    expected = {k: (v["value"], v["tag"]) for k, v in doc.get("expected", {}).items()}
    return Scenario(name, doc.get("seed"), model, system, expected, doc.get("params", {}))


def dump_json(doc, path):
    with open(path, "w") as fh:
        json.dump(_plain(doc), fh, indent=1)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_scenario(sc, path):
    dump_json(scenario_to_dict(sc), path)


def load_scenario(path):
    return scenario_from_dict(load_json(path))


TRACE_COLUMNS = ("k", "direction", "lambda_min", "lambda_max", "cond")


def write_trace_csv(trace, path):
    """One row per recorded pivot block."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for k, stage, lo, hi, cond in trace.block_spectra:
            w.writerow([k, stage, repr(lo), repr(hi), repr(cond)])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        (int(r["k"]), r["direction"], float(r["lambda_min"]), float(r["lambda_max"]), float(r["cond"]))
        for r in rows
    ]


def write_estimates_csv(x, path):
    """Rows ``k, x_1, .., x_n`` for a state sequence of shape (N, n) or (N, n, 1)."""
    x = np.asarray(x, dtype=float)
    x = x.reshape(x.shape[0], -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"x{i + 1}" for i in range(x.shape[1])])
        for k, row in enumerate(x, start=1):
            w.writerow([k] + [repr(float(v)) for v in row])


def read_estimates_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])
