"""Regenerate the bundled network fixtures in src/dsse/data/.

Run from the repository root: ``python tools/make_fixtures.py``.
"""
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "dsse" / "data"
OMEGA = 2 * np.pi * 50


def enc(m):
    m = np.atleast_2d(m)
    return {"re": np.real(m).tolist(), "im": np.imag(m).tolist()}


def cable(z_self, z_mut, c_self_uf, length_km):
    """Kron-reduced 3x3 phase impedance per km -> series/shunt admittances in S."""
    z = np.full((3, 3), z_mut, dtype=complex)
    np.fill_diagonal(z, z_self)
    y = np.linalg.inv(z * length_km)
    b = 1j * OMEGA * c_self_uf * 1e-6 * length_km
    ysh = np.eye(3) * b / 2
    return y, ysh


def two_bus():
    y = 1.0 / (0.05 + 0.03j)
    return {
        "name": "two_bus",
        "bases": {"power_kva": 1.0, "voltage_v": 230.0},
        "buses": [
            {"id": "b1", "phases": ["a"], "kind": "reference"},
            {"id": "b2", "phases": ["a"]},
        ],
        "branches": [{"id": "l1", "from": "b1", "to": "b2", "y_series": enc(y)}],
        "devices": [
            {"id": "u1", "bus": "b2", "phases": ["a"], "kind": "load",
             "profile": {"p_kw": [2.0], "q_kvar": [0.5]}}
        ],
    }


TRUNK = dict(z_self=0.32 + 0.26j, z_mut=0.10 + 0.20j, c_self_uf=0.30)
LATERAL = dict(z_self=0.60 + 0.28j, z_mut=0.20 + 0.22j, c_self_uf=0.25)

# (from, to, kind, length_m)
FEEDER30_EDGES = (
    [(f"b{i}", f"b{i + 1}", TRUNK, 35.0) for i in range(1, 12)]
    + [
        ("b3", "b13", LATERAL, 25.0), ("b13", "b14", LATERAL, 25.0), ("b14", "b15", LATERAL, 30.0),
        ("b5", "b16", LATERAL, 25.0), ("b16", "b17", LATERAL, 30.0),
        ("b6", "b18", LATERAL, 20.0), ("b18", "b19", LATERAL, 25.0), ("b19", "b20", LATERAL, 30.0),
        ("b8", "b21", LATERAL, 25.0), ("b21", "b22", LATERAL, 20.0),
        ("b9", "b23", LATERAL, 20.0), ("b23", "b24", LATERAL, 25.0), ("b24", "b25", LATERAL, 25.0),
        ("b10", "b26", LATERAL, 30.0), ("b26", "b27", LATERAL, 25.0),
        ("b11", "b28", LATERAL, 25.0), ("b28", "b29", LATERAL, 30.0),
        ("b12", "b30", LATERAL, 30.0),
    ]
)
FEEDER30_USERS = ["b14", "b15", "b17", "b7", "b20", "b22", "b25", "b27", "b29", "b30"]


def feeder30():
    rng = np.random.default_rng(30)
    buses = [{"id": "b1", "phases": ["a", "b", "c"], "kind": "reference"}]
    buses += [{"id": f"b{i}", "phases": ["a", "b", "c"]} for i in range(2, 31)]
    branches = []
    for k, (f, t, kind, length) in enumerate(FEEDER30_EDGES, start=1):
        y, ysh = cable(length_km=length / 1000.0, **kind)
        branches.append({"id": f"l{k}", "from": f, "to": t, "y_series": enc(y),
                         "y_shunt_from": enc(ysh), "y_shunt_to": enc(ysh)})
    devices = []
    for k, bus in enumerate(FEEDER30_USERS, start=1):
        p = np.round(rng.uniform(0.15, 1.2, size=3), 3)
        q = np.round(p * rng.uniform(0.15, 0.35, size=3), 3)
        devices.append({"id": f"u{k}", "bus": bus, "phases": ["a", "b", "c"], "kind": "load",
                        "profile": {"p_kw": p.tolist(), "q_kvar": q.tolist()}})
    return {"name": "feeder30", "bases": {"power_kva": 1.0, "voltage_v": 230.0},
            "buses": buses, "branches": branches, "devices": devices}


def three_bus():
    y = np.linalg.inv(np.array([[0.4 + 0.3j, 0.1 + 0.2j], [0.1 + 0.2j, 0.4 + 0.3j]]) * 0.05)
    return {
        "name": "three_bus",
        "bases": {"power_kva": 1.0, "voltage_v": 230.0},
        "buses": [
            {"id": "b1", "phases": ["a", "b"], "kind": "reference"},
            {"id": "b2", "phases": ["a", "b"]},
            {"id": "b3", "phases": ["a", "b"]},
        ],
        "branches": [
            {"id": "l1", "from": "b1", "to": "b2", "y_series": enc(y)},
            {"id": "l2", "from": "b2", "to": "b3", "y_series": enc(y)},
        ],
        "devices": [
            {"id": "u1", "bus": "b3", "phases": ["a", "b"], "kind": "load",
             "profile": {"p_kw": [1.5, 0.8], "q_kvar": [0.3, 0.2]}},
            {"id": "g1", "bus": "b2", "phases": ["b"], "kind": "generator",
             "profile": {"p_kw": [0.4], "q_kvar": [0.0]}},
        ],
    }


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fn in [("two_bus", two_bus), ("feeder30", feeder30), ("three_bus", three_bus)]:
        (OUT / f"{name}.json").write_text(json.dumps(fn(), indent=1) + "\n")
        print("wrote", OUT / f"{name}.json")
