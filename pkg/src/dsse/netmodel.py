"""Unbalanced distribution feeder model and its JSON interchange format.

All electrical quantities are held in per-unit. Branch admittances are read
in siemens and converted with the impedance base of the sending bus,
``z_base = V_base**2 / S_base`` (phase-to-neutral voltage, per-phase power).
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

PHASES = ("a", "b", "c")
PHASE_ANGLES = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}
DEVICE_KINDS = ("load", "generator")
BUS_KINDS = ("reference", "ordinary")


class NetworkError(ValueError):
    """Raised when a network file cannot be parsed or fails validation."""

    def __init__(self, message: str, violations: Sequence[str] = ()):
        super().__init__(message)
        self.violations = list(violations)


def phase_set(phases: Iterable[str]) -> tuple[str, ...]:
    """Return ``phases`` as an ordered tuple, rejecting duplicates and unknown names."""
    ph = list(phases)
    if not ph:
        raise NetworkError("empty phase set")
    if len(set(ph)) != len(ph):
        raise NetworkError(f"duplicate phases in {ph}")
    bad = [p for p in ph if p not in PHASES]
    if bad:
        raise NetworkError(f"unknown phases {bad}")
    return tuple(p for p in PHASES if p in ph)


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    kind: str = "ordinary"
    base_voltage: float = 230.0


@dataclass(frozen=True)
class Branch:
    """Three-phase pi-model branch. Matrices are per-unit, indexed by ``phases``."""

    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    y_series: np.ndarray
    y_shunt_from: np.ndarray
    y_shunt_to: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Branch):
            return NotImplemented
        return (
            (self.id, self.from_bus, self.to_bus, self.phases)
            == (other.id, other.from_bus, other.to_bus, other.phases)
            and np.array_equal(self.y_series, other.y_series)
            and np.array_equal(self.y_shunt_from, other.y_shunt_from)
            and np.array_equal(self.y_shunt_to, other.y_shunt_to)
        )

    __hash__ = None


@dataclass(frozen=True)
class Device:
    """Wye-connected load or generator. ``profile_p``/``profile_q`` are per-phase p.u. setpoints."""

    id: str
    bus: str
    phases: tuple[str, ...]
    kind: str = "load"
    connection: str = "wye"
    profile_p: tuple[float, ...] | None = None
    profile_q: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    devices: tuple[Device, ...]
    power_base_kva: float = 1.0
    name: str = ""

    # -- lookups -----------------------------------------------------------
    @cached_property
    def bus_map(self) -> dict[str, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def device_map(self) -> dict[str, Device]:
        return {d.id: d for d in self.devices}

    @cached_property
    def reference_bus(self) -> Bus:
        refs = [b for b in self.buses if b.kind == "reference"]
        if len(refs) != 1:
            raise NetworkError("network needs exactly one reference bus")
        return refs[0]

    # -- indexing ----------------------------------------------------------
    @cached_property
    def bus_phases(self) -> list[tuple[str, str]]:
        """Ordered (bus, phase) pairs; the index of a pair is its state position."""
        return [(b.id, p) for b in self.buses for p in b.phases]

    @cached_property
    def bp_index(self) -> dict[tuple[str, str], int]:
        return {bp: k for k, bp in enumerate(self.bus_phases)}

    @cached_property
    def device_phases(self) -> list[tuple[str, str]]:
        return [(d.id, p) for d in self.devices for p in d.phases]

    @cached_property
    def dp_index(self) -> dict[tuple[str, str], int]:
        return {dp: k for k, dp in enumerate(self.device_phases)}

    @cached_property
    def ref_indices(self) -> np.ndarray:
        ref = self.reference_bus
        return np.array([self.bp_index[(ref.id, p)] for p in ref.phases], dtype=int)

    @cached_property
    def nonref_indices(self) -> np.ndarray:
        mask = np.ones(len(self.bus_phases), dtype=bool)
        mask[self.ref_indices] = False
        return np.flatnonzero(mask)

    @cached_property
    def ref_angles(self) -> np.ndarray:
        return np.array([PHASE_ANGLES[p] for _, p in (self.bus_phases[k] for k in self.ref_indices)])

    @cached_property
    def flat_voltage(self) -> np.ndarray:
        """Balanced nominal voltages 1.0 p.u. with the standard phase displacement."""
        return np.array([np.exp(1j * PHASE_ANGLES[p]) for _, p in self.bus_phases])

    @cached_property
    def device_incidence(self) -> sp.csr_matrix:
        """Maps device-phase powers to bus-phase net injections (generation positive)."""
        rows, cols, vals = [], [], []
        for k, (did, p) in enumerate(self.device_phases):
            dev = self.device_map[did]
            rows.append(self.bp_index[(dev.bus, p)])
            cols.append(k)
            vals.append(1.0 if dev.kind == "generator" else -1.0)
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(self.bus_phases), len(self.device_phases)))

    def branch_index(self, br: Branch) -> tuple[np.ndarray, np.ndarray]:
        f = np.array([self.bp_index[(br.from_bus, p)] for p in br.phases])
        t = np.array([self.bp_index[(br.to_bus, p)] for p in br.phases])
        return f, t

    @cached_property
    def ybus(self) -> sp.csr_matrix:
        """Nodal admittance matrix over bus-phases.

        With this matrix the bus-phase sum of ``diag(S_ij)`` over incident
        branches equals ``U * conj(Y @ U)``.
        """
        n = len(self.bus_phases)
        rows, cols, vals = [], [], []

        def add(ri, ci, block):
            rr, cc = np.meshgrid(ri, ci, indexing="ij")
            rows.extend(rr.ravel())
            cols.extend(cc.ravel())
            vals.extend(block.ravel())

        for br in self.branches:
            f, t = self.branch_index(br)
            add(f, f, br.y_series + br.y_shunt_from)
            add(t, t, br.y_series + br.y_shunt_to)
            add(f, t, -br.y_series)
            add(t, f, -br.y_series)
        return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))

    @cached_property
    def head_branches(self) -> list[Branch]:
        ref = self.reference_bus.id
        return [br for br in self.branches if ref in (br.from_bus, br.to_bus)]

    @cached_property
    def users(self) -> list[Device]:
        return [d for d in self.devices if d.kind == "load"]


# -- validation ------------------------------------------------------------

def validate(network: Network) -> list[str]:
    """Return every invariant violation; an empty list means the network is valid."""
    out: list[str] = []
    ids = [b.id for b in network.buses]
    if len(set(ids)) != len(ids):
        out.append("duplicate bus ids")
    buses = {b.id: b for b in network.buses}
    refs = [b for b in network.buses if b.kind == "reference"]
    if not refs:
        out.append("missing reference bus")
    elif len(refs) > 1:
        out.append("multiple reference buses: " + ", ".join(b.id for b in refs))
    for b in network.buses:
        if b.kind not in BUS_KINDS:
            out.append(f"bus {b.id}: unknown kind {b.kind!r}")
        if not (b.base_voltage > 0):
            out.append(f"bus {b.id}: base voltage must be positive")
        if not b.phases or len(set(b.phases)) != len(b.phases) or set(b.phases) - set(PHASES):
            out.append(f"bus {b.id}: invalid phase set {b.phases}")
    if not (network.power_base_kva > 0):
        out.append("power base must be positive")

    for br in network.branches:
        missing = [x for x in (br.from_bus, br.to_bus) if x not in buses]
        for x in missing:
            out.append(f"branch {br.id}: unknown bus {x}")
        if br.from_bus == br.to_bus:
            out.append(f"branch {br.id}: from_bus equals to_bus")
        if missing:
            continue
        shared = [p for p in PHASES if p in buses[br.from_bus].phases and p in buses[br.to_bus].phases]
        if list(br.phases) != shared:
            out.append(f"branch {br.id}: phases {br.phases} differ from shared phases {tuple(shared)}")
        k = len(br.phases)
        for name in ("y_series", "y_shunt_from", "y_shunt_to"):
            if np.shape(getattr(br, name)) != (k, k):
                out.append(f"branch {br.id}: {name} must be {k}x{k}")
        if buses[br.from_bus].base_voltage != buses[br.to_bus].base_voltage:
            out.append(f"branch {br.id}: base voltage mismatch between endpoints")

    for d in network.devices:
        if d.bus not in buses:
            out.append(f"device {d.id}: unknown bus {d.bus}")
            continue
        if not set(d.phases) <= set(buses[d.bus].phases):
            out.append(f"device {d.id}: phase mismatch {d.phases} not in bus {d.bus} phases")
        if d.kind not in DEVICE_KINDS:
            out.append(f"device {d.id}: unknown kind {d.kind!r}")
        if d.connection != "wye":
            out.append(f"device {d.id}: unsupported connection {d.connection!r}")
        if buses[d.bus].kind == "reference":
            out.append(f"device {d.id}: devices at the reference bus are not supported")
        for prof in (d.profile_p, d.profile_q):
            if prof is not None and len(prof) != len(d.phases):
                out.append(f"device {d.id}: profile length differs from phase count")

    if len(refs) == 1 and not any("unknown bus" in v for v in out):
        unreached = _unreached_bus_phases(network.buses, network.branches, refs[0])
        if unreached:
            out.append("disconnected: unreachable bus-phases " + ", ".join(f"{b}.{p}" for b, p in unreached))
    return out


def _unreached_bus_phases(buses, branches, ref: Bus) -> list[tuple[str, str]]:
    adj: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for br in branches:
        for p in br.phases:
            adj.setdefault((br.from_bus, p), []).append((br.to_bus, p))
            adj.setdefault((br.to_bus, p), []).append((br.from_bus, p))
    seen = {(ref.id, p) for p in ref.phases}
    queue = deque(seen)
    while queue:
        node = queue.popleft()
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return [(b.id, p) for b in buses for p in b.phases if (b.id, p) not in seen]


# -- JSON interchange ------------------------------------------------------

def _matrix(obj, k: int, name: str) -> np.ndarray:
    if obj is None:
        return np.zeros((k, k), dtype=complex)
    try:
        re = np.asarray(obj["re"], dtype=float)
        im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"{name}: expected object with 're'/'im' arrays") from exc
    if re.shape != im.shape:
        raise NetworkError(f"{name}: 're' and 'im' shapes differ")
    m = np.atleast_2d(re + 1j * im)
    if m.shape != (k, k):
        raise NetworkError(f"{name}: expected a {k}x{k} matrix, got {m.shape}")
    return m


def _encode_matrix(m: np.ndarray) -> dict:
    return {"re": np.real(m).tolist(), "im": np.imag(m).tolist()}


def network_from_dict(data: dict) -> Network:
    """Build and validate a :class:`Network` from the decoded JSON document."""
    try:
        bases = data.get("bases", {})
        s_base = float(bases.get("power_kva", 1.0))
        v_default = float(bases.get("voltage_v", 230.0))
        buses = tuple(
            Bus(
                id=str(b["id"]),
                phases=phase_set(b["phases"]),
                kind=b.get("kind", "ordinary"),
                base_voltage=float(b.get("base_voltage", v_default)),
            )
            for b in data["buses"]
        )
        bus_lookup = {b.id: b for b in buses}
        branches = []
        for b in data.get("branches", []):
            fb, tb = str(b["from"]), str(b["to"])
            for x in (fb, tb):
                if x not in bus_lookup:
                    raise NetworkError(f"branch {b['id']}: unknown bus {x}", [f"branch {b['id']}: unknown bus {x}"])
            if "phases" in b:
                phases = phase_set(b["phases"])
            else:
                phases = tuple(p for p in PHASES if p in bus_lookup[fb].phases and p in bus_lookup[tb].phases)
            k = len(phases)
            v = bus_lookup[fb].base_voltage
            z_base = v * v / (s_base * 1e3)
            branches.append(
                Branch(
                    id=str(b["id"]),
                    from_bus=fb,
                    to_bus=tb,
                    phases=phases,
                    y_series=_matrix(b["y_series"], k, f"branch {b['id']} y_series") * z_base,
                    y_shunt_from=_matrix(b.get("y_shunt_from"), k, f"branch {b['id']} y_shunt_from") * z_base,
                    y_shunt_to=_matrix(b.get("y_shunt_to"), k, f"branch {b['id']} y_shunt_to") * z_base,
                )
            )
        devices = []
        for d in data.get("devices", []):
            prof = d.get("profile") or {}
            p = prof.get("p_kw")
            q = prof.get("q_kvar")
            devices.append(
                Device(
                    id=str(d["id"]),
                    bus=str(d["bus"]),
                    phases=phase_set(d["phases"]),
                    kind=d.get("kind", "load"),
                    connection=d.get("connection", "wye"),
                    profile_p=None if p is None else tuple(float(x) / s_base for x in p),
                    profile_q=None if q is None else tuple(float(x) / s_base for x in q),
                )
            )
    except KeyError as exc:
        raise NetworkError(f"missing required key {exc}") from exc
    net = Network(tuple(buses), tuple(branches), tuple(devices), s_base, str(data.get("name", "")))
    violations = validate(net)
    if violations:
        raise NetworkError("invalid network: " + "; ".join(violations), violations)
    return net


def network_to_dict(net: Network) -> dict:
    """Inverse of :func:`network_from_dict` (admittances back in siemens)."""
    s_base = net.power_base_kva
    out = {
        "name": net.name,
        "bases": {"power_kva": s_base},
        "buses": [
            {"id": b.id, "phases": list(b.phases), "kind": b.kind, "base_voltage": b.base_voltage}
            for b in net.buses
        ],
        "branches": [],
        "devices": [],
    }
    for br in net.branches:
        v = net.bus_map[br.from_bus].base_voltage
        z_base = v * v / (s_base * 1e3)
        out["branches"].append(
            {
                "id": br.id,
                "from": br.from_bus,
                "to": br.to_bus,
                "phases": list(br.phases),
                "y_series": _encode_matrix(br.y_series / z_base),
                "y_shunt_from": _encode_matrix(br.y_shunt_from / z_base),
                "y_shunt_to": _encode_matrix(br.y_shunt_to / z_base),
            }
        )
    for d in net.devices:
        rec = {"id": d.id, "bus": d.bus, "phases": list(d.phases), "kind": d.kind, "connection": d.connection}
        if d.profile_p is not None or d.profile_q is not None:
            rec["profile"] = {}
            if d.profile_p is not None:
                rec["profile"]["p_kw"] = [x * s_base for x in d.profile_p]
            if d.profile_q is not None:
                rec["profile"]["q_kvar"] = [x * s_base for x in d.profile_q]
        out["devices"].append(rec)
    return out


def load_network(path) -> Network:
    """Read a network JSON file. Bundled fixture names (``"feeder30"``) are accepted too."""
    p = Path(path)
    if not p.exists():
        bundled = fixture_path(str(path))
        if bundled is None:
            raise NetworkError(f"network file not found: {path}")
        p = bundled
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{p}: malformed JSON ({exc})") from exc
    return network_from_dict(data)


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))


def fixture_path(name: str) -> Path | None:
    data_dir = Path(__file__).parent / "data"
    for cand in (data_dir / name, data_dir / f"{name}.json"):
        if cand.is_file():
            return cand
    return None
