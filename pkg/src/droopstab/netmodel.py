"""Network configurations, per-unit admittance models and droop settings."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    Disconnected,
    DroopTooSmall,
    InvalidConfig,
    NoSuchLine,
    NonUniformRho,
)

DROOP_FLOOR_PCT = 1e-4
RHO_RTOL = 1e-9


@dataclass(frozen=True)
class LineSpec:
    from_node: int
    to_node: int
    resistance: float  # ohm
    reactance: float  # ohm

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise InvalidConfig(f"line {self.from_node}-{self.to_node} is a self loop")
        if self.resistance < 0:
            raise InvalidConfig("line resistance must be non-negative")
        if not self.reactance > 0:
            raise NonUniformRho(
                f"line {self.from_node}-{self.to_node} has non-positive reactance; R/X undefined"
            )

    @property
    def pair(self):
        return tuple(sorted((self.from_node, self.to_node)))

    @property
    def impedance(self):
        return complex(self.resistance, self.reactance)


@dataclass(frozen=True)
class NetworkConfig:
    id: str
    n_nodes: int
    lines: tuple
    v_base_ll: float = 4160.0
    s_base: float = 1e6
    f0: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        if self.n_nodes < 2:
            raise InvalidConfig("a network needs at least two nodes")
        if not self.lines:
            raise Disconnected("network has no lines")
        for ln in self.lines:
            if not (0 <= ln.from_node < self.n_nodes and 0 <= ln.to_node < self.n_nodes):
                raise InvalidConfig(f"line {ln.from_node}-{ln.to_node} references a missing node")
        if not _connected(self.n_nodes, self.lines):
            raise Disconnected(f"network {self.id!r} is not connected")
        ratios = np.array([ln.resistance / ln.reactance for ln in self.lines])
        if not np.allclose(ratios, ratios[0], rtol=RHO_RTOL, atol=0.0):
            raise NonUniformRho(f"lines of {self.id!r} disagree on R/X: {sorted(set(ratios))}")

    @property
    def z_base(self):
        return self.v_base_ll**2 / self.s_base

    @property
    def rho(self):
        ln = self.lines[0]
        return ln.resistance / ln.reactance

    def has_line(self, i, j):
        return any(ln.pair == tuple(sorted((i, j))) for ln in self.lines)

    def to_dict(self):
        return {
            "id": self.id,
            "n_nodes": self.n_nodes,
            "v_base_ll": self.v_base_ll,
            "s_base": self.s_base,
            "f0": self.f0,
            "lines": [
                {"from": ln.from_node, "to": ln.to_node, "r_ohm": ln.resistance, "x_ohm": ln.reactance}
                for ln in self.lines
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            lines = [LineSpec(int(l["from"]), int(l["to"]), float(l["r_ohm"]), float(l["x_ohm"])) for l in d["lines"]]
            return cls(
                id=str(d["id"]),
                n_nodes=int(d["n_nodes"]),
                lines=lines,
                v_base_ll=float(d["v_base_ll"]),
                s_base=float(d["s_base"]),
                f0=float(d["f0"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"malformed network description: {exc}") from exc


def _connected(n, lines):
    adj = {i: set() for i in range(n)}
    for ln in lines:
        adj[ln.from_node].add(ln.to_node)
        adj[ln.to_node].add(ln.from_node)
    seen, stack = {0}, [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


@dataclass(frozen=True, eq=False)
class AdmittanceModel:
    """Per-unit bus admittance in polar form plus the scalar R/X ratio."""

    y_mag: np.ndarray
    y_ang: np.ndarray
    rho: float
    z_base: float = 1.0

    @property
    def n(self):
        return self.y_mag.shape[0]

    @property
    def y_bus(self):
        return self.y_mag * np.exp(1j * self.y_ang)

    @property
    def b_mat(self):
        return self.y_mag * np.sin(self.y_ang)

    @classmethod
    def from_complex(cls, y_bus, rho, z_base=1.0):
        y_bus = np.asarray(y_bus, dtype=complex)
        return cls(np.abs(y_bus), np.angle(y_bus), float(rho), float(z_base))


@dataclass(frozen=True, eq=False)
class DroopSetting:
    k_f_pct: np.ndarray
    k_v_pct: np.ndarray
    omega_c: float = 31.41
    f0: float = 50.0
    v0: float = 1.0
    p0: np.ndarray = field(default=None)
    q0: np.ndarray = field(default=None)

    def __post_init__(self):
        kf = np.asarray(self.k_f_pct, dtype=float).reshape(-1)
        kv = np.asarray(self.k_v_pct, dtype=float).reshape(-1)
        if kf.shape != kv.shape:
            raise DimensionMismatch("k_f and k_v vectors differ in length")
        object.__setattr__(self, "k_f_pct", kf)
        object.__setattr__(self, "k_v_pct", kv)
        if not self.omega_c > 0:
            raise InvalidConfig("filter corner frequency must be positive")
        check_droop_floor(np.concatenate([kf, kv]))

    @property
    def n(self):
        return self.k_f_pct.size

    @property
    def vector(self):
        return np.concatenate([self.k_f_pct, self.k_v_pct])

    @classmethod
    def from_vector(cls, vec, **kw):
        vec = np.asarray(vec, dtype=float)
        n = vec.size // 2
        return cls(vec[:n], vec[n:], **kw)

    @classmethod
    def uniform(cls, n, k_f_pct, k_v_pct, **kw):
        return cls(np.full(n, float(k_f_pct)), np.full(n, float(k_v_pct)), **kw)


def check_droop_floor(values):
    values = np.asarray(values, dtype=float)
    bad = ~(values > DROOP_FLOOR_PCT)
    if bad.any():
        raise DroopTooSmall(
            f"droop gains {values[bad].tolist()} are not above the floor of {DROOP_FLOOR_PCT}%"
        )


def build_admittance(config: NetworkConfig) -> AdmittanceModel:
    n, zb = config.n_nodes, config.z_base
    y = np.zeros((n, n), dtype=complex)
    for ln in config.lines:
        y_line = zb / ln.impedance
        i, j = ln.from_node, ln.to_node
        y[i, j] -= y_line
        y[j, i] -= y_line
        y[i, i] += y_line
        y[j, j] += y_line
    return AdmittanceModel.from_complex(y, config.rho, zb)


def contingency_label(i, j):
    a, b = sorted((i + 1, j + 1))
    return f"y{a}{b}/2" if b < 10 else f"y{a}-{b}/2"


def apply_contingency(config: NetworkConfig, line) -> NetworkConfig:
    """Halve the admittance of the line joining ``line = (i, j)`` (0-based)."""
    pair = tuple(sorted(int(v) for v in line))
    if not config.has_line(*pair):
        raise NoSuchLine(f"no line {pair[0] + 1}-{pair[1] + 1} in {config.id!r}")
    lines = [
        replace(ln, resistance=2 * ln.resistance, reactance=2 * ln.reactance) if ln.pair == pair else ln
        for ln in config.lines
    ]
    return replace(config, id=f"{config.id}:{contingency_label(*pair)}", lines=tuple(lines))


def droop_inverse_matrices(droops: DroopSetting):
    check_droop_floor(droops.vector)
    l_p = np.diag(1.0 / (droops.k_f_pct / 100.0))
    l_q = np.diag(1.0 / (droops.k_v_pct / 100.0))
    return l_p, l_q


# Table I impedances in ohm, 0-based nodes.
_RING5_LINES = ((0, 1, 0.08, 0.08), (1, 2, 0.15, 0.15), (2, 3, 0.05, 0.05), (3, 4, 0.15, 0.15), (0, 4, 0.02, 0.02))

RING5_NOMINAL_KF = 0.15
RING5_NOMINAL_KV = 5.0
RING5_OMEGA_C = 31.41


def ring5() -> NetworkConfig:
    return NetworkConfig(
        id="ring5",
        n_nodes=5,
        lines=tuple(LineSpec(*row) for row in _RING5_LINES),
        v_base_ll=4160.0,
        s_base=1e6,
        f0=50.0,
    )


def nominal_droops(config: NetworkConfig) -> DroopSetting:
    return DroopSetting.uniform(
        config.n_nodes, RING5_NOMINAL_KF, RING5_NOMINAL_KV, omega_c=RING5_OMEGA_C, f0=config.f0
    )


BUILTIN = {"ring5": ring5}

_CONTINGENCY_RE = re.compile(r"^y(\d)(\d)/2$|^y(\d+)-(\d+)/2$")


def parse_contingency(token):
    m = _CONTINGENCY_RE.match(token)
    if not m:
        raise InvalidConfig(f"cannot parse contingency {token!r}; expected e.g. y12/2")
    a, b = (m.group(1), m.group(2)) if m.group(1) else (m.group(3), m.group(4))
    return int(a) - 1, int(b) - 1


def resolve_config(spec: str) -> NetworkConfig:
    """Resolve ``name[:yij/2...]`` where name is a built-in fixture or a JSON path."""
    head, *mods = spec.split(":")
    if head in BUILTIN:
        config = BUILTIN[head]()
    else:
        config = load_config(head)
    for token in mods:
        config = apply_contingency(config, parse_contingency(token))
    return config


def load_config(path) -> NetworkConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read network file {path}: {exc}") from exc
    return NetworkConfig.from_dict(data)


def save_config(config: NetworkConfig, path):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")
