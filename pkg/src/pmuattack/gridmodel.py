"""Measurement transform built from a network topology and PMU channel placement.

Buses are indexed from 0 inside Python objects. The JSON topology format
uses 1-based bus numbers; conversion happens in :func:`topology_from_dict`
and :func:`topology_to_dict` only.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import InvalidSize, InvalidTopology, ShapeMismatch, ZeroImpedanceLine


class UnobservedBusWarning(UserWarning):
    """Some bus is seen by no channel, so its column of the transform is zero."""


@dataclass(frozen=True)
class Line:
    i: int
    j: int
    z: complex
    y: complex = 0j


@dataclass(frozen=True)
class VoltageChannel:
    bus: int


@dataclass(frozen=True)
class CurrentChannel:
    from_bus: int
    to_bus: int


Channel = Union[VoltageChannel, CurrentChannel]


@dataclass(frozen=True)
class GridTopology:
    """Buses, pi-model lines and an ordered list of PMU channels."""

    n_buses: int
    lines: tuple[Line, ...]
    channels: tuple[Channel, ...]

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.n_buses < 1:
            raise InvalidTopology("n_buses must be positive")
        seen = set()
        for line in self.lines:
            for b in (line.i, line.j):
                if not 0 <= b < self.n_buses:
                    raise InvalidTopology(f"line references bus {b} outside [0, {self.n_buses})")
            if line.i == line.j:
                raise InvalidTopology(f"self-loop at bus {line.i}")
            key = frozenset((line.i, line.j))
            if key in seen:
                raise InvalidTopology(f"duplicate line between {line.i} and {line.j}")
            seen.add(key)
        if not self.channels:
            raise InvalidTopology("channel list is empty")
        for ch in self.channels:
            if isinstance(ch, VoltageChannel):
                if not 0 <= ch.bus < self.n_buses:
                    raise InvalidTopology(f"voltage channel at unknown bus {ch.bus}")
            elif isinstance(ch, CurrentChannel):
                if frozenset((ch.from_bus, ch.to_bus)) not in seen:
                    raise InvalidTopology(
                        f"current channel {ch.from_bus}->{ch.to_bus} has no matching line"
                    )
            else:
                raise InvalidTopology(f"unknown channel type {ch!r}")

    @property
    def p(self) -> int:
        return len(self.channels)

    def line_between(self, a: int, b: int) -> Line:
        for line in self.lines:
            if {line.i, line.j} == {a, b}:
                return line
        raise InvalidTopology(f"no line between {a} and {b}")


@dataclass(frozen=True)
class TransformMatrix:
    """Raw transform ``W_bar`` (p x n) and its column-normalised version ``W``.

    Columns of ``W_bar`` with zero norm belong to buses no channel observes.
    They stay zero in ``W`` and are listed in ``unobserved``.
    """

    W_bar: np.ndarray
    W: np.ndarray
    column_norms: np.ndarray
    unobserved: tuple[int, ...] = field(default=())

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    @property
    def observed(self) -> np.ndarray:
        """Indices of buses whose column is nonzero (valid attack locations)."""
        return np.flatnonzero(self.column_norms > 0)


def transform_from_matrix(W_bar) -> TransformMatrix:
    """Normalise the columns of an arbitrary transform matrix.

    Used both by :func:`build_transform` and for synthetic transforms that do
    not come from a network (Gaussian or binary matrices).
    """
    W_bar = np.asarray(W_bar)
    if W_bar.ndim != 2:
        raise ShapeMismatch(f"transform must be 2-D, got shape {W_bar.shape}")
    norms = np.linalg.norm(W_bar, axis=0)
    unobserved = tuple(int(j) for j in np.flatnonzero(norms == 0))
    if unobserved:
        warnings.warn(
            f"buses {list(unobserved)} are observed by no channel", UnobservedBusWarning, stacklevel=2
        )
    safe = np.where(norms > 0, norms, 1.0)
    W = W_bar / safe
    for arr in (W_bar, W, norms):
        arr.setflags(write=False)
    return TransformMatrix(W_bar=W_bar, W=W, column_norms=norms, unobserved=unobserved)


def build_transform(topology: GridTopology) -> TransformMatrix:
    """Build ``W_bar`` channel by channel from the pi line model.

    A voltage channel at bus j puts 1 at column j. A current channel from
    bus i to bus j puts ``1/Z + Y/2`` at column i and ``-1/Z`` at column j.
    """
    for line in topology.lines:
        if line.z == 0:
            raise ZeroImpedanceLine(f"line {line.i}-{line.j} has zero impedance")
    W_bar = np.zeros((topology.p, topology.n_buses), dtype=complex)
    for k, ch in enumerate(topology.channels):
        if isinstance(ch, VoltageChannel):
            W_bar[k, ch.bus] = 1.0
        else:
            line = topology.line_between(ch.from_bus, ch.to_bus)
            z, y = complex(line.z), complex(line.y)
            W_bar[k, ch.from_bus] = 1.0 / z + y / 2.0
            W_bar[k, ch.to_bus] = -1.0 / z
    return transform_from_matrix(W_bar)


def relate_states_to_measurements(X, tm: TransformMatrix | np.ndarray) -> np.ndarray:
    """Noise-free measurements ``X @ W_bar.T`` for bus-voltage states ``X`` (t x n)."""
    W_bar = tm.W_bar if isinstance(tm, TransformMatrix) else np.asarray(tm)
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != W_bar.shape[1]:
        raise ShapeMismatch(f"states {X.shape} do not match transform {W_bar.shape}")
    return X @ W_bar.T


def three_bus_topology(
    z12: complex = 0.01 + 0.1j,
    z13: complex = 0.02 + 0.2j,
    z23: complex = 0.015 + 0.12j,
    y12: complex = 0.02j,
    y13: complex = 0.03j,
    y23: complex = 0.025j,
) -> GridTopology:
    """Three buses, PMUs at buses 1 and 2 with channels [V1, I12, I13, V2, I21, I23]."""
    lines = (Line(0, 1, z12, y12), Line(0, 2, z13, y13), Line(1, 2, z23, y23))
    channels = (
        VoltageChannel(0),
        CurrentChannel(0, 1),
        CurrentChannel(0, 2),
        VoltageChannel(1),
        CurrentChannel(1, 0),
        CurrentChannel(1, 2),
    )
    return GridTopology(3, lines, channels)


def ring_index_sets(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows (0-based) where column ``2k-1`` and column ``2k`` of the ring transform are nonzero.

    ``k`` runs from 1 to ``n/2`` as in the 1-based description of the ring.
    """
    half = n // 2
    rows_odd = np.array([k + (k - 1) * half + kk for kk in range(half + 1)]) - 1
    rows_even = np.array([k + 1 + (half + 1) * kk for kk in range(half)]) - 1
    return rows_odd, rows_even


def build_ring_network(n: int) -> tuple[GridTopology, TransformMatrix]:
    """Bipartite "ring" network: every odd bus is joined to every even bus.

    A PMU sits on each odd bus and measures its voltage and all its incident
    currents. Lines have ``Z = 1`` and ``Y = 0``, so the transform has shape
    ``(n**2/4 + n/2, n)``.
    """
    if n < 4 or n % 2:
        raise InvalidSize(f"ring network needs an even n >= 4, got {n}")
    odd = range(0, n, 2)  # 1-based buses 1, 3, 5, ...
    even = range(1, n, 2)
    lines = [Line(a, b, 1.0, 0.0) for a in odd for b in even]
    channels: list[Channel] = []
    for a in odd:
        channels.append(VoltageChannel(a))
        channels.extend(CurrentChannel(a, b) for b in even)
    topo = GridTopology(n, tuple(lines), tuple(channels))
    return topo, build_transform(topo)


def gaussian_transform(p: int, n: int, rng: np.random.Generator) -> TransformMatrix:
    """Dense transform with i.i.d. N(0, 1) entries."""
    return transform_from_matrix(rng.standard_normal((p, n)))


def binary_regular_transform(
    p: int, n: int, row_ones: int, rng: np.random.Generator, max_tries: int = 1000
) -> TransformMatrix:
    """0/1 transform with ``row_ones`` ones per row and ``p*row_ones/n`` per column.

    Sampled by pairing row and column stubs at random and rejecting pairings
    that put two stubs on the same entry.
    """
    if (p * row_ones) % n:
        raise InvalidSize(f"p*row_ones={p * row_ones} is not divisible by n={n}")
    col_ones = p * row_ones // n
    row_stubs = np.repeat(np.arange(p), row_ones)
    for _ in range(max_tries):
        col_stubs = rng.permutation(np.repeat(np.arange(n), col_ones))
        W = np.zeros((p, n))
        np.add.at(W, (row_stubs, col_stubs), 1.0)
        if W.max() == 1.0:
            return transform_from_matrix(W)
    raise RuntimeError("could not sample a simple binary regular transform")


# -- JSON / CSV boundary ---------------------------------------------------


def topology_from_dict(data: dict) -> GridTopology:
    """Parse the JSON topology format (1-based bus numbers)."""
    lines = tuple(
        Line(
            int(d["i"]) - 1,
            int(d["j"]) - 1,
            complex(d.get("z_re", 0.0), d.get("z_im", 0.0)),
            complex(d.get("y_re", 0.0), d.get("y_im", 0.0)),
        )
        for d in data.get("lines", [])
    )
    channels: list[Channel] = []
    for d in data["channels"]:
        kind = d["kind"].upper()
        if kind == "V":
            channels.append(VoltageChannel(int(d["bus"]) - 1))
        elif kind == "I":
            channels.append(CurrentChannel(int(d["from"]) - 1, int(d["to"]) - 1))
        else:
            raise InvalidTopology(f"unknown channel kind {d['kind']!r}")
    return GridTopology(int(data["n_buses"]), lines, tuple(channels))


def topology_to_dict(topology: GridTopology) -> dict:
    lines = [
        {
            "i": ln.i + 1,
            "j": ln.j + 1,
            "z_re": complex(ln.z).real,
            "z_im": complex(ln.z).imag,
            "y_re": complex(ln.y).real,
            "y_im": complex(ln.y).imag,
        }
        for ln in topology.lines
    ]
    channels = []
    for ch in topology.channels:
        if isinstance(ch, VoltageChannel):
            channels.append({"kind": "V", "bus": ch.bus + 1})
        else:
            channels.append({"kind": "I", "from": ch.from_bus + 1, "to": ch.to_bus + 1})
    return {"n_buses": topology.n_buses, "lines": lines, "channels": channels}


def load_topology(path) -> GridTopology:
    return topology_from_dict(json.loads(Path(path).read_text()))


def save_topology(topology: GridTopology, path) -> None:
    Path(path).write_text(json.dumps(topology_to_dict(topology), indent=2))


def channel_labels(topology: GridTopology) -> list[str]:
    """Human-readable names such as ``V1`` or ``I12`` (1-based)."""
    out = []
    for ch in topology.channels:
        if isinstance(ch, VoltageChannel):
            out.append(f"V{ch.bus + 1}")
        else:
            out.append(f"I{ch.from_bus + 1}-{ch.to_bus + 1}")
    return out
