"""Instance generation, benchmark-file parsing, references and gap arithmetic."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ParseError, UnsupportedFormatError
from .problems import CVRP, KINDS, TSP, Instance
from .rand import make_rng


@dataclass
class GeneratorConfig:
    """Synthetic instance recipe. For CVRP/OVRP `n` counts customers only."""

    kind: str
    n: int
    seed: int
    capacity: int = 50
    demand_range: tuple[int, int] = (1, 9)
    depot_position: tuple[float, float] = (0.5, 0.5)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}")
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        lo, hi = self.demand_range
        if lo < 1 or hi < lo:
            raise ConfigError("demand_range must satisfy 1 <= min <= max")
        if self.capacity < hi:
            raise ConfigError("capacity must cover the largest possible demand")


def generate(config: GeneratorConfig) -> Instance:
    """Deterministic instance from `config` (PCG64 stream keyed by the seed).

    Coordinates are uniform on the unit square; VRP kinds add a depot at
    `depot_position` (node 0) and integer demands uniform on `demand_range`.
    Draw order is coordinates first, then demands.
    """
    config.validate()
    rng = make_rng(config.seed)
    name = f"{config.kind}{config.n}-s{config.seed}"
    if config.kind == TSP:
        coords = rng.random((config.n, 2))
        return Instance.from_coords(TSP, coords, name=name)
    cust = rng.random((config.n, 2))
    lo, hi = config.demand_range
    demands = rng.integers(lo, hi + 1, size=config.n)
    coords = np.vstack([np.asarray(config.depot_position, dtype=float), cust])
    return Instance.from_coords(
        config.kind, coords,
        demands=np.concatenate([[0], demands]),
        capacity=config.capacity, depot=0, name=name)


# --- TSPLIB / CVRPLIB readers -------------------------------------------------

def _split_header(line: str):
    key, _, value = line.partition(":")
    return key.strip().upper(), value.strip()


def parse_tsplib(text: str) -> Instance:
    """Read a TSPLIB file (EUC_2D only; distances use the nint rounding rule)."""
    lines = text.splitlines()
    header = {}
    coords_at = None
    for idx, raw in enumerate(lines):
        token = raw.strip()
        if not token or token == "EOF":
            continue
        if token.upper().startswith("NODE_COORD_SECTION"):
            coords_at = idx + 1
            break
        if ":" in token:
            key, value = _split_header(token)
            header[key] = value
        else:
            raise ParseError(f"unexpected line {token!r}", line=idx + 1)
    if coords_at is None:
        raise ParseError("missing NODE_COORD_SECTION")
    weight_type = header.get("EDGE_WEIGHT_TYPE", "")
    if weight_type != "EUC_2D":
        raise UnsupportedFormatError(
            f"EDGE_WEIGHT_TYPE {weight_type or '(absent)'} not supported (EUC_2D only)")
    try:
        dimension = int(header["DIMENSION"])
    except KeyError:
        raise ParseError("missing DIMENSION") from None
    coords = _read_coord_rows(lines, coords_at, dimension)
    return Instance.from_coords(TSP, coords, name=header.get("NAME", ""), rounded=True)


def _read_coord_rows(lines, start, count):
    coords = np.empty((count, 2), dtype=float)
    for k in range(count):
        idx = start + k
        if idx >= len(lines):
            raise ParseError("coordinate section truncated", line=len(lines))
        parts = lines[idx].split()
        if len(parts) < 3:
            raise ParseError("coordinate section truncated", line=idx + 1)
        try:
            node = int(parts[0])
            coords[node - 1] = (float(parts[1]), float(parts[2]))
        except (ValueError, IndexError):
            raise ParseError(f"bad coordinate row {lines[idx]!r}", line=idx + 1) from None
    return coords


def parse_cvrplib(text: str) -> Instance:
    """Read a CVRPLIB .vrp file (EUC_2D, explicit demand and depot sections)."""
    lines = text.splitlines()
    header = {}
    sections = {}
    idx = 0
    while idx < len(lines):
        token = lines[idx].strip()
        upper = token.upper()
        if not token or upper == "EOF":
            idx += 1
            continue
        if upper.endswith("_SECTION"):
            sections[upper] = idx + 1
            idx += 1
            continue
        if ":" in token:
            key, value = _split_header(token)
            header[key] = value
        idx += 1
    weight_type = header.get("EDGE_WEIGHT_TYPE", "EUC_2D")
    if weight_type != "EUC_2D":
        raise UnsupportedFormatError(f"EDGE_WEIGHT_TYPE {weight_type} not supported")
    try:
        dimension = int(header["DIMENSION"])
        capacity = int(header["CAPACITY"])
    except KeyError as exc:
        raise ParseError(f"missing {exc.args[0]}") from None
    if "NODE_COORD_SECTION" not in sections:
        raise ParseError("missing NODE_COORD_SECTION")
    if "DEMAND_SECTION" not in sections:
        raise ParseError("missing DEMAND_SECTION")
    coords = _read_coord_rows(lines, sections["NODE_COORD_SECTION"], dimension)
    demands = np.zeros(dimension, dtype=int)
    start = sections["DEMAND_SECTION"]
    for k in range(dimension):
        row = start + k
        if row >= len(lines) or len(lines[row].split()) < 2:
            raise ParseError("demand section truncated", line=min(row, len(lines) - 1) + 1)
        node, value = lines[row].split()[:2]
        demands[int(node) - 1] = int(value)
    depot = 0
    if "DEPOT_SECTION" in sections:
        row = sections["DEPOT_SECTION"]
        try:
            depot = int(lines[row].split()[0]) - 1
        except (IndexError, ValueError):
            raise ParseError("depot section truncated", line=row + 1) from None
    if demands[depot] != 0:
        raise FormatError(f"depot demand must be 0, found {demands[depot]}")
    return Instance.from_coords(
        CVRP, coords, demands=demands, capacity=capacity, depot=depot,
        name=header.get("NAME", ""), rounded=True)


def format_tsplib(instance: Instance) -> str:
    """TSPLIB text for an instance we generated; coordinates round-trip exactly."""
    out = [
        f"NAME : {instance.name or 'generated'}",
        "TYPE : TSP",
        f"DIMENSION : {instance.n}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        "NODE_COORD_SECTION",
    ]
    for i, (x, y) in enumerate(instance.coords, start=1):
        out.append(f"{i} {float(x)!r} {float(y)!r}")
    out.append("EOF")
    return "\n".join(out) + "\n"


# --- gaps and references ------------------------------------------------------

def scaling_factor(instance: Instance) -> float:
    """Maximum spatial extent, max(x-range, y-range); translation invariant."""
    xs = instance.coords[:, 0]
    ys = instance.coords[:, 1]
    return float(max(xs.max() - xs.min(), ys.max() - ys.min()))


def gap(obj: float, reference: float) -> float:
    """Signed relative excess (obj - reference) / reference."""
    if reference <= 0:
        raise ValueError("reference cost must be positive")
    return (obj - reference) / reference


@dataclass
class ReferenceTable:
    """Best-known or oracle costs keyed by instance name."""

    entries: dict[str, tuple[float, str]] = field(default_factory=dict)

    def add(self, name: str, cost: float, source: str = "file"):
        if cost <= 0:
            raise ValueError(f"reference cost for {name} must be positive")
        self.entries[name] = (float(cost), source)

    def cost(self, name: str) -> float | None:
        entry = self.entries.get(name)
        return entry[0] if entry else None

    @classmethod
    def load(cls, path) -> "ReferenceTable":
        table = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                table.add(row["name"], float(row["cost"]), row.get("source", "file"))
        return table

    def save(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "cost", "source"])
            for name, (cost, source) in sorted(self.entries.items()):
                writer.writerow([name, repr(cost), source])


# --- native JSON serialization ------------------------------------------------

def instance_to_json(instance: Instance) -> dict:
    doc = {
        "kind": instance.kind,
        "name": instance.name,
        "coords": [[float(x), float(y)] for x, y in instance.coords],
        "demands": None if instance.demands is None else [int(d) for d in instance.demands],
        "capacity": instance.capacity,
        "depot": instance.depot,
    }
    return doc


def instance_from_json(doc: dict) -> Instance:
    return Instance.from_coords(
        doc["kind"], np.asarray(doc["coords"], dtype=float),
        demands=doc.get("demands"), capacity=doc.get("capacity"),
        depot=doc.get("depot"), name=doc.get("name", ""))


def save_instance(instance: Instance, path):
    Path(path).write_text(json.dumps(instance_to_json(instance)) + "\n")


def load_instance(path) -> Instance:
    """Load a native .json instance, or a .tsp/.vrp benchmark file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".tsp":
        inst = parse_tsplib(text)
    elif path.suffix == ".vrp":
        inst = parse_cvrplib(text)
    else:
        inst = instance_from_json(json.loads(text))
    if not inst.name:
        inst.name = path.stem
    return inst
