"""TSPLIB ingestion (EUC_2D subset), bundled reference instances, and the
known-optima table used for optimality gaps.

EUC_2D leg lengths are rounded half-up to the nearest integer, which is
why the reference optima are integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .graphs import EuclideanInstance, METRIC_ROUNDED

DATA_DIR = Path(__file__).parent / "data"

# Proven optimal tour lengths (rounded EUC_2D metric) for the instances the
# benchmark tables cover.
KNOWN_OPTIMA = {
    "eil51": 426, "berlin52": 7542, "st70": 675, "eil76": 538,
    "pr76": 108159, "rat99": 1211, "kroA100": 21282, "kroB100": 22141,
    "kroC100": 20749, "kroD100": 21294, "kroE100": 22068, "rd100": 7910,
    "eil101": 629, "lin105": 14379, "pr107": 44303, "pr124": 59030,
    "bier127": 118282, "ch130": 6110, "pr136": 96772, "pr144": 58537,
    "ch150": 6528, "kroA150": 26524, "kroB150": 26130, "pr152": 73682,
    "u159": 42080, "rat195": 2323, "d198": 15780, "kroA200": 29368,
    "kroB200": 29437, "ts225": 126643, "tsp225": 3916,
    "pr226": 80369, "gil262": 2378, "pr264": 49135, "a280": 2579,
    "pr299": 48191, "lin318": 42029, "rd400": 15281, "fl417": 11861,
    "pr439": 107217, "pcb442": 50778,
}

SUPPORTED_EDGE_WEIGHT_TYPES = ("EUC_2D",)


@dataclass
class TsplibInstance:
    name: str
    dimension: int
    edge_weight_type: str
    coords: np.ndarray       # (n, 2) in the file's native units
    optimal: float | None    # known optimum from KNOWN_OPTIMA, if any
    comment: str = ""

    def to_euclidean(self) -> EuclideanInstance:
        return EuclideanInstance(coords=self.coords.copy(),
                                 metric=METRIC_ROUNDED, name=self.name)


def parse_tsplib(text: str) -> TsplibInstance:
    """Parse the keyword/section format; only EUC_2D node-coord files are
    accepted.  Errors name the offending line."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    fields = {}
    coords = {}
    lines = text.splitlines()
    i = 0
    in_coords = False
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line == "EOF":
            in_coords = False
            continue
        if in_coords:
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"line {i}: expected 'id x y', got {line!r}")
            try:
                idx = int(parts[0])
                x, y = float(parts[1]), float(parts[2])
            except ValueError:
                raise FormatError(f"line {i}: bad coordinate row {line!r}")
            if idx in coords:
                raise FormatError(f"line {i}: duplicate node id {idx}")
            coords[idx] = (x, y)
            continue
        if line == "NODE_COORD_SECTION":
            in_coords = True
            continue
        if line in ("DISPLAY_DATA_SECTION", "EDGE_WEIGHT_SECTION", "TOUR_SECTION"):
            raise FormatError(f"line {i}: unsupported section {line}")
        if ":" in line:
            key, val = (s.strip() for s in line.split(":", 1))
            fields[key.upper()] = val
            continue
        raise FormatError(f"line {i}: unrecognized content {line!r}")
    for required in ("NAME", "DIMENSION", "EDGE_WEIGHT_TYPE"):
        if required not in fields:
            raise FormatError(f"missing {required} field")
    ewt = fields["EDGE_WEIGHT_TYPE"]
    if ewt not in SUPPORTED_EDGE_WEIGHT_TYPES:
        raise FormatError(f"unsupported EDGE_WEIGHT_TYPE {ewt!r} "
                          f"(supported: {SUPPORTED_EDGE_WEIGHT_TYPES})")
    try:
        dim = int(fields["DIMENSION"])
    except ValueError:
        raise FormatError(f"bad DIMENSION value {fields['DIMENSION']!r}")
    if not coords:
        raise FormatError("missing NODE_COORD_SECTION")
    if len(coords) != dim:
        raise FormatError(f"DIMENSION {dim} but {len(coords)} coordinate rows")
    if sorted(coords) != list(range(1, dim + 1)):
        raise FormatError("node ids must be 1..DIMENSION")
    arr = np.array([coords[i] for i in range(1, dim + 1)], dtype=np.float64)
    name = fields["NAME"]
    return TsplibInstance(name=name, dimension=dim, edge_weight_type=ewt,
                          coords=arr, optimal=KNOWN_OPTIMA.get(name),
                          comment=fields.get("COMMENT", ""))


def serialize_tsplib(inst: TsplibInstance) -> str:
    lines = [
        f"NAME : {inst.name}",
        "TYPE : TSP",
    ]
    if inst.comment:
        lines.append(f"COMMENT : {inst.comment}")
    lines += [
        f"DIMENSION : {inst.dimension}",
        f"EDGE_WEIGHT_TYPE : {inst.edge_weight_type}",
        "NODE_COORD_SECTION",
    ]
    for i, (x, y) in enumerate(inst.coords, 1):
        lines.append(f"{i} {x:.10g} {y:.10g}")
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def parse_tour(text: str, dimension: int | None = None) -> np.ndarray:
    """Parse a TSPLIB .tour file into a 0-based permutation."""
    nodes = []
    in_tour = False
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line == "TOUR_SECTION":
            in_tour = True
            continue
        if line in ("-1", "EOF"):
            in_tour = False
            continue
        if in_tour:
            for tok in line.split():
                try:
                    nodes.append(int(tok))
                except ValueError:
                    raise FormatError(f"line {i}: bad tour entry {tok!r}")
    if not nodes:
        raise FormatError("no TOUR_SECTION entries found")
    perm = np.array(nodes, dtype=np.int64) - 1
    if dimension is not None and len(perm) != dimension:
        raise FormatError(f"tour has {len(perm)} nodes, expected {dimension}")
    return perm


def load_bundled(name: str) -> TsplibInstance:
    """Load one of the instances shipped with the package (eil51, berlin52)."""
    path = DATA_DIR / f"{name}.tsp"
    if not path.exists():
        raise FormatError(f"no bundled instance named {name!r}")
    return parse_tsplib(path.read_text())


def load_bundled_opt_tour(name: str) -> np.ndarray:
    path = DATA_DIR / f"{name}.opt.tour"
    if not path.exists():
        raise FormatError(f"no bundled optimal tour for {name!r}")
    return parse_tour(path.read_text())
