"""Study files (JSON) and result reports (CSV, JSON lines).

Files are in SI unless they carry ``"units": "pu"``. Voltages are peak
phase-to-ground values, ``v_base`` is the peak phase voltage and ``s_base``
the three-phase power, so ``z_base = v_base**2 / s_base`` and
``i_base = s_base / v_base``. Three-phase P/Q setpoints enter the dq
reference law as ``(2/3) P / s_base`` because the Park transform is
amplitude-invariant.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .cider.builders import build_cider
from .cider.reference import PqReference, VfReference
from .cider.transforms import TransformSpec
from .exceptions import StudyError
from .grid import BranchElement, GridModel, Node, ShuntElement, require_valid
from .ltp import HarmonicIndexSet, HarmonicSignal
from .sources import EquivalentSpec

# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------
_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_id = {"type": ["string", "integer"]}
_flat9 = {"type": "array", "items": _num, "minItems": 9, "maxItems": 9}
_flat18 = {"type": "array", "items": _num, "minItems": 18, "maxItems": 18}
_flat6 = {"type": "array", "items": _num, "minItems": 6, "maxItems": 6}
_htable = {
    "type": "object",
    "propertyNames": {"pattern": "^[0-9]+$"},
    "additionalProperties": _flat18,
    "minProperties": 1,
}
_units = {"enum": ["si", "pu"]}
MAX_HMAX = 1000  # far beyond converter bandwidths; guards against runaway allocations

GRID_SCHEMA = {
    "type": "object",
    "required": ["f1_hz", "v_base", "s_base", "nodes", "branches"],
    "properties": {
        "units": _units,
        "f1_hz": _pos,
        "v_base": _pos,
        "s_base": _pos,
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "kind"],
                "properties": {"id": _id, "kind": {"enum": ["forming", "following", "zero"]}},
                "additionalProperties": False,
            },
        },
        "branches": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["from", "to"],
                "properties": {
                    "id": _id, "from": _id, "to": _id,
                    "R": _flat9, "L": _flat9, "Z_table": _htable,
                },
                "oneOf": [{"required": ["R", "L"]}, {"required": ["Z_table"]}],
                "additionalProperties": False,
            },
        },
        "shunts": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["node"],
                "properties": {"id": _id, "node": _id, "G": _flat9, "C": _flat9, "Y_table": _htable},
                "not": {"anyOf": [
                    {"required": ["Y_table", "G"]},
                    {"required": ["Y_table", "C"]},
                ]},
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

_gain = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]}
CIDER_SCHEMA = {
    "type": "object",
    "required": ["node", "mode", "filter", "controller", "setpoint"],
    "properties": {
        "node": _id,
        "name": {"type": "string"},
        "mode": {"enum": ["forming", "following"]},
        "filter": {
            "type": "object",
            "required": ["stages"],
            "properties": {"stages": {"type": "array", "minItems": 1, "items": {
                "type": "object",
                "required": ["L"],
                "properties": {"L": _pos, "R": _nonneg, "C": _nonneg},
                "additionalProperties": False,
            }}},
            "additionalProperties": False,
        },
        "controller": {
            "type": "object",
            "required": ["stages"],
            "properties": {"stages": {"type": "array", "minItems": 1, "items": {
                "type": "object",
                "required": ["kp", "ki"],
                "properties": {"kp": _gain, "ki": _gain},
                "additionalProperties": False,
            }}},
            "additionalProperties": False,
        },
        "transform": {"enum": ["park", "clarke"]},
        "theta0": _num,
        "setpoint": {"oneOf": [
            {"type": "object", "required": ["V", "f"], "properties": {"V": _nonneg, "f": _pos},
             "additionalProperties": False},
            {"type": "object", "required": ["P", "Q"], "properties": {"P": _num, "Q": _num},
             "additionalProperties": False},
        ]},
    },
    "additionalProperties": False,
}
CIDER_FILE_SCHEMA = {
    "oneOf": [
        CIDER_SCHEMA,
        {"type": "array", "items": CIDER_SCHEMA},
        {"type": "object", "required": ["ciders"],
         "properties": {"units": _units, "ciders": {"type": "array", "items": CIDER_SCHEMA}},
         "additionalProperties": False},
    ]
}

SOURCE_SCHEMA = {
    "type": "object",
    "required": ["node", "kind", "spectrum", "matrix"],
    "properties": {
        "node": _id,
        "kind": {"enum": ["thevenin", "norton"]},
        "spectrum": {
            "type": "object",
            "propertyNames": {"pattern": "^[0-9]+$"},
            "additionalProperties": _flat6,
        },
        "matrix": {
            "type": "object",
            "propertyNames": {"pattern": "^-?[0-9]+,-?[0-9]+$"},
            "additionalProperties": _flat18,
            "minProperties": 1,
        },
    },
    "additionalProperties": False,
}
SOURCE_FILE_SCHEMA = {
    "oneOf": [
        SOURCE_SCHEMA,
        {"type": "array", "items": SOURCE_SCHEMA},
        {"type": "object", "required": ["sources"],
         "properties": {"units": _units, "sources": {"type": "array", "items": SOURCE_SCHEMA}},
         "additionalProperties": False},
    ]
}

DISTURBANCE_SCHEMA = {
    "type": "object",
    "required": ["spectrum"],
    "properties": {
        "units": _units,
        "f1_hz": _pos,
        "v_base": _pos,
        "s_base": _pos,
        "h_max": {"type": "integer", "minimum": 1, "maximum": MAX_HMAX},
        "spectrum": {
            "type": "object",
            "propertyNames": {"pattern": "^[0-9]+$"},
            "additionalProperties": _flat6,
        },
    },
    "additionalProperties": False,
}


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else "/"


def _non_finite(doc, path=()):
    if isinstance(doc, float) and not math.isfinite(doc):
        return path
    items = doc.items() if isinstance(doc, dict) else enumerate(doc) if isinstance(doc, list) else ()
    for k, v in items:
        bad = _non_finite(v, path + (k,))
        if bad is not None:
            return bad
    return None


def check_schema(doc, schema, source="document"):
    """Raise :class:`StudyError` with a JSON pointer for the first violation."""
    err = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(schema).iter_errors(doc))
    if err is not None:
        raise StudyError(f"{source}: {err.message}", path=_pointer(err.absolute_path))
    bad = _non_finite(doc)
    if bad is not None:
        raise StudyError(f"{source}: non-finite number", path=_pointer(bad))
    return doc


def _finite(x, source, path):
    # unit conversion can overflow even when the file values are finite
    if not np.all(np.isfinite(x)):
        raise StudyError(f"{source}: value out of range after unit conversion", path=path)
    return x


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise StudyError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise StudyError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


# ---------------------------------------------------------------------------
# bases
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Bases:
    v_base: float = 1.0
    s_base: float = 1.0
    f1: float = 50.0
    si: bool = True

    @property
    def z_base(self):
        return self.v_base**2 / self.s_base if self.si else 1.0

    @property
    def i_base(self):
        return self.s_base / self.v_base if self.si else 1.0

    @property
    def v(self):
        return self.v_base if self.si else 1.0

    @property
    def power_scale(self):
        # three-phase power -> dq reference quantity
        return 2.0 / (3.0 * self.s_base) if self.si else 1.0

    @classmethod
    def of_grid(cls, grid, si=True):
        return cls(grid.v_base, grid.s_base, grid.f1, si)


def _units_si(doc):
    return not (isinstance(doc, dict) and doc.get("units") == "pu")


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------
def _table18(table, scale):
    out = {}
    for h, vals in table.items():
        v = np.asarray(vals, dtype=float)
        out[int(h)] = (v[0::2] + 1j * v[1::2]).reshape(3, 3) * scale
    return out


def grid_from_dict(doc, source="grid"):
    check_schema(doc, GRID_SCHEMA, source)
    si = _units_si(doc)
    vb, sb = float(doc["v_base"]), float(doc["s_base"])
    zb = vb**2 / sb if si else 1.0
    nodes = [Node(n["id"], n["kind"]) for n in doc["nodes"]]
    ids = {n.id for n in nodes}
    branches = []
    for k, b in enumerate(doc["branches"]):
        for end in ("from", "to"):
            if b[end] not in ids:
                raise StudyError(f"{source}: unknown node {b[end]!r}", path=f"/branches/{k}/{end}")
        if b["from"] == b["to"]:
            raise StudyError(f"{source}: branch connects a node to itself", path=f"/branches/{k}")
        bid = b.get("id", f"b{k}")
        if "Z_table" in b:
            table = _table18(b["Z_table"], 1 / zb)
            _finite(list(table.values()), source, f"/branches/{k}/Z_table")
            branches.append(BranchElement(bid, b["from"], b["to"], table=table))
        else:
            R = np.asarray(b["R"], dtype=float).reshape(3, 3) / zb
            L = np.asarray(b["L"], dtype=float).reshape(3, 3) / zb
            _finite([R, L], source, f"/branches/{k}")
            branches.append(BranchElement(bid, b["from"], b["to"], R=R, L=L))
    shunts = []
    for k, s in enumerate(doc.get("shunts", [])):
        if s["node"] not in ids:
            raise StudyError(f"{source}: unknown node {s['node']!r}", path=f"/shunts/{k}/node")
        sid = s.get("id", f"t{k}")
        if "Y_table" in s:
            table = _table18(s["Y_table"], zb)
            _finite(list(table.values()), source, f"/shunts/{k}/Y_table")
            shunts.append(ShuntElement(sid, s["node"], table=table))
        else:
            G = np.asarray(s.get("G", [0.0] * 9), dtype=float).reshape(3, 3) * zb
            C = np.asarray(s.get("C", [0.0] * 9), dtype=float).reshape(3, 3) * zb
            _finite([G, C], source, f"/shunts/{k}")
            shunts.append(ShuntElement(sid, s["node"], G=G, C=C))
    try:
        return GridModel(nodes, branches, shunts, f1=float(doc["f1_hz"]), v_base=vb, s_base=sb)
    except Exception as exc:
        raise StudyError(f"{source}: {exc}") from exc


def _flat_table(table, scale):
    out = {}
    for h in sorted(table):
        M = np.asarray(table[h]) * scale
        out[str(h)] = [float(x) for z in M.reshape(-1) for x in (z.real, z.imag)]
    return out


def grid_to_dict(grid):
    """SI description of ``grid`` (inverse of :func:`grid_from_dict`)."""
    zb = grid.z_base
    doc = {
        "f1_hz": grid.f1, "v_base": grid.v_base, "s_base": grid.s_base,
        "nodes": [{"id": n.id, "kind": n.kind} for n in grid.nodes],
        "branches": [], "shunts": [],
    }
    for b in grid.branches:
        e = {"id": b.id, "from": b.from_node, "to": b.to_node}
        if b.tabulated:
            e["Z_table"] = _flat_table(b.table, zb)
        else:
            e["R"] = (b.R * zb).reshape(-1).tolist()
            e["L"] = (b.L * zb).reshape(-1).tolist()
        doc["branches"].append(e)
    for s in grid.shunts:
        e = {"id": s.id, "node": s.node}
        if s.tabulated:
            e["Y_table"] = _flat_table(s.table, 1 / zb)
        else:
            e["G"] = (s.G / zb).reshape(-1).tolist()
            e["C"] = (s.C / zb).reshape(-1).tolist()
        doc["shunts"].append(e)
    return doc


def load_grid(path):
    return grid_from_dict(read_json(path), source=str(path))


# ---------------------------------------------------------------------------
# resources
# ---------------------------------------------------------------------------
@dataclass
class CiderSpec:
    """Per-unit description of a stage-built CIDER."""

    node: object
    mode: str
    filter_stages: list
    controller_stages: list
    setpoint: dict  # {"V", "f"} or {"P", "Q"} in reference-law units
    transform: str = "park"
    theta0: float = 0.0
    name: str = ""

    def build(self):
        if "V" in self.setpoint:
            ref = VfReference(self.setpoint["V"], self.setpoint["f"])
        else:
            ref = PqReference(self.setpoint["P"], self.setpoint["Q"])
        model = build_cider(
            self.filter_stages, self.controller_stages, ref, node=self.node,
            transform=TransformSpec(self.transform, self.theta0), name=self.name,
        )
        if model.mode != self.mode:
            raise StudyError(
                f"CIDER at {self.node!r} is declared {self.mode} but its filter makes it {model.mode}"
            )
        return model


def _measured_kinds(stages):
    """Quantity ('I' or 'V') of each filter output block, innermost first."""
    kinds = []
    for st in stages:
        kinds.append("I")
        if st.get("C"):
            kinds.append("V")
    return kinds


def _gain_scales(filter_stages, n_ctrl, b):
    """Multipliers turning SI PI gains into per-unit, stage by stage."""
    kinds = _measured_kinds(filter_stages)
    measured = [kinds[len(kinds) - 1 - j] for j in range(min(n_ctrl, len(kinds)))]
    base = {"I": b.i_base, "V": b.v}
    scales = []
    for j, q in enumerate(measured):
        out_q = measured[j + 1] if j + 1 < len(measured) else "V"  # actuator voltage
        scales.append(base[q] / base[out_q])
    scales += [1.0] * (n_ctrl - len(scales))
    return scales


def _scale_gain(g, s):
    return [float(x) * s for x in g] if isinstance(g, list) else float(g) * s


def cider_from_dict(doc, bases, source="cider", path=""):
    check_schema(doc, CIDER_SCHEMA, source)
    zb = bases.z_base
    fstages = []
    for st in doc["filter"]["stages"]:
        e = {"L": st["L"] / zb, "R": st.get("R", 0.0) / zb}
        if st.get("C"):
            e["C"] = st["C"] * zb
        fstages.append(e)
    cst = doc["controller"]["stages"]
    scales = _gain_scales(doc["filter"]["stages"], len(cst), bases)
    cstages = [{"kp": _scale_gain(st["kp"], s), "ki": _scale_gain(st["ki"], s)} for st, s in zip(cst, scales)]
    sp = doc["setpoint"]
    if "V" in sp:
        setpoint = {"V": sp["V"] / bases.v, "f": float(sp["f"])}
    else:
        setpoint = {"P": sp["P"] * bases.power_scale, "Q": sp["Q"] * bases.power_scale}
    spec = CiderSpec(
        node=doc["node"], mode=doc["mode"], filter_stages=fstages, controller_stages=cstages,
        setpoint=setpoint, transform=doc.get("transform", "park"),
        theta0=float(doc.get("theta0", 0.0)), name=doc.get("name", ""),
    )
    try:
        spec.build()
    except StudyError as exc:
        raise StudyError(str(exc), path=path or "/") from exc
    except Exception as exc:
        raise StudyError(f"{source}: {exc}", path=path or "/") from exc
    return spec


def cider_to_dict(spec, bases):
    zb = bases.z_base
    fst = []
    for st in spec.filter_stages:
        e = {"L": st["L"] * zb, "R": st.get("R", 0.0) * zb}
        if st.get("C"):
            e["C"] = st["C"] / zb
        fst.append(e)
    si_filter = [{"C": 1.0} if "C" in st else {} for st in spec.filter_stages]
    scales = _gain_scales(si_filter, len(spec.controller_stages), bases)
    cst = [{"kp": _scale_gain(st["kp"], 1 / s), "ki": _scale_gain(st["ki"], 1 / s)}
           for st, s in zip(spec.controller_stages, scales)]
    sp = spec.setpoint
    if "V" in sp:
        setpoint = {"V": sp["V"] * bases.v, "f": sp["f"]}
    else:
        setpoint = {"P": sp["P"] / bases.power_scale, "Q": sp["Q"] / bases.power_scale}
    doc = {
        "node": spec.node, "mode": spec.mode,
        "filter": {"stages": fst}, "controller": {"stages": cst},
        "transform": spec.transform, "theta0": spec.theta0, "setpoint": setpoint,
    }
    if spec.name:
        doc["name"] = spec.name
    return doc


def _entries(doc, key):
    if isinstance(doc, list):
        return doc, ""
    if isinstance(doc, dict) and key in doc:
        return doc[key], f"/{key}"
    return [doc], None


def ciders_from_document(doc, bases, source="ciders"):
    check_schema(doc, CIDER_FILE_SCHEMA, source)
    if isinstance(doc, dict) and doc.get("units") == "pu":
        bases = Bases(bases.v_base, bases.s_base, bases.f1, si=False)
    items, prefix = _entries(doc, "ciders")
    out = []
    for k, d in enumerate(items):
        path = "/" if prefix is None else f"{prefix}/{k}"
        out.append(cider_from_dict(d, bases, source, path=path))
    return out


def load_ciders(path, bases):
    return ciders_from_document(read_json(path), bases, source=str(path))


def _spectrum6(spec, scale):
    out = {}
    for h, vals in spec.items():
        v = np.asarray(vals, dtype=float)
        out[int(h)] = (v[0::2] + 1j * v[1::2]) * scale
    return out


def source_from_dict(doc, bases, source="source", path="/"):
    check_schema(doc, SOURCE_SCHEMA, source)
    at = path.rstrip("/")
    if doc["kind"] == "thevenin":
        s_sig, s_mat = 1 / bases.v, 1 / bases.z_base
    else:
        s_sig, s_mat = 1 / bases.i_base, bases.z_base
    with np.errstate(over="ignore", invalid="ignore"):
        spectrum = _spectrum6(doc["spectrum"], s_sig)
        matrix = {}
        for key, vals in doc["matrix"].items():
            hr, hc = (int(x) for x in key.split(","))
            v = np.asarray(vals, dtype=float)
            matrix[(hr, hc)] = (v[0::2] + 1j * v[1::2]).reshape(3, 3) * s_mat
    _finite(list(spectrum.values()) or [0.0], source, f"{at}/spectrum")
    _finite(list(matrix.values()), source, f"{at}/matrix")
    if 0 in spectrum and np.any(np.abs(spectrum[0].imag) > 0):
        raise StudyError(f"{source}: DC spectrum entry must be real", path=f"{at}/spectrum/0")
    return EquivalentSpec(doc["kind"], doc["node"], spectrum, matrix)


def source_to_dict(spec, bases):
    if spec.kind == "thevenin":
        s_sig, s_mat = bases.v, bases.z_base
    else:
        s_sig, s_mat = bases.i_base, 1 / bases.z_base
    return {
        "node": spec.node,
        "kind": spec.kind,
        "spectrum": {str(h): [float(x) for z in np.asarray(v) * s_sig for x in (z.real, z.imag)]
                     for h, v in sorted(spec.spectrum.items())},
        "matrix": {f"{hr},{hc}": [float(x) for z in (np.asarray(M) * s_mat).reshape(-1) for x in (z.real, z.imag)]
                   for (hr, hc), M in sorted(spec.matrix.items())},
    }


def sources_from_document(doc, bases, source="sources"):
    check_schema(doc, SOURCE_FILE_SCHEMA, source)
    if isinstance(doc, dict) and doc.get("units") == "pu":
        bases = Bases(bases.v_base, bases.s_base, bases.f1, si=False)
    items, prefix = _entries(doc, "sources")
    return [source_from_dict(d, bases, source, path="/" if prefix is None else f"{prefix}/{k}")
            for k, d in enumerate(items)]


def load_sources(path, bases):
    return sources_from_document(read_json(path), bases, source=str(path))


@dataclass
class DisturbanceSpec:
    """Grid-side disturbance for a single-resource oracle run."""

    bases: Bases
    h_max: int
    spectrum: dict  # {h: 3 complex}, in file units

    def signal(self, quantity):
        """Per-unit :class:`HarmonicSignal`; ``quantity`` is 'V' or 'I'."""
        H = HarmonicIndexSet(self.h_max, self.bases.f1)
        scale = 1 / (self.bases.v if quantity == "V" else self.bases.i_base)
        return HarmonicSignal.from_dict(H, 3, {h: v * scale for h, v in self.spectrum.items()})


def disturbance_from_dict(doc, source="disturbance"):
    check_schema(doc, DISTURBANCE_SCHEMA, source)
    bases = Bases(
        float(doc.get("v_base", 1.0)), float(doc.get("s_base", 1.0)),
        float(doc.get("f1_hz", 50.0)), si=_units_si(doc),
    )
    spectrum = _spectrum6(doc["spectrum"], 1.0)
    top = max(spectrum, default=1)
    h_max = int(doc.get("h_max", max(top, 1)))
    if top > h_max:
        raise StudyError(f"{source}: spectrum has orders above h_max={h_max}", path="/spectrum")
    if 0 in spectrum and np.any(spectrum[0].imag != 0):
        raise StudyError(f"{source}: DC spectrum entry must be real", path="/spectrum/0")
    return DisturbanceSpec(bases, h_max, spectrum)


def load_disturbance(path):
    return disturbance_from_dict(read_json(path), source=str(path))


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------
@dataclass
class StudyConfig:
    grid: str
    ciders: str
    sources: Optional[str] = None
    h_max: int = 25
    tol: float = 1e-8
    max_iter: int = 50
    out: Optional[str] = None
    log: Optional[str] = None
    per_unit: bool = False  # treat every file as per-unit regardless of its "units" key

    def __post_init__(self):
        if not (isinstance(self.h_max, (int, np.integer)) and 1 <= self.h_max <= MAX_HMAX):
            raise StudyError(f"h_max must be an integer in [1, {MAX_HMAX}], got {self.h_max!r}")
        if not self.tol > 0:
            raise StudyError(f"tol must be positive, got {self.tol!r}")
        if not (isinstance(self.max_iter, (int, np.integer)) and self.max_iter >= 0):
            raise StudyError(f"max_iter must be a non-negative integer, got {self.max_iter!r}")


@dataclass
class Study:
    grid: GridModel
    ciders: list
    sources: list = field(default_factory=list)

    def resources(self):
        return [c.build() for c in self.ciders] + list(self.sources)


def read_study(config):
    """Parse and convert the files of ``config`` (no compilation)."""
    gdoc = read_json(config.grid)
    if config.per_unit and isinstance(gdoc, dict):
        gdoc = dict(gdoc, units="pu")
    grid = grid_from_dict(gdoc, source=str(config.grid))
    # resource files carry their own unit flag
    bases = Bases.of_grid(grid, si=not config.per_unit)
    ciders = load_ciders(config.ciders, bases)
    sources = load_sources(config.sources, bases) if config.sources else []
    return Study(grid, ciders, sources)


def load_study(config):
    """``StudyConfig`` -> validated, compiled :class:`~hpflow.solver.HpfProblem`."""
    from .solver import HpfProblem

    study = read_study(config)
    require_valid(study.grid, config.h_max)
    H = HarmonicIndexSet(config.h_max, study.grid.f1)
    return HpfProblem(study.grid, study.resources(), H, validate=False)


def dump_study(study, directory):
    """Write ``grid.json``, ``ciders.json`` and (if any) ``sources.json`` in SI."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    bases = Bases.of_grid(study.grid)
    paths = {"grid": d / "grid.json", "ciders": d / "ciders.json"}
    _write_json(paths["grid"], grid_to_dict(study.grid))
    _write_json(paths["ciders"], {"ciders": [cider_to_dict(c, bases) for c in study.ciders]})
    if study.sources:
        paths["sources"] = d / "sources.json"
        _write_json(paths["sources"], {"sources": [source_to_dict(s, bases) for s in study.sources]})
    return paths


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------
REPORT_HEADER = (
    "# per-unit spectra; h >= 0 only (X[-h] = conj(X[h])); "
    "magnitude = 2|X[h]| for h > 0 and |X[0]| for h = 0 (peak of the real signal); "
    "angle = arg X[h] in rad"
)
REPORT_COLUMNS = ["node", "phase", "quantity", "h", "magnitude", "angle"]
PHASE_NAMES = "ABC"


def spectrum_rows(spectra):
    """Rows of a spectrum report in deterministic order."""
    H = spectra.H
    rows = []
    for k, nid in enumerate(spectra.node_ids):
        for ph in range(3):
            for qname, arr in (("V", spectra.V), ("I", spectra.I)):
                for h in range(H.h_max + 1):
                    x = arr[H.index(h), 3 * k + ph]
                    if h == 0:
                        x = complex(x.real, 0.0)
                    mag = abs(x) * (2.0 if h > 0 else 1.0)
                    ang = math.atan2(x.imag, x.real) if mag > 0 else 0.0
                    rows.append((nid, PHASE_NAMES[ph], qname, h, mag, ang))
    return rows


def _fmt(x):
    s = f"{x:.12g}"
    return "0" if s == "-0" else s


def write_report(path, spectra):
    with open(path, "w", newline="") as fh:
        fh.write(REPORT_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for nid, ph, q, h, mag, ang in spectrum_rows(spectra):
            w.writerow([nid, ph, q, h, _fmt(mag), _fmt(ang)])


def read_report(path):
    """``{(node, phase, quantity, h): (magnitude, angle)}``; node ids as strings."""
    out = {}
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    for r in reader:
        out[(r["node"], r["phase"], r["quantity"], int(r["h"]))] = (float(r["magnitude"]), float(r["angle"]))
    return out


def emit_report(solution, problem, csv_path=None, log_path=None):
    """Write the spectrum CSV and the JSON-lines convergence log."""
    from .solver import recover_outputs

    spectra = recover_outputs(problem, solution)
    if csv_path:
        write_report(csv_path, spectra)
    if log_path:
        solution.write_log(log_path)
    return spectra


def dump_signal_dict(sig, scale=1.0):
    """``{"h": [re, im] x 3}`` for ``h >= 0``, the spectrum JSON layout."""
    out = {}
    for h in range(sig.H.h_max + 1):
        v = sig[h] * scale
        if np.any(v):
            out[str(h)] = [float(x) for z in v for x in (z.real, z.imag)]
    return out


def signal_from_spectrum(H, spectrum, scale=1.0):
    return HarmonicSignal.from_dict(H, 3, _spectrum6(spectrum, scale))
