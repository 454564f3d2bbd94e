"""File IO: point clouds (XYZ text, PLY), feature tables (CSV), run config (JSON).

The feature table is the interchange format between pipeline stages: one row
per point holding the point index, the 21 canonical features, OptN, and
optionally the C2C distance, label, fold id, and grid cell of the point.
Reals are rendered with 9 significant digits, so a write/read round trip is
exact to ~1e-7 relative.
"""

import copy
import io
import json
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PointCloud
from .features import FEATURE_NAMES

XYZ_ASCII = "xyz_ascii"
PLY_ASCII = "ply_ascii"
PLY_BINARY_LE = "ply_binary_le"

_PLY_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4, "float": 4, "float32": 4,
    "double": 8, "float64": 8,
}
_PLY_FLOAT_FMT = {"float": "f", "float32": "f", "double": "d", "float64": "d"}


def detect_format(path):
    """Pick a cloud format from the extension (and PLY header magic)."""
    lower = str(path).lower()
    if lower.endswith(".ply"):
        with open(path, "rb") as fh:
            magic = fh.read(3)
            if magic != b"ply":
                raise ValueError(f"{path}: not a PLY file (missing 'ply' magic)")
            header = magic + fh.read(4096)
        if b"format ascii" in header:
            return PLY_ASCII
        if b"format binary_little_endian" in header:
            return PLY_BINARY_LE
        raise ValueError(f"{path}: unsupported PLY format declaration")
    return XYZ_ASCII


def _read_xyz(path):
    with open(path, "r") as fh:
        lines = fh.readlines()
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ValueError(f"{path}: line {lineno}: expected 3 values, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric coordinate") from None
    return PointCloud(np.asarray(rows, dtype=np.float64).reshape(-1, 3))


def _parse_ply_header(fh, path):
    """Read the header; returns (fmt, vertex_count, vertex_properties, data_offset)."""
    line = fh.readline()
    if line.strip() != b"ply":
        raise ValueError(f"{path}: not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []  # (name, count, [(type, prop_name), ...])
    lineno = 1
    while True:
        raw = fh.readline()
        if not raw:
            raise ValueError(f"{path}: line {lineno}: unexpected end of header")
        lineno += 1
        tokens = raw.decode("ascii", "replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] == "ascii":
                fmt = PLY_ASCII
            elif tokens[1] == "binary_little_endian":
                fmt = PLY_BINARY_LE
            else:
                raise ValueError(f"{path}: unsupported PLY format '{tokens[1]}'")
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ValueError(f"{path}: line {lineno}: property before any element")
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[-1]))
            else:
                elements[-1][2].append((tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            break
    if fmt is None:
        raise ValueError(f"{path}: PLY header missing format line")
    if not elements or elements[0][0] != "vertex":
        raise ValueError(f"{path}: PLY vertex element must come first")
    return fmt, elements[0][1], elements[0][2]


def _read_ply(path):
    with open(path, "rb") as fh:
        fmt, count, props = _parse_ply_header(fh, path)
        names = [p[1] for p in props]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise ValueError(f"{path}: PLY vertex element lacks property '{axis}'")
        for ptype, pname in props:
            if pname in ("x", "y", "z") and ptype not in _PLY_FLOAT_FMT:
                raise ValueError(f"{path}: unsupported type '{ptype}' for property '{pname}'")
            if ptype == "list":
                raise ValueError(f"{path}: unsupported list property '{pname}' in vertex element")
            if ptype not in _PLY_SIZES:
                raise ValueError(f"{path}: unsupported type '{ptype}' for property '{pname}'")
        if names.count("x") + names.count("y") + names.count("z") != 3:
            raise ValueError(f"{path}: duplicated coordinate property in vertex element")
        extras = [n for n in names if n not in ("x", "y", "z")]
        if extras:
            print(f"warning: {path}: skipping vertex properties {extras}", file=sys.stderr)

        if fmt == PLY_ASCII:
            xyz = np.empty((count, 3), dtype=np.float64)
            ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
            for i in range(count):
                raw = fh.readline()
                if not raw:
                    raise ValueError(f"{path}: vertex {i + 1}: unexpected end of file")
                parts = raw.split()
                if len(parts) != len(props):
                    raise ValueError(
                        f"{path}: vertex {i + 1}: expected {len(props)} values, got {len(parts)}")
                xyz[i, 0] = float(parts[ix])
                xyz[i, 1] = float(parts[iy])
                xyz[i, 2] = float(parts[iz])
            return PointCloud(xyz)

        # binary little-endian: build a record dtype over the vertex layout;
        # non-coordinate properties become opaque bytes of the right size
        np_fields = []
        for j, (ptype, pname) in enumerate(props):
            if pname in ("x", "y", "z"):
                np_fields.append((f"p{j}", "<f4" if _PLY_FLOAT_FMT[ptype] == "f" else "<f8"))
            else:
                np_fields.append((f"p{j}", f"V{_PLY_SIZES[ptype]}"))
        rec = np.dtype(np_fields)
        buf = fh.read(rec.itemsize * count)
        if len(buf) != rec.itemsize * count:
            raise ValueError(f"{path}: truncated PLY vertex data")
        data = np.frombuffer(buf, dtype=rec, count=count)
        xyz = np.empty((count, 3), dtype=np.float64)
        xyz[:, 0] = data[f"p{names.index('x')}"].astype(np.float64)
        xyz[:, 1] = data[f"p{names.index('y')}"].astype(np.float64)
        xyz[:, 2] = data[f"p{names.index('z')}"].astype(np.float64)
        return PointCloud(xyz)


def read_cloud(path, fmt=None):
    """Read a point cloud; format auto-detected unless given explicitly."""
    if fmt is None:
        fmt = detect_format(path)
    if fmt == XYZ_ASCII:
        return _read_xyz(path)
    if fmt in (PLY_ASCII, PLY_BINARY_LE):
        return _read_ply(path)
    raise ValueError(f"unknown cloud format '{fmt}'")


def write_cloud(cloud, path, fmt=None):
    """Write a point cloud; PLY_BINARY_LE round-trips float64 bitwise."""
    if fmt is None:
        fmt = detect_format_for_write(path)
    xyz = cloud.xyz
    if fmt == XYZ_ASCII:
        with open(path, "w") as fh:
            for x, y, z in xyz:
                fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        return
    header = [
        "ply",
        "format ascii 1.0" if fmt == PLY_ASCII else "format binary_little_endian 1.0",
        f"element vertex {xyz.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    if fmt == PLY_ASCII:
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            for x, y, z in xyz:
                fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
    elif fmt == PLY_BINARY_LE:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(np.ascontiguousarray(xyz, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown cloud format '{fmt}'")


def detect_format_for_write(path):
    lower = str(path).lower()
    if lower.endswith(".ply"):
        return PLY_BINARY_LE
    return XYZ_ASCII


# ---------------------------------------------------------------------------
# feature table

_INT_OPTIONAL = ("label", "fold", "cell_row", "cell_col")
OPTIONAL_COLUMNS = ("c2c", "label", "fold", "cell_row", "cell_col")


@dataclass
class FeatureTable:
    """Column store for per-point features and labels (row = point)."""

    point_index: np.ndarray
    features: np.ndarray               # (n, 21) in canonical order
    optn: np.ndarray
    c2c: Optional[np.ndarray] = None
    label: Optional[np.ndarray] = None
    fold: Optional[np.ndarray] = None
    cell_row: Optional[np.ndarray] = None
    cell_col: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.point_index.shape[0]
        if self.features.shape != (n, len(FEATURE_NAMES)):
            raise ValueError(
                f"features must be (n, {len(FEATURE_NAMES)}), got {self.features.shape}")
        if self.optn.shape != (n,):
            raise ValueError("optn must be one value per row")
        for name in OPTIONAL_COLUMNS:
            col = getattr(self, name)
            if col is not None and col.shape != (n,):
                raise ValueError(f"column '{name}' must have one value per row")

    @property
    def n(self):
        return self.point_index.shape[0]

    def columns(self):
        cols = ["point_index"] + list(FEATURE_NAMES) + ["optn"]
        cols += [name for name in OPTIONAL_COLUMNS if getattr(self, name) is not None]
        return cols


def write_feature_table(table, path):
    """CSV with a mandatory header; reals with 9 significant digits."""
    cols = table.columns()
    parts = [table.point_index.reshape(-1, 1).astype(np.float64),
             table.features,
             table.optn.reshape(-1, 1).astype(np.float64)]
    fmts = ["%d"] + ["%.9g"] * len(FEATURE_NAMES) + ["%d"]
    for name in OPTIONAL_COLUMNS:
        col = getattr(table, name)
        if col is None:
            continue
        parts.append(col.reshape(-1, 1).astype(np.float64))
        fmts.append("%d" if name in _INT_OPTIONAL else "%.9g")
    data = np.hstack(parts)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        if data.shape[0]:
            np.savetxt(fh, data, fmt=fmts, delimiter=",")


def read_feature_table(path):
    """Inverse of write_feature_table (values exact to rendering precision)."""
    with open(path, "r") as fh:
        header_line = fh.readline()
        body = fh.read()
    if not header_line:
        raise ValueError(f"{path}: empty file")
    cols = [c.strip() for c in header_line.rstrip("\n").split(",")]
    expected_fixed = ["point_index"] + list(FEATURE_NAMES) + ["optn"]
    if cols[: len(expected_fixed)] != expected_fixed:
        for got, want in zip(cols, expected_fixed):
            if got != want:
                raise ValueError(
                    f"{path}: unknown or misplaced column '{got}' (expected '{want}')")
        raise ValueError(f"{path}: header too short; expected at least {expected_fixed}")
    tail = cols[len(expected_fixed):]
    allowed = [c for c in OPTIONAL_COLUMNS]
    for got in tail:
        if got not in allowed:
            raise ValueError(f"{path}: unknown column '{got}'")
    if tail != [c for c in OPTIONAL_COLUMNS if c in tail]:
        raise ValueError(f"{path}: optional columns out of canonical order: {tail}")

    lines = body.splitlines()
    arity = len(cols)
    for lineno, line in enumerate(lines, start=2):
        if line and line.count(",") != arity - 1:
            raise ValueError(
                f"{path}: line {lineno}: expected {arity} values, got {line.count(',') + 1}")
    if any(line for line in lines):
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    else:
        data = np.zeros((0, arity))

    table = FeatureTable(
        point_index=data[:, 0].astype(np.int64),
        features=np.ascontiguousarray(data[:, 1: 1 + len(FEATURE_NAMES)]),
        optn=data[:, 1 + len(FEATURE_NAMES)].astype(np.int64),
    )
    for offset, name in enumerate(tail):
        col = data[:, len(expected_fixed) + offset]
        setattr(table, name, col.astype(np.int64) if name in _INT_OPTIONAL else col)
    return table


# ---------------------------------------------------------------------------
# run configuration

def default_config():
    """Complete run configuration with every documented default."""
    from dataclasses import asdict

    from .synth import default_error_model, default_scene

    # tuples become lists so the section round-trips through JSON unchanged
    scene = json.loads(json.dumps(asdict(default_scene())))
    scene.pop("seed")  # scene randomness flows from the root seed
    error = json.loads(json.dumps(asdict(default_error_model())))
    return {
        "labeling": {"cutoff": 0.100, "threshold": 0.020},
        "synth": {**scene, "error": error},
        "features": {"k_min": 10, "k_max": 100, "k_step": 1,
                     "bin_size": 0.25, "leaf_size": 32},
        "folds": {"cell_size": 5.0, "n_folds": 5},
        "rf": {"n_estimators": 100, "max_depth": 20, "max_samples": 0.5,
               "min_samples_leaf": 1, "class_weight": "balanced", "n_jobs": 1,
               "subsample_cap_rows": 1000000, "subsample_cap_fraction": 0.3},
        "gbt": {"num_boost_round": 1000, "eta": 0.05, "max_depth": 8,
                "subsample": 0.8, "colsample_bytree": 0.8,
                "early_stopping_rounds": 50, "n_bins": 256, "lambda": 1.0,
                "min_child_weight": 1.0, "gamma": 0.0,
                "validation_fraction": 0.1},
        "eval": {"threshold": 0.5, "top_k": 20, "confidence": 0.95},
        "seed": 0,
    }


def merge_config(base, override, path=""):
    """Recursively merge override into base; unknown keys are errors."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ValueError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValueError(f"config key '{where}' must be a section")
            merged[key] = merge_config(base[key], value, where)
        else:
            merged[key] = value
    return merged


def load_config(path=None):
    """Defaults, overlaid with the JSON document at path when given."""
    config = default_config()
    if path is None:
        return config
    with open(path, "r") as fh:
        user = json.load(fh)
    if not isinstance(user, dict):
        raise ValueError(f"{path}: config root must be a JSON object")
    return merge_config(config, user)


def save_config(config, path):
    with open(path, "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
