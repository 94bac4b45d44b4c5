"""Reading and writing problem files and reports.

Problem files are JSON::

    {
      "schema_version": 1,
      "observations": [
        {"r_tilde": [x, y, z], "b_tilde": [x, y, z],
         "R": [[...6...], ...6 rows...],          # joint covariance of (dr, db), m^2
         "sigma_r": 0.001, "sigma_b": 0.001},     # optional, isotropic path only
        ...
      ],
      "truth": {"attitude": [[...], [...], [...]], "translation": [x, y, z]}   # optional
    }

Floats are written with 17 significant digits so that files round-trip
bit for bit.
"""

import json
import math
from importlib import resources
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ScanFileError
from .model import NoiseModel, ObservationPair, Pose, ProblemInstance

SCHEMA_VERSION = 1

__all__ = ["SCHEMA_VERSION", "ScanFile", "scenario_path", "parse_scan", "load_scan", "scan_to_dict", "dumps", "write_json"]


def scenario_path():
    """Path of the bundled three-landmark scenario file (noise free, with truth)."""
    return str(resources.files("tlspose").joinpath("data", "scenario.json"))


_OBS_REQUIRED = ("r_tilde", "b_tilde", "R")
_OBS_OPTIONAL = ("sigma_r", "sigma_b")


@dataclass
class ScanFile:
    instance: ProblemInstance
    truth: Optional[Pose] = None
    sigmas_r: Optional[list] = None
    sigmas_b: Optional[list] = None


def _number(x, path):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ScanFileError(f"expected a number, got {type(x).__name__}", path)
    return float(x)


def _array(x, shape, path):
    if len(shape) == 1:
        if not isinstance(x, list) or len(x) != shape[0]:
            raise ScanFileError(f"expected a list of {shape[0]} numbers", path)
        return [_number(v, f"{path}[{i}]") for i, v in enumerate(x)]
    if not isinstance(x, list) or len(x) != shape[0]:
        raise ScanFileError(f"expected {shape[0]} rows", path)
    return [_array(row, shape[1:], f"{path}[{i}]") for i, row in enumerate(x)]


def _check_keys(d, required, optional, path):
    if not isinstance(d, dict):
        raise ScanFileError("expected an object", path)
    for k in d:
        if k not in required and k not in optional:
            raise ScanFileError(f"unknown field {k!r}", f"{path}.{k}" if path else k)
    for k in required:
        if k not in d:
            raise ScanFileError(f"missing field {k!r}", f"{path}.{k}" if path else k)


def parse_scan(data, source=""):
    """Build a :class:`ScanFile` from decoded JSON.

    Raises
    ------
    ScanFileError
        On structural problems; the message names the offending field path.
        Numerical validity (SPD, observability) is checked separately by
        :func:`model.validate_instance`.
    """
    try:
        _check_keys(data, ("schema_version", "observations"), ("truth",), "")
        version = data["schema_version"]
        if version != SCHEMA_VERSION:
            raise ScanFileError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})", "schema_version")
        obs_in = data["observations"]
        if not isinstance(obs_in, list):
            raise ScanFileError("expected a list", "observations")
        pairs, sr, sb = [], [], []
        for i, ob in enumerate(obs_in):
            path = f"observations[{i}]"
            _check_keys(ob, _OBS_REQUIRED, _OBS_OPTIONAL, path)
            r = _array(ob["r_tilde"], (3,), f"{path}.r_tilde")
            b = _array(ob["b_tilde"], (3,), f"{path}.b_tilde")
            R = np.array(_array(ob["R"], (6, 6), f"{path}.R"))
            pairs.append(ObservationPair(r, b, NoiseModel.from_matrix(R)))
            sr.append(_number(ob["sigma_r"], f"{path}.sigma_r") if "sigma_r" in ob else None)
            sb.append(_number(ob["sigma_b"], f"{path}.sigma_b") if "sigma_b" in ob else None)
        truth = None
        if "truth" in data:
            t = data["truth"]
            _check_keys(t, ("attitude", "translation"), (), "truth")
            att = np.array(_array(t["attitude"], (3, 3), "truth.attitude"))
            truth = Pose(att, _array(t["translation"], (3,), "truth.translation"))
            if not truth.is_valid():
                raise ScanFileError("not a proper rotation matrix", "truth.attitude")
    except ScanFileError as exc:
        if source and not exc.path.startswith(source):
            exc.path = f"{source}:{exc.path}"
            exc.args = (f"{exc.path}: {exc.message}",)
        raise
    has_sigmas = all(s is not None for s in sr + sb)
    return ScanFile(
        ProblemInstance(tuple(pairs)),
        truth,
        sr if has_sigmas else None,
        sb if has_sigmas else None,
    )


def load_scan(path):
    """Read and parse a problem file; all failures raise :class:`ScanFileError`."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScanFileError(f"cannot read file ({exc.strerror})", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ScanFileError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", str(path)) from None
    return parse_scan(data, str(path))


def scan_to_dict(scan):
    obs = []
    for i, ob in enumerate(scan.instance.observations):
        d = {"r_tilde": ob.r_tilde, "b_tilde": ob.b_tilde, "R": ob.noise.matrix}
        if scan.sigmas_r is not None:
            d["sigma_r"] = scan.sigmas_r[i]
            d["sigma_b"] = scan.sigmas_b[i]
        obs.append(d)
    out = {"schema_version": SCHEMA_VERSION, "observations": obs}
    if scan.truth is not None:
        out["truth"] = {"attitude": scan.truth.attitude, "translation": scan.truth.translation}
    return out


def _fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        # JSON has no literal for these; null keeps the file parseable.
        return "null"
    s = "%.17g" % x
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _is_flat(lst):
    return all(not isinstance(_plain(v), (list, dict)) for v in lst)


def dumps(obj, indent=2, _level=0):
    """JSON text with 17-significant-digit floats; numeric rows stay on one line."""
    obj = _plain(obj)
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if _is_flat(obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    return json.dumps(obj)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
        fh.write("\n")
