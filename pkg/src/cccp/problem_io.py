"""JSON encoding of problems, ambiguity specs and moment triples.

Complex scalars are ``[re, im]`` pairs and matrices row-major nested arrays.
:func:`dumps` writes a canonical layout (shortest round-trip floats, fixed key
order, one matrix row per line), so ``save_problem(load_problem(f))``
reproduces a file written by :func:`save_problem` byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import ces
from .complex_core import ConstraintRow, MomentError, MomentTriple, validate_moment_triple
from .estimation import estimate, load_samples
from .reform import (
    CesKnown,
    CovBounded,
    DataDriven,
    MomentExact,
    MomentsEllipsoid,
    MomentSymmetric,
    NormSupport,
    Problem3CP,
)

FORMAT = "cccp-problem/1"


class SchemaError(ValueError):
    """Malformed input; the message names the file position or field path."""


# --- canonical JSON text --------------------------------------------------------------

def _is_leaf_list(v) -> bool:
    # numbers, or [re, im] pairs
    return isinstance(v, list) and all(
        isinstance(e, (int, float, bool)) or e is None
        or (isinstance(e, list) and all(isinstance(x, (int, float)) for x in e))
        for e in v)


def _emit(v, indent: int, out: list[str]) -> None:
    pad = " " * indent
    if isinstance(v, dict):
        if not v:
            out.append("{}")
            return
        out.append("{\n")
        items = list(v.items())
        for k, (key, val) in enumerate(items):
            out.append(f"{pad}  {json.dumps(key)}: ")
            _emit(val, indent + 2, out)
            out.append(",\n" if k < len(items) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(v, list) and v and not _is_leaf_list(v):
        out.append("[\n")
        for k, val in enumerate(v):
            out.append(pad + "  ")
            _emit(val, indent + 2, out)
            out.append(",\n" if k < len(v) - 1 else "\n")
        out.append(pad + "]")
    else:
        out.append(json.dumps(v, separators=(", ", ": "), allow_nan=False))


def dumps(obj) -> str:
    out: list[str] = []
    _emit(obj, 0, out)
    return "".join(out) + "\n"


def loads(text: str, source: str = "<input>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise SchemaError(f"{source}:{err.lineno}:{err.colno}: invalid JSON: {err.msg}") from None


# --- complex arrays ---------------------------------------------------------------

def encode_complex(a) -> list:
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        return [float(a.real), float(a.imag)]
    return [encode_complex(x) for x in a]


def decode_complex(v, path: str, shape: tuple | None = None) -> np.ndarray:
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected nested arrays of [re, im] pairs") from None
    if arr.ndim < 1 or arr.shape[-1] != 2:
        raise SchemaError(f"{path}: complex entries must be [re, im] pairs")
    z = arr[..., 0] + 1j * arr[..., 1]
    if shape is not None and z.shape != shape:
        raise SchemaError(f"{path}: expected shape {shape}, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise SchemaError(f"{path}: non-finite entry")
    return z


def _real(v, path: str, shape: tuple | None = None) -> np.ndarray:
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected real numbers") from None
    if shape is not None and arr.shape != shape:
        raise SchemaError(f"{path}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{path}: non-finite entry")
    return arr


def _field(d, key: str, path: str, default=...):
    if not isinstance(d, dict):
        raise SchemaError(f"{path}: expected an object")
    if key not in d:
        if default is ...:
            raise SchemaError(f"{path}.{key}: missing field")
        return default
    return d[key]


def _number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}: expected a number")
    return float(v)


def encode_triple(m: MomentTriple) -> dict:
    return {"mean": encode_complex(m.mean), "cov": encode_complex(m.cov), "pcov": encode_complex(m.pcov)}


def decode_triple(v, path: str, n: int | None = None) -> MomentTriple:
    mean = decode_complex(_field(v, "mean", path), f"{path}.mean")
    if mean.ndim != 1 or (n is not None and mean.size != n):
        raise SchemaError(f"{path}.mean: expected a vector of length {n if n is not None else 'n'}")
    k = mean.size
    cov = decode_complex(_field(v, "cov", path), f"{path}.cov", (k, k))
    pcov = decode_complex(_field(v, "pcov", path), f"{path}.pcov", (k, k))
    m = MomentTriple(mean, cov, pcov)
    problem = validate_moment_triple(m)
    if problem:
        raise SchemaError(f"{path}: {problem}")
    return m


# --- problems ----------------------------------------------------------------------

def problem_to_dict(p: Problem3CP) -> dict:
    obj = encode_triple(p.objective) if p.random_objective else encode_complex(p.objective)
    return {
        "format": FORMAT,
        "n": int(p.n),
        "objective": obj,
        "p0": None if p.p0 is None else float(p.p0),
        "levels": [float(v) for v in p.levels],
        "sign_constraints": bool(p.sign_constraints),
        "rows": [{"a": encode_triple(r.a_moments), "b_mean": r.b_mean, "b_var": r.b_var} for r in p.rows],
    }


def problem_from_dict(d, source: str = "problem") -> Problem3CP:
    fmt = _field(d, "format", source, FORMAT)
    if fmt != FORMAT:
        raise SchemaError(f"{source}.format: unsupported format {fmt!r}, expected {FORMAT!r}")
    n = _field(d, "n", source)
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise SchemaError(f"{source}.n: expected a positive integer")
    obj = _field(d, "objective", source)
    if isinstance(obj, dict):
        objective = decode_triple(obj, f"{source}.objective", n)
    else:
        objective = decode_complex(obj, f"{source}.objective", (n,))
    p0 = _field(d, "p0", source, None)
    p0 = None if p0 is None else _number(p0, f"{source}.p0")
    rows_v = _field(d, "rows", source)
    if not isinstance(rows_v, list) or not rows_v:
        raise SchemaError(f"{source}.rows: expected a non-empty list")
    rows = []
    for i, r in enumerate(rows_v):
        path = f"{source}.rows[{i}]"
        a = decode_triple(_field(r, "a", path), f"{path}.a", n)
        b_mean = _number(_field(r, "b_mean", path), f"{path}.b_mean")
        b_var = _number(_field(r, "b_var", path, 0.0), f"{path}.b_var")
        try:
            rows.append(ConstraintRow(a, b_mean, b_var))
        except ValueError as err:
            raise SchemaError(f"{path}: {err}") from None
    levels = _real(_field(d, "levels", source), f"{source}.levels")
    if levels.ndim > 1:
        raise SchemaError(f"{source}.levels: expected a number or a list")
    for k, v in enumerate(np.atleast_1d(levels)):
        if not 0 < v < 1:
            raise SchemaError(f"{source}.levels[{k}]: probability level {v} outside (0, 1)")
    sign = _field(d, "sign_constraints", source, False)
    if not isinstance(sign, bool):
        raise SchemaError(f"{source}.sign_constraints: expected true or false")
    try:
        return Problem3CP(n, objective, rows, levels, p0, sign)
    except (ValueError, MomentError) as err:
        raise SchemaError(f"{source}: {err}") from None


def load_problem(path) -> Problem3CP:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise SchemaError(f"{path}: cannot read: {err.strerror}") from None
    return problem_from_dict(loads(text, str(path)), str(path))


def save_problem(path, p: Problem3CP) -> None:
    Path(path).write_text(dumps(problem_to_dict(p)), encoding="utf-8")


# --- ambiguity specs ---------------------------------------------------------------

_FAMILIES = {
    "gaussian": lambda d, path: ces.Gaussian(),
    "student_t": lambda d, path: ces.StudentT(_number(_field(d, "nu", path), f"{path}.nu")),
    "laplace": lambda d, path: ces.Laplace(),
    "logistic": lambda d, path: ces.Logistic(),
    "cauchy": lambda d, path: ces.Cauchy(),
    "generalized_gaussian": lambda d, path: ces.GeneralizedGaussian(
        _number(_field(d, "s", path), f"{path}.s"), _number(_field(d, "b", path, 1.0), f"{path}.b")),
}


def family_from_dict(d, path: str = "family"):
    if isinstance(d, str):
        d = {"name": d}
    name = _field(d, "name", path)
    try:
        make = _FAMILIES[name]
    except (KeyError, TypeError):
        raise SchemaError(f"{path}.name: unknown family {name!r}; expected one of {sorted(_FAMILIES)}") from None
    try:
        return make(d, path)
    except ValueError as err:
        raise SchemaError(f"{path}: {err}") from None


def family_to_dict(f) -> dict:
    out = {"name": f.name}
    if isinstance(f, ces.StudentT):
        out["nu"] = float(f.nu)
    if isinstance(f, ces.GeneralizedGaussian):
        out.update(s=float(f.s), b=float(f.b))
    return out


def _triples(v, path: str) -> tuple:
    if isinstance(v, dict):
        v = [v]
    if not isinstance(v, list) or not v:
        raise SchemaError(f"{path}: expected a moment triple or a non-empty list of them")
    return tuple(decode_triple(e, f"{path}[{k}]") for k, e in enumerate(v))


def _radii(v, path: str):
    if isinstance(v, list):
        return tuple(_number(x, f"{path}[{k}]") for k, x in enumerate(v))
    return _number(v, path)


def _radii_out(v):
    return [float(x) for x in v] if isinstance(v, tuple) else float(v)


def spec_from_dict(d, path: str = "spec", base: Path | None = None):
    """Ambiguity spec selected by its ``"type"`` tag.

    ``data_driven`` accepts either ``estimates`` with ``r1``/``r2`` (numbers or
    per-row lists) or ``samples`` (file paths, one per row) with ``delta`` and
    optional ``R``; sample files give per-row radii.
    """
    kind = _field(d, "type", path)
    try:
        if kind == "ces":
            return CesKnown(family_from_dict(_field(d, "family", path, "gaussian"), f"{path}.family"))
        if kind == "moment_exact":
            return MomentExact()
        if kind == "moment_symmetric":
            return MomentSymmetric()
        if kind == "cov_bounded":
            Ls = _field(d, "L", path)
            Ls = [Ls] if np.ndim(Ls) == 2 else Ls
            return CovBounded(tuple(_real(L, f"{path}.L[{k}]") for k, L in enumerate(Ls)))
        if kind == "moments_ellipsoid":
            return MomentsEllipsoid(_number(_field(d, "zeta", path), f"{path}.zeta"),
                                    _triples(_field(d, "estimates", path), f"{path}.estimates"))
        if kind == "norm_support":
            return NormSupport(_real(_field(d, "l", path), f"{path}.l"))
        if kind == "data_driven":
            if "samples" in d:
                files = d["samples"] if isinstance(d["samples"], list) else [d["samples"]]
                delta = _number(_field(d, "delta", path, 0.05), f"{path}.delta")
                R = _field(d, "R", path, None)
                ests = []
                for f in files:
                    fp = Path(f) if base is None else base / f
                    ests.append(estimate(load_samples(fp), delta, None if R is None else float(R)))
                return DataDriven(tuple(e.triple for e in ests), tuple(e.r1 for e in ests),
                                  tuple(e.r2 for e in ests))
            return DataDriven(_triples(_field(d, "estimates", path), f"{path}.estimates"),
                              _radii(_field(d, "r1", path, 0.0), f"{path}.r1"),
                              _radii(_field(d, "r2", path, 0.0), f"{path}.r2"))
    except SchemaError:
        raise
    except ValueError as err:
        raise SchemaError(f"{path}: {err}") from None
    raise SchemaError(f"{path}.type: unknown spec type {kind!r}")


def spec_to_dict(spec) -> dict:
    tag = spec.tag
    if tag == "ces":
        return {"type": "ces", "family": family_to_dict(spec.family)}
    if tag in ("moment_exact", "moment_symmetric"):
        return {"type": tag}
    if tag == "cov_bounded":
        return {"type": tag, "L": [np.asarray(L).tolist() for L in spec.L]}
    if tag == "moments_ellipsoid":
        return {"type": tag, "zeta": float(spec.zeta), "estimates": [encode_triple(e) for e in spec.estimates]}
    if tag == "norm_support":
        return {"type": tag, "l": [float(v) for v in spec.l]}
    if tag == "data_driven":
        return {"type": tag, "estimates": [encode_triple(e) for e in spec.estimates],
                "r1": _radii_out(spec.r1), "r2": _radii_out(spec.r2)}
    raise ValueError(f"cannot encode spec {spec!r}")
