"""Run configuration: a versioned TOML schema, validation and object construction.

A configuration file looks like::

    schema_version = 1
    seed = 7

    [model]
    name = "octagon"          # octagon | flat_torus | conformal_torus | poincare_disk
    dim = 2

    [field]
    kind = "collar"           # none | gradient | collar | closed | form | shipped-gradient | shipped-nongradient
    scale = 0.2
    period = 0.5
    width = 0.6

    [integrator]
    step = 0.02
    members = 32

    [estimator]
    T = 1000.0

Unknown keys and wrong types are schema violations.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fields import (BumpForm, BumpPotential, ConstantForm, FieldConfig, FourierPotential, GradientTerm,
                     HolomorphicSection, LorentzForce, SinusoidalForm, closed_nonexact_form, collar_form,
                     field_from_form, field_from_potential, lambda_from_section)
from .geometry import FourierTerm, conformal_torus, flat_torus, octagon_surface, poincare_disk

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """A configuration value violates the schema; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_NUM = (int, float)

# section -> key -> (accepted types, default)
SCHEMA = {
    "": {"schema_version": (int, SCHEMA_VERSION), "seed": (int, 0), "threads": (int, 1),
         "out": (str, None)},
    "model": {"name": (str, "octagon"), "dim": (int, 2), "terms": (list, None)},
    "field": {"kind": (str, "none"), "scale": (_NUM, 1.0), "potential": (dict, None), "period": (_NUM, 1.0),
              "width": (_NUM, 0.5), "generator": (int, 0), "periods": (list, None), "forms": (list, None),
              "magnetic": (_NUM, 0.0), "section_k": (int, 0), "section_scale": (_NUM, 1.0)},
    "integrator": {"step": (_NUM, 0.02), "burn_in": (_NUM, 20.0), "members": (int, 32),
                   "chunk_size": (int, 16)},
    # None means "the command's own default" (scenarios have their own run lengths)
    "estimator": {"T": (_NUM, None), "T_variance": (_NUM, None), "max_lag": (_NUM, 20.0),
                  "sample_dt": (_NUM, 0.1), "qr_dt": (_NUM, 1.0), "s": (_NUM, None), "s_grid": (list, None),
                  "s_max": (_NUM, None), "n_s": (int, None), "degree": (int, 2), "tol": (_NUM, 1e-2),
                  "intensities": (list, None)},
    "simulate": {"T": (_NUM, 10.0), "step": (_NUM, 1e-3), "stride": (int, 10)},
    "criteria": {"tags": (list, ["k", "Kw", "k1"]), "n_points": (int, 1000), "n_planes": (int, 8)},
    "identities": {"n_points": (int, 20), "steps": (list, [1e-2, 5e-3]), "resolutions": (list, None),
                   "quadrature": (bool, True)},
}

MODELS = ("octagon", "flat_torus", "conformal_torus", "poincare_disk")
FIELD_KINDS = ("none", "gradient", "collar", "closed", "form", "shipped-gradient", "shipped-nongradient")


def _check_type(path, value, types):
    if types is _NUM or types == _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    elif types is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, types)
    if not ok:
        name = "number" if types == _NUM else getattr(types, "__name__", str(types))
        raise SchemaError(path, f"expected {name}, got {type(value).__name__}")


def validate(raw: dict) -> dict:
    """Fill defaults and check every key; returns a normalized nested dict."""
    if not isinstance(raw, dict):
        raise SchemaError("<root>", "configuration must be a table")
    out = {}
    for key, value in raw.items():
        if key in SCHEMA and key != "":
            if not isinstance(value, dict):
                raise SchemaError(key, "expected a table")
            continue
        if key not in SCHEMA[""]:
            raise SchemaError(key, "unknown key")
    for key, (types, default) in SCHEMA[""].items():
        v = raw.get(key, default)
        if v is not None:
            _check_type(key, v, types)
        out[key] = v
    if out["schema_version"] != SCHEMA_VERSION:
        raise SchemaError("schema_version", f"unsupported version {out['schema_version']} (expected {SCHEMA_VERSION})")
    for section, keys in SCHEMA.items():
        if section == "":
            continue
        given = raw.get(section, {})
        for k in given:
            if k not in keys:
                raise SchemaError(f"{section}.{k}", "unknown key")
        sec = {}
        for k, (types, default) in keys.items():
            v = given.get(k, default)
            if v is not None:
                _check_type(f"{section}.{k}", v, types)
            sec[k] = v
        out[section] = sec
    if out["model"]["name"] not in MODELS:
        raise SchemaError("model.name", f"expected one of {', '.join(MODELS)}")
    if out["field"]["kind"] not in FIELD_KINDS:
        raise SchemaError("field.kind", f"expected one of {', '.join(FIELD_KINDS)}")
    if out["model"]["dim"] not in (2, 3):
        raise SchemaError("model.dim", "dimension must be 2 or 3")
    if out["model"]["name"] in ("octagon", "poincare_disk") and out["model"]["dim"] != 2:
        raise SchemaError("model.dim", f"{out['model']['name']} is a surface")
    for path, v in (("integrator.step", out["integrator"]["step"]), ("estimator.T", out["estimator"]["T"]),
                    ("integrator.members", out["integrator"]["members"]), ("threads", out["threads"]),
                    ("estimator.max_lag", out["estimator"]["max_lag"]),
                    ("estimator.sample_dt", out["estimator"]["sample_dt"]), ("simulate.T", out["simulate"]["T"]),
                    ("simulate.step", out["simulate"]["step"]), ("criteria.n_points", out["criteria"]["n_points"]),
                    ("criteria.n_planes", out["criteria"]["n_planes"])):
        if v is not None and not v > 0:
            raise SchemaError(path, "must be positive")
    if not abs(out["field"]["magnetic"]) < 1:
        raise SchemaError("field.magnetic", "intensity must satisfy |b| < 1")
    return out


def load(path: str | Path | None, overrides: dict | None = None) -> dict:
    """Read and validate a TOML file (or the defaults when ``path`` is None)."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError("<file>", f"invalid TOML: {exc}") from None
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return validate(raw)


def hashed_view(cfg: dict) -> dict:
    """The part of the configuration that determines results (thread count and output path excluded)."""
    return {k: v for k, v in cfg.items() if k not in ("threads", "out")}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(hashed_view(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# construction


def build_model(cfg: dict):
    spec = cfg["model"]
    name, dim = spec["name"], spec["dim"]
    if name == "octagon":
        return octagon_surface()
    if name == "poincare_disk":
        return poincare_disk()
    if name == "flat_torus":
        return flat_torus(dim)
    terms = None
    if spec["terms"]:
        terms = []
        for i, t in enumerate(spec["terms"]):
            try:
                terms.append(FourierTerm(float(t["amplitude"]), tuple(t["wavevector"]), float(t.get("phase", 0.0))))
            except (KeyError, TypeError) as exc:
                raise SchemaError(f"model.terms[{i}]", f"bad Fourier term ({exc})") from None
    return conformal_torus(dim, terms)


def _potential(spec: dict, path: str):
    kind = spec.get("type")
    try:
        if kind == "bump":
            return BumpPotential(float(spec["amplitude"]), float(spec["radius"]), tuple(spec.get("center", (0.0, 0.0))))
        if kind == "fourier":
            return FourierPotential(float(spec["amplitude"]), tuple(spec["wavevector"]), float(spec.get("phase", 0.0)))
    except KeyError as exc:
        raise SchemaError(path, f"missing key {exc}") from None
    raise SchemaError(f"{path}.type", "expected 'bump' or 'fourier'")


def _form_term(spec: dict, path: str):
    kind = spec.get("type")
    try:
        if kind == "sinusoidal":
            return SinusoidalForm(tuple(spec["amplitudes"]), tuple(spec["wavevector"]), float(spec.get("phase", 0.0)))
        if kind == "bump":
            return BumpForm(tuple(spec["amplitudes"]), float(spec["radius"]), tuple(spec.get("center", (0.0, 0.0))))
        if kind == "constant":
            return ConstantForm(tuple(spec["coefficients"]))
        if kind == "gradient":
            return GradientTerm(_potential(spec["potential"], f"{path}.potential"))
    except KeyError as exc:
        raise SchemaError(path, f"missing key {exc}") from None
    raise SchemaError(f"{path}.type", "expected sinusoidal, bump, constant or gradient")


def build_external(cfg: dict, m):
    """The unscaled external field described by ``[field]`` (None for ``kind = none``)."""
    from .scenarios import shipped_gradient_field, shipped_nongradient_field

    spec = cfg["field"]
    kind = spec["kind"]
    if kind == "none":
        return None
    if kind == "shipped-gradient":
        return shipped_gradient_field(m)
    if kind == "shipped-nongradient":
        return shipped_nongradient_field(m)
    if kind == "gradient":
        if not spec["potential"]:
            raise SchemaError("field.potential", "required for a gradient field")
        return field_from_potential(m, _potential(spec["potential"], "field.potential"))
    if kind == "collar":
        return collar_form(m, spec["period"], spec["width"], spec["generator"])
    if kind == "closed":
        if not spec["periods"]:
            raise SchemaError("field.periods", "required for a closed form")
        return closed_nonexact_form(m, spec["periods"])
    if not spec["forms"]:
        raise SchemaError("field.forms", "required for kind = 'form'")
    return field_from_form(m, [_form_term(t, f"field.forms[{i}]") for i, t in enumerate(spec["forms"])])


def build_field_config(cfg: dict, m) -> FieldConfig:
    spec = cfg["field"]
    E = build_external(cfg, m)
    lorentz = LorentzForce(m, spec["magnetic"]) if spec["magnetic"] else None
    lam = None
    if spec["section_k"]:
        lam = lambda_from_section(HolomorphicSection(m, spec["section_k"])).scaled(spec["section_scale"])
    return FieldConfig(external=E, scale=spec["scale"], lorentz=lorentz, generalized=lam)


@dataclass
class Built:
    model: object
    fields: FieldConfig


def build(cfg: dict) -> Built:
    """Model and forcing described by a validated configuration."""
    from .geometry import GeometryError

    try:
        m = build_model(cfg)
        return Built(m, build_field_config(cfg, m))
    except SchemaError:
        raise
    except (GeometryError, ValueError) as exc:
        raise SchemaError("field", str(exc)) from None
