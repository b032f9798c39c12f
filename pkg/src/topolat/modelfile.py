"""Model files: a strict TOML schema for models, volumes and drives.

Sections: [model] (d, fiber, chiral, mu), [[hopping]] entries (y, matrix
given as w_real/w_imag row lists, lambda, optional waveform name under
"scale"), [field] (upper-triangular flux entries as multiples of 2 pi),
[disorder] (seed, boundary_seed, per-hopping lambda overrides), [volume]
(sizes, bc), [halfspace] (r plus [[halfspace.term]] boundary hops) and
[loop] (nt, mu and named waveforms driving the scaled hoppings).

Parsing is strict: unknown keys anywhere are rejected, shapes are checked
against d and fiber, and scale names must resolve against [loop.waveform]
one to one.  serialize() emits a normalized document (defaults filled,
fixed key order) so parse -> serialize -> parse is idempotent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import tomli

from .model import (
    BoundaryTerm,
    BulkModel,
    FiniteVolume,
    HalfSpaceModel,
    HoppingSpec,
    MagneticField,
)
from .pump import AdiabaticLoop, Waveform

__all__ = ["ModelFileError", "ModelFileData", "parse", "serialize",
           "load", "save"]

TWO_PI = 2.0 * math.pi

_BC_TOKENS = ("periodic", "open", "halfspace")


class ModelFileError(ValueError):
    """Schema or construction failure while reading a model file."""


@dataclass(frozen=True, eq=False)
class ModelFileData:
    """Everything a model file describes, plus its normalized document."""

    model: BulkModel
    volume: Optional[FiniteVolume]
    halfspace: Optional[HalfSpaceModel]
    loop: Optional[AdiabaticLoop]
    seed: Optional[int]
    boundary_seed: Optional[int]
    raw: dict


# ---------------------------------------------------------------------------
# validation helpers


def _check_keys(table: dict, allowed, where: str):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ModelFileError(f"unknown keys {unknown} in [{where}]")


def _get(table: dict, key: str, kind, where: str, default=_check_keys):
    if key not in table:
        if default is _check_keys:
            raise ModelFileError(f"missing key '{key}' in [{where}]")
        return default
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is not None and not isinstance(val, kind) or isinstance(val, bool) \
            and kind is not bool:
        raise ModelFileError(f"key '{key}' in [{where}] must be {kind.__name__}")
    return val


def _matrix(table: dict, fiber: int, where: str) -> np.ndarray:
    re = _get(table, "w_real", list, where, default=None)
    im = _get(table, "w_imag", list, where, default=None)
    if re is None and im is None:
        raise ModelFileError(f"[{where}] needs w_real and/or w_imag")
    try:
        mat = np.zeros((0, 0)) if re is None else np.asarray(re, dtype=float)
        if im is None:
            mat = mat + 0j
        else:
            imat = np.asarray(im, dtype=float)
            mat = imat * 1j if re is None else mat + 1j * imat
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed matrix rows in [{where}]") from exc
    if mat.shape != (fiber, fiber):
        raise ModelFileError(
            f"matrix in [{where}] must be {fiber} x {fiber}, got {mat.shape}")
    return mat.astype(complex)


def _int_vector(raw, length: int, where: str) -> tuple:
    if not isinstance(raw, list) or len(raw) != length or \
            not all(isinstance(c, int) and not isinstance(c, bool) for c in raw):
        raise ModelFileError(f"'y' in [{where}] must be {length} integers")
    return tuple(raw)


# ---------------------------------------------------------------------------
# parsing


def parse(text: str) -> ModelFileData:
    """Parse and validate a model file document."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ModelFileError(f"not valid TOML: {exc}") from exc
    _check_keys(doc, ("model", "hopping", "field", "disorder", "volume",
                      "halfspace", "loop"), "top level")
    if "model" not in doc:
        raise ModelFileError("missing [model] section")

    sec = doc["model"]
    _check_keys(sec, ("d", "fiber", "chiral", "mu"), "model")
    d = _get(sec, "d", int, "model")
    fiber = _get(sec, "fiber", int, "model")
    chiral = _get(sec, "chiral", bool, "model", default=False)
    mu = _get(sec, "mu", float, "model", default=0.0)
    if d < 1 or fiber < 1:
        raise ModelFileError("d and fiber must be positive")

    field = MagneticField.zero(d)
    field_entries = []
    if "field" in doc:
        _check_keys(doc["field"], ("entries",), "field")
        ent = _get(doc["field"], "entries", list, "field", default=[])
        fluxes = {}
        for k, row in enumerate(ent):
            if not isinstance(row, list) or len(row) != 3:
                raise ModelFileError("field entries must be [i, j, flux/2pi]")
            i, j, x = row
            if not isinstance(i, int) or not isinstance(j, int) or \
                    not 0 <= i < j < d:
                raise ModelFileError(f"field entry {k} needs 0 <= i < j < d")
            if (i, j) in fluxes:
                raise ModelFileError(f"duplicate field entry ({i}, {j})")
            fluxes[(i, j)] = TWO_PI * float(x)
            field_entries.append([i, j, float(x)])
        field = MagneticField.from_entries(d, fluxes)

    hop_tables = doc.get("hopping", [])
    if not isinstance(hop_tables, list):
        raise ModelFileError("[[hopping]] must be an array of tables")

    seed = None
    boundary_seed = None
    lam_override = None
    norm_dis = None
    if "disorder" in doc:
        sec = doc["disorder"]
        _check_keys(sec, ("seed", "boundary_seed", "lambdas"), "disorder")
        seed = _get(sec, "seed", int, "disorder")
        boundary_seed = _get(sec, "boundary_seed", int, "disorder",
                             default=None)
        lam_override = _get(sec, "lambdas", list, "disorder", default=None)
        if lam_override is not None:
            if len(lam_override) != len(hop_tables) or \
                    not all(isinstance(v, (int, float)) and
                            not isinstance(v, bool) and v >= 0
                            for v in lam_override):
                raise ModelFileError(
                    "disorder lambdas must list one value per hopping")
        norm_dis = _norm_disorder(seed, boundary_seed)

    static, scaled, norm_hops = [], [], []
    for k, tab in enumerate(hop_tables):
        where = f"hopping #{k}"
        _check_keys(tab, ("y", "w_real", "w_imag", "lambda", "scale"), where)
        y = _int_vector(_get(tab, "y", list, where), d, where)
        w = _matrix(tab, fiber, where)
        lam = _get(tab, "lambda", float, where, default=0.0)
        if lam_override is not None:
            # overrides fold into the hoppings of the normalized document
            lam = float(lam_override[k])
        scale = _get(tab, "scale", str, where, default=None)
        try:
            spec = HoppingSpec(y, w, lam)
        except ValueError as exc:
            raise ModelFileError(f"bad [{where}]: {exc}") from exc
        (scaled if scale else static).append((spec, scale))
        entry = {"y": list(y), "w_real": w.real.tolist(),
                 "w_imag": w.imag.tolist(), "lambda": float(lam)}
        if scale:
            entry["scale"] = scale
        norm_hops.append(entry)

    def build_model(hops) -> BulkModel:
        try:
            return BulkModel(d=d, N=fiber, hoppings=tuple(hops), mu=mu,
                             chiral=chiral, field=field)
        except ValueError as exc:
            raise ModelFileError(f"inconsistent model: {exc}") from exc

    loop = None
    norm_loop = None
    if "loop" in doc:
        sec = doc["loop"]
        _check_keys(sec, ("nt", "mu", "waveform"), "loop")
        nt = _get(sec, "nt", int, "loop", default=64)
        loop_mu = _get(sec, "mu", float, "loop", default=0.0)
        wf_tables = _get(sec, "waveform", dict, "loop", default={})
        waves = {}
        norm_waves = {}
        for name, wtab in wf_tables.items():
            where = f"loop.waveform.{name}"
            _check_keys(wtab, ("kind", "offset", "amplitude", "phase",
                               "points"), where)
            kind = _get(wtab, "kind", str, where)
            try:
                waves[name] = Waveform(
                    kind=kind,
                    offset=_get(wtab, "offset", float, where, default=0.0),
                    amplitude=_get(wtab, "amplitude", float, where, default=0.0),
                    phase=_get(wtab, "phase", float, where, default=0.0),
                    points=tuple(tuple(p) for p in
                                 _get(wtab, "points", list, where, default=[])),
                )
            except (TypeError, ValueError) as exc:
                raise ModelFileError(f"bad [{where}]: {exc}") from exc
            norm_waves[name] = _normalize_waveform(waves[name])
        used = {s for _, s in scaled}
        missing = sorted(used - set(waves))
        idle = sorted(set(waves) - used)
        if missing:
            raise ModelFileError(f"scale names {missing} have no waveform")
        if idle:
            raise ModelFileError(f"waveforms {idle} drive no hopping")
        if scaled:
            base = [s for s, _ in static]
            driven = [(s, waves[name]) for s, name in scaled]

            def model_at(t: float) -> BulkModel:
                hops = list(base) + [HoppingSpec(s.y, wf(t) * s.W, s.lam)
                                     for s, wf in driven]
                return build_model(hops)

            loop = AdiabaticLoop(model_at=model_at, mu_at=loop_mu, nt=nt)
        norm_loop = {"nt": nt, "mu": loop_mu, "waveform": norm_waves}
    elif any(s for _, s in scaled):
        raise ModelFileError("scaled hoppings need a [loop] section")

    model = loop.model_at(0.0) if loop is not None else \
        build_model([s for s, _ in static])

    volume = None
    norm_volume = None
    if "volume" in doc:
        sec = doc["volume"]
        _check_keys(sec, ("sizes", "bc"), "volume")
        sizes = _get(sec, "sizes", list, "volume")
        bc = _get(sec, "bc", list, "volume")
        if len(sizes) != d or not all(isinstance(s, int) and s >= 1
                                      for s in sizes):
            raise ModelFileError("volume sizes must be d positive integers")
        if len(bc) != d or not all(b in _BC_TOKENS for b in bc):
            raise ModelFileError(f"volume bc tokens must be from {_BC_TOKENS}")
        try:
            volume = FiniteVolume(sizes=tuple(sizes), bc=tuple(bc))
        except ValueError as exc:
            raise ModelFileError(f"bad [volume]: {exc}") from exc
        norm_volume = {"sizes": list(sizes), "bc": list(bc)}

    halfspace = None
    norm_half = None
    if "halfspace" in doc:
        sec = doc["halfspace"]
        _check_keys(sec, ("r", "term"), "halfspace")
        r = _get(sec, "r", int, "halfspace", default=0)
        terms = []
        norm_terms = []
        for k, tab in enumerate(sec.get("term", [])):
            where = f"halfspace.term #{k}"
            _check_keys(tab, ("y", "n", "m", "w_real", "w_imag", "lambda"),
                        where)
            y = _int_vector(_get(tab, "y", list, where), d - 1, where)
            n = _get(tab, "n", int, where)
            mdep = _get(tab, "m", int, where)
            w = _matrix(tab, fiber, where)
            lam = _get(tab, "lambda", float, where, default=0.0)
            try:
                terms.append(BoundaryTerm(y, n, mdep, w, lam))
            except ValueError as exc:
                raise ModelFileError(f"bad [{where}]: {exc}") from exc
            norm_terms.append({"y": list(y), "n": n, "m": mdep,
                               "w_real": w.real.tolist(),
                               "w_imag": w.imag.tolist(),
                               "lambda": float(lam)})
        try:
            halfspace = HalfSpaceModel(bulk=model, boundary_terms=terms, R=r)
        except ValueError as exc:
            raise ModelFileError(f"bad [halfspace]: {exc}") from exc
        norm_half = {"r": halfspace.R}
        if norm_terms:
            norm_half["term"] = norm_terms

    raw = {"model": doc_model(d, fiber, chiral, mu), "hopping": norm_hops,
           **_opt("field", _norm_field(field_entries)),
           **_opt("disorder", norm_dis),
           **_opt("volume", norm_volume),
           **_opt("halfspace", norm_half),
           **_opt("loop", norm_loop)}
    return ModelFileData(model=model, volume=volume, halfspace=halfspace,
                         loop=loop, seed=seed, boundary_seed=boundary_seed,
                         raw=raw)


def doc_model(d, fiber, chiral, mu) -> dict:
    return {"d": d, "fiber": fiber, "chiral": chiral, "mu": float(mu)}


def _opt(key, value):
    return {key: value} if value else {}


def _norm_field(entries):
    return {"entries": entries} if entries else None


def _norm_disorder(seed, boundary_seed):
    out = {"seed": seed}
    if boundary_seed is not None:
        out["boundary_seed"] = boundary_seed
    return out


def _normalize_waveform(wf: Waveform) -> dict:
    out = {"kind": wf.kind}
    if wf.kind == "pwl":
        out["points"] = [[float(t), float(v)] for t, v in wf.points]
    else:
        out.update(offset=float(wf.offset), amplitude=float(wf.amplitude),
                   phase=float(wf.phase))
        if wf.kind == "const":
            out = {"kind": "const", "offset": float(wf.offset)}
    return out


def load(path) -> ModelFileData:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


# ---------------------------------------------------------------------------
# serialization (the TOML subset the schema uses; no writer dependency)


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            raise ModelFileError("non-finite float in document")
        s = repr(v)
        return s if ("." in s or "e" in s or "E" in s) else s + ".0"
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise ModelFileError(f"cannot serialize value of type {type(v).__name__}")


def _emit_table(lines, header: str, table: dict):
    lines.append(header)
    for k, v in table.items():
        if not isinstance(v, (dict, list)) or \
                (isinstance(v, list) and not any(isinstance(x, dict) for x in v)):
            lines.append(f"{k} = {_fmt_value(v)}")
    lines.append("")


def serialize(raw) -> str:
    """Emit the normalized document of a ModelFileData (or such a dict)."""
    if isinstance(raw, ModelFileData):
        raw = raw.raw
    lines = []
    _emit_table(lines, "[model]", raw["model"])
    for hop in raw.get("hopping", []):
        _emit_table(lines, "[[hopping]]", hop)
    if "field" in raw:
        _emit_table(lines, "[field]", raw["field"])
    if "disorder" in raw:
        _emit_table(lines, "[disorder]", raw["disorder"])
    if "volume" in raw:
        _emit_table(lines, "[volume]", raw["volume"])
    if "halfspace" in raw:
        _emit_table(lines, "[halfspace]", raw["halfspace"])
        for term in raw["halfspace"].get("term", []):
            _emit_table(lines, "[[halfspace.term]]", term)
    if "loop" in raw:
        _emit_table(lines, "[loop]", raw["loop"])
        for name, wtab in raw["loop"].get("waveform", {}).items():
            _emit_table(lines, f"[loop.waveform.{name}]", wtab)
    return "\n".join(lines)


def save(path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(data))
