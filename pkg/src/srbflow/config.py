"""Run configuration: JSON document -> validated RunConfig with defaults filled in.

Every problem found is reported at once, each as ``dotted.path: reason``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from . import map_model as mm
from .entropy_gradient import SobolevMetric, default_k
from .errors import ConfigError, NotExpanding
from .flow import FlowConfig

TOP_KEYS = {"map", "numerics", "metric", "flow", "seed", "output"}
MAP_KEYS = {"dim", "A", "modes"}
MODE_KEYS = {"i", "m", "cos", "sin"}
NUMERICS_KEYS = {"grid_size", "tol", "fd_step", "cutoff", "margin"}
METRIC_KEYS = {"k"}
FLOW_KEYS = {"dt0", "dt_min", "dt_max", "grad_tol", "entropy_tol", "max_steps"}
OUTPUT_KEYS = {"dir"}


@dataclass(frozen=True)
class Numerics:
    grid_size: int
    tol: float = 1e-12
    fd_step: float = 1e-3
    cutoff: int = 8
    margin: float = mm.DEFAULT_MARGIN


@dataclass(frozen=True)
class RunConfig:
    map: mm.ExpandingMap
    numerics: Numerics
    k: int
    flow: FlowConfig = field(default_factory=FlowConfig)
    seed: int = 0
    output_dir: str | None = None

    @property
    def dim(self) -> int:
        return self.map.dim

    @property
    def metric(self) -> SobolevMetric:
        return SobolevMetric(self.dim, self.k, self.numerics.cutoff)

    def to_json(self) -> dict:
        n = self.numerics
        f = self.flow
        doc = {
            "map": self.map.to_json(),
            "numerics": {"grid_size": n.grid_size, "tol": n.tol, "fd_step": n.fd_step,
                         "cutoff": n.cutoff, "margin": n.margin},
            "metric": {"k": self.k},
            "flow": {"dt0": f.dt0, "dt_min": f.dt_min, "dt_max": f.dt_max, "grad_tol": f.grad_tol,
                     "entropy_tol": f.entropy_tol, "max_steps": f.max_steps},
            "seed": self.seed,
        }
        if self.output_dir is not None:
            doc["output"] = {"dir": self.output_dir}
        return doc


class _Errors:
    def __init__(self):
        self.items: list[str] = []

    def add(self, path: str, reason: str):
        self.items.append(f"{path}: {reason}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _section(doc, key, allowed, errs: _Errors) -> dict:
    sec = doc.get(key, {})
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        errs.add(key, "must be an object")
        return {}
    for k in sorted(set(sec) - allowed):
        errs.add(f"{key}.{k}", "unknown key")
    return sec


def _number(sec, key, path, default, errs, *, positive=False, nonneg=False, integer=False, nullable=False):
    if key not in sec:
        return default
    v = sec[key]
    if v is None and nullable:
        return None
    if integer and not _is_int(v):
        errs.add(path, "must be an integer")
        return default
    if not integer and not _is_num(v):
        errs.add(path, "must be a finite number")
        return default
    if positive and v <= 0:
        errs.add(path, "must be positive")
        return default
    if nonneg and v < 0:
        errs.add(path, "must be non-negative")
        return default
    return v


def _parse_map(doc, errs: _Errors):
    if "map" not in doc:
        errs.add("map", "required")
        return None, 1
    sec = _section(doc, "map", MAP_KEYS, errs)
    if not isinstance(doc["map"], dict):
        return None, 1
    dim = sec.get("dim")
    if dim is None:
        errs.add("map.dim", "required")
        return None, 1
    if not _is_int(dim) or dim not in (1, 2):
        errs.add("map.dim", "must be 1 or 2")
        return None, 1
    a = sec.get("A")
    ok = True
    if a is None:
        errs.add("map.A", "required")
        ok = False
    elif (not isinstance(a, list) or len(a) != dim
          or any(not isinstance(r, list) or len(r) != dim or not all(_is_int(v) for v in r) for r in a)):
        errs.add("map.A", f"must be a {dim}x{dim} integer matrix")
        ok = False
    modes = sec.get("modes", [])
    terms = []
    if not isinstance(modes, list):
        errs.add("map.modes", "must be a list")
        ok = False
        modes = []
    for j, md in enumerate(modes):
        path = f"map.modes[{j}]"
        if not isinstance(md, dict):
            errs.add(path, "must be an object")
            ok = False
            continue
        for k in sorted(set(md) - MODE_KEYS):
            errs.add(f"{path}.{k}", "unknown key")
            ok = False
        i = md.get("i")
        if not _is_int(i) or not 1 <= i <= dim:
            errs.add(f"{path}.i", f"must be an integer component index in 1..{dim}")
            ok = False
        m = md.get("m")
        if not isinstance(m, list) or len(m) != dim or not all(_is_int(v) for v in m):
            errs.add(f"{path}.m", f"must be a list of {dim} integers")
            ok = False
        c, s = md.get("cos", 0.0), md.get("sin", 0.0)
        for name, v in (("cos", c), ("sin", s)):
            if not _is_num(v):
                errs.add(f"{path}.{name}", "must be a finite number")
                ok = False
        if ok:
            terms.append((i - 1, tuple(m), float(c), float(s)))
    if not ok:
        return None, dim
    try:
        f = mm.ExpandingMap.create(a, terms)
    except NotExpanding:
        errs.add("map.A", "eigenvalues must lie outside the unit circle")
        return None, dim
    return f, dim


def parse_config(text: str | dict) -> RunConfig:
    """Validate a JSON configuration and fill defaults; raises ConfigError listing every problem."""
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<document>: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError("<document>: must be a JSON object")
    errs = _Errors()
    for k in sorted(set(doc) - TOP_KEYS):
        errs.add(k, "unknown key")
    fmap, dim = _parse_map(doc, errs)

    num = _section(doc, "numerics", NUMERICS_KEYS, errs)
    n = _number(num, "grid_size", "numerics.grid_size", mm.default_grid_size(dim), errs, positive=True, integer=True)
    if _is_int(n) and n > 0 and n & (n - 1):
        errs.add("numerics.grid_size", "must be a power of two")
    elif _is_int(n) and n < 16:
        errs.add("numerics.grid_size", "must be at least 16")
    tol = _number(num, "tol", "numerics.tol", 1e-12, errs, positive=True)
    h = _number(num, "fd_step", "numerics.fd_step", 1e-3, errs, positive=True)
    cutoff = _number(num, "cutoff", "numerics.cutoff", 8, errs, positive=True, integer=True)
    margin = _number(num, "margin", "numerics.margin", mm.DEFAULT_MARGIN, errs, nonneg=True)
    if _is_int(n) and _is_int(cutoff) and cutoff * 8 > n:
        errs.add("numerics.cutoff", f"must be at most grid_size/8 = {n // 8}")

    met = _section(doc, "metric", METRIC_KEYS, errs)
    k = _number(met, "k", "metric.k", default_k(dim), errs, nonneg=True, integer=True)

    fl = _section(doc, "flow", FLOW_KEYS, errs)
    base = FlowConfig()
    dt0 = _number(fl, "dt0", "flow.dt0", base.dt0, errs, nonneg=True, nullable=True)
    dt_min = _number(fl, "dt_min", "flow.dt_min", base.dt_min, errs, positive=True)
    dt_max = _number(fl, "dt_max", "flow.dt_max", base.dt_max, errs, positive=True)
    if _is_num(dt_min) and _is_num(dt_max) and dt_max < dt_min:
        errs.add("flow.dt_max", "must not be smaller than flow.dt_min")
    grad_tol = _number(fl, "grad_tol", "flow.grad_tol", base.grad_tol, errs, positive=True)
    entropy_tol = _number(fl, "entropy_tol", "flow.entropy_tol", base.entropy_tol, errs, positive=True)
    max_steps = _number(fl, "max_steps", "flow.max_steps", base.max_steps, errs, nonneg=True, integer=True)

    seed = _number(doc, "seed", "seed", 0, errs, nonneg=True, integer=True)
    out = _section(doc, "output", OUTPUT_KEYS, errs)
    out_dir = out.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        errs.add("output.dir", "must be a string")
        out_dir = None

    if errs.items:
        raise ConfigError("; ".join(errs.items))
    return RunConfig(
        map=fmap,
        numerics=Numerics(n, float(tol), float(h), cutoff, float(margin)),
        k=k,
        flow=FlowConfig(None if dt0 is None else float(dt0), float(dt_min), float(dt_max),
                        float(grad_tol), float(entropy_tol), max_steps),
        seed=seed,
        output_dir=out_dir,
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path} ({exc.strerror})") from None
    return parse_config(text)
