"""TOML run configuration: parsing, validation and resolved echo."""

from __future__ import annotations

import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fem import CoefficientField
from .meshing import Mesh, boxes_mesh, generate_square_mesh, load_mesh, refine_uniform
from .scenarios import DEFAULT_OBSERVATION_POINTS, gaussian_lens_kappa
from .signals import Sin6Heaviside, Sin6Pulse, WindowedSine

__all__ = ["RunConfig", "ConfigError", "parse_config"]


class ConfigError(ValueError):
    """Raised for unparsable or invalid run configurations."""


_SCHEMA = {
    "geometry": {"kind", "levels", "boxes", "pitch", "path"},
    "coefficients": {"kind", "c", "diagonals", "c_expr", "kappa_xx", "kappa_xy", "kappa_yy"},
    "incident": {"direction", "signal", "delay"},
    "run": {"manufactured", "p", "levels", "T", "steps", "radius"},
    "observation": {"points"},
    "output": {"directory", "snapshot_times", "exterior_grid"},
}
_GRID_KEYS = {"xmin", "xmax", "ymin", "ymax", "n"}

_SIGNALS = {
    "sin2_window": lambda: WindowedSine(omega=2.0, tau=0.5, t_end=2.0),
    "sin6": lambda: Sin6Heaviside(omega=4.0),
    "sin6_pulse": lambda: Sin6Pulse(omega=4.0),
}


@dataclass
class RunConfig:
    """Validated, defaults-resolved run description."""

    geometry_kind: str = "square"
    geometry_levels: int = 0
    boxes: list = field(default_factory=list)
    pitch: float = 0.125
    mesh_path: Optional[str] = None

    coefficients_kind: str = "unit"
    c_value: float = 1.0
    diagonals: list = field(default_factory=list)
    expressions: dict = field(default_factory=dict)

    direction: Optional[np.ndarray] = None
    signal_name: str = "sin6_pulse"
    delay: object = "auto"

    manufactured: bool = False
    p: int = 1
    levels: int = 4
    T: float = 3.0
    steps: int = 20
    radius: Optional[float] = None

    observation_points: np.ndarray = field(
        default_factory=lambda: np.array(DEFAULT_OBSERVATION_POINTS)
    )

    output_dir: str = "out"
    snapshot_times: list = field(default_factory=list)
    exterior_grid: dict = field(
        default_factory=lambda: {"xmin": -1.5, "xmax": 1.5, "ymin": -1.5, "ymax": 1.5, "n": 40}
    )

    def build_mesh(self) -> Mesh:
        if self.geometry_kind == "square":
            return generate_square_mesh(self.geometry_levels)
        if self.geometry_kind == "boxes":
            mesh = boxes_mesh(self.boxes, self.pitch)
            for _ in range(self.geometry_levels):
                mesh = refine_uniform(mesh)
            return mesh
        mesh = load_mesh(self.mesh_path)
        for _ in range(self.geometry_levels):
            mesh = refine_uniform(mesh)
        return mesh

    def build_coefficients(self) -> CoefficientField:
        kind = self.coefficients_kind
        if kind == "unit":
            return CoefficientField.constant(c=self.c_value)
        if kind == "experiment1":
            from .scenarios import manufactured_case_1

            return manufactured_case_1().coeff
        if kind == "gaussian_lens":
            return gaussian_lens_kappa()
        if kind == "per_component":
            table = {
                i: np.diag(np.asarray(d, dtype=float)) for i, d in enumerate(self.diagonals)
            }
            return CoefficientField.per_component(table, c=self.c_value)
        if kind == "expressions":
            return _expression_field(self.expressions)
        raise ConfigError(f"unknown coefficients kind {kind!r}")

    def build_signal(self):
        return _SIGNALS[self.signal_name]()

    def resolved_text(self) -> str:
        """Serialize the fully resolved configuration as TOML."""
        lines = ["[geometry]", f'kind = "{self.geometry_kind}"',
                 f"levels = {self.geometry_levels}"]
        if self.geometry_kind == "boxes":
            lines.append("boxes = " + _toml_list([list(map(float, b)) for b in self.boxes]))
            lines.append(f"pitch = {self.pitch!r}")
        if self.mesh_path:
            lines.append(f'path = "{self.mesh_path}"')
        lines += ["", "[coefficients]", f'kind = "{self.coefficients_kind}"',
                  f"c = {self.c_value!r}"]
        if self.diagonals:
            lines.append("diagonals = " + _toml_list([list(map(float, d)) for d in self.diagonals]))
        for key, expr in self.expressions.items():
            lines.append(f'{key} = "{expr}"')
        if self.direction is not None:
            lines += ["", "[incident]",
                      "direction = " + _toml_list(list(map(float, self.direction))),
                      f'signal = "{self.signal_name}"',
                      f"delay = {self.delay!r}" if not isinstance(self.delay, str)
                      else f'delay = "{self.delay}"']
        lines += ["", "[run]",
                  f"manufactured = {'true' if self.manufactured else 'false'}",
                  f"p = {self.p}", f"levels = {self.levels}", f"T = {self.T!r}",
                  f"steps = {self.steps}"]
        if self.radius is not None:
            lines.append(f"radius = {self.radius!r}")
        lines += ["", "[observation]",
                  "points = " + _toml_list([list(map(float, p)) for p in self.observation_points])]
        g = self.exterior_grid
        lines += ["", "[output]", f'directory = "{self.output_dir}"',
                  "snapshot_times = " + _toml_list(list(map(float, self.snapshot_times))),
                  ("exterior_grid = { xmin = %r, xmax = %r, ymin = %r, ymax = %r, n = %d }"
                   % (g["xmin"], g["xmax"], g["ymin"], g["ymax"], g["n"]))]
        return "\n".join(lines) + "\n"


def _toml_list(x) -> str:
    if isinstance(x, list) and x and isinstance(x[0], list):
        return "[" + ", ".join(_toml_list(e) for e in x) + "]"
    return "[" + ", ".join(repr(float(e)) for e in x) + "]"


def _expression_field(exprs: dict) -> CoefficientField:
    names = {k: exprs.get(k) for k in ("kappa_xx", "kappa_xy", "kappa_yy")}
    missing = [k for k, v in names.items() if v is None]
    if missing:
        raise ConfigError(f"expression coefficients need keys {missing}")
    env = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "pi": math.pi}

    def compile_one(expr):
        code = compile(expr, "<coefficients>", "eval")

        def fn(x, y):
            return eval(code, {"__builtins__": {}}, {**env, "x": x, "y": y})

        return fn

    kxx, kxy, kyy = (compile_one(names[k]) for k in ("kappa_xx", "kappa_xy", "kappa_yy"))
    c_expr = exprs.get("c_expr")
    c_fn_expr = compile_one(c_expr) if c_expr else None

    def kappa(pts):
        x, y = pts[..., 0], pts[..., 1]
        out = np.empty(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = kxx(x, y)
        out[..., 0, 1] = kxy(x, y)
        out[..., 1, 0] = out[..., 0, 1]
        out[..., 1, 1] = kyy(x, y)
        return out

    def c_fn(pts):
        x, y = pts[..., 0], pts[..., 1]
        return np.broadcast_to(np.asarray(c_fn_expr(x, y), dtype=float), x.shape)

    return CoefficientField.spatial(kappa, c_fn if c_fn_expr else None)


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def parse_config(path) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Unknown keys are rejected; the direction is normalized (with a
    warning) and numeric sanity constraints are enforced.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")

    for section, content in raw.items():
        _require(section in _SCHEMA, f"unknown config section [{section}]")
        _require(isinstance(content, dict), f"section [{section}] must be a table")
        for key in content:
            _require(key in _SCHEMA[section], f"unknown key {key!r} in [{section}]")

    cfg = RunConfig()
    geo = raw.get("geometry", {})
    cfg.geometry_kind = geo.get("kind", "square")
    _require(cfg.geometry_kind in ("square", "boxes", "mesh_file"),
             f"geometry kind must be square|boxes|mesh_file, got {cfg.geometry_kind!r}")
    cfg.geometry_levels = int(geo.get("levels", 0))
    _require(cfg.geometry_levels >= 0, "geometry levels must be >= 0")
    cfg.boxes = geo.get("boxes", [])
    cfg.pitch = float(geo.get("pitch", 0.125))
    _require(cfg.pitch > 0, "pitch must be positive")
    cfg.mesh_path = geo.get("path")
    if cfg.geometry_kind == "boxes":
        _require(len(cfg.boxes) >= 1, "boxes geometry needs a nonempty boxes list")
    if cfg.geometry_kind == "mesh_file":
        _require(cfg.mesh_path is not None, "mesh_file geometry needs 'path'")

    co = raw.get("coefficients", {})
    cfg.coefficients_kind = co.get("kind", "unit")
    cfg.c_value = float(co.get("c", 1.0))
    _require(cfg.c_value > 0, "coefficient c must be positive")
    cfg.diagonals = co.get("diagonals", [])
    cfg.expressions = {
        k: co[k] for k in ("c_expr", "kappa_xx", "kappa_xy", "kappa_yy") if k in co
    }

    run = raw.get("run", {})
    cfg.manufactured = bool(run.get("manufactured", False))
    cfg.p = int(run.get("p", 1))
    _require(cfg.p in (1, 2), "p must be 1 or 2")
    cfg.levels = int(run.get("levels", 4))
    cfg.T = float(run.get("T", 3.0))
    _require(cfg.T > 0, "final time T must be positive")
    cfg.steps = int(run.get("steps", 20))
    _require(cfg.steps >= 1, "steps must be >= 1")
    if "radius" in run:
        cfg.radius = float(run["radius"])
        _require(0 < cfg.radius < 1, "contour radius must lie in (0, 1)")

    inc = raw.get("incident")
    if inc is not None:
        d = np.asarray(inc.get("direction", [1.0, 0.0]), dtype=float)
        _require(d.shape == (2,), "incident direction must have two components")
        norm = float(np.linalg.norm(d))
        _require(norm > 0, "incident direction must be nonzero")
        if abs(norm - 1.0) > 1e-12:
            warnings.warn(f"normalizing incident direction {d.tolist()}")
            d = d / norm
        cfg.direction = d
        cfg.signal_name = inc.get("signal", "sin6_pulse")
        _require(cfg.signal_name in _SIGNALS,
                 f"unknown signal {cfg.signal_name!r}; choose from {sorted(_SIGNALS)}")
        cfg.delay = inc.get("delay", "auto")
        if not isinstance(cfg.delay, str):
            cfg.delay = float(cfg.delay)
        else:
            _require(cfg.delay == "auto", "delay must be a number or 'auto'")

    obs = raw.get("observation", {})
    if "points" in obs:
        pts = np.asarray(obs["points"], dtype=float)
        _require(pts.ndim == 2 and pts.shape[1] == 2, "observation points must be Nx2")
        cfg.observation_points = pts

    out = raw.get("output", {})
    cfg.output_dir = out.get("directory", "out")
    cfg.snapshot_times = [float(t) for t in out.get("snapshot_times", [])]
    _require(all(t >= 0 for t in cfg.snapshot_times), "snapshot times must be >= 0")
    if "exterior_grid" in out:
        g = out["exterior_grid"]
        for key in g:
            _require(key in _GRID_KEYS, f"unknown exterior_grid key {key!r}")
        cfg.exterior_grid.update({k: (int(v) if k == "n" else float(v)) for k, v in g.items()})
        _require(cfg.exterior_grid["n"] >= 2, "exterior grid n must be >= 2")
    return cfg
