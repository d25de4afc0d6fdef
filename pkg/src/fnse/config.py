"""Plain ``key = value`` run configurations."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fields as F
from .levy import KINDS, SCHEMES, LevySymbol

COMMANDS = ("verify-levy", "verify-fields", "verify-feynman-kac", "verify-estimates",
            "solve", "continue", "compare")
SOLVER_COMMANDS = ("solve", "continue")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based source line (0 if none)."""

    def __init__(self, message, line=0):
        where = f"line {line}: " if line else ""
        super().__init__(where + message)
        self.line = line


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise ValueError("must be an unsigned 64-bit integer")
    return v


def _horizon(text):
    return None if text == "auto" else float(text)


def _scheme(text):
    if text == "auto":
        return None
    if text not in SCHEMES:
        raise ValueError(f"expected auto or one of {', '.join(SCHEMES)}")
    return text


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


# name: (parser, default, help)
KEYS = {
    "command": (_choice(*COMMANDS), None, "one of " + ", ".join(COMMANDS)),
    "master_seed": (_u64, 0, "64-bit master seed"),
    "workers": (int, 1, "worker threads"),
    "output_dir": (str, None, "artifact directory"),
    # grid and process
    "dim": (int, 2, "spatial dimension"),
    "n": (int, 32, "grid points per axis, a power of two"),
    "alpha": (float, 1.5, "stability index"),
    "sigma": (float, 1.0, "symbol scale"),
    "kind": (_choice(*KINDS), "isotropic-stable", "symbol kind"),
    "truncation_a": (float, 1.0, "jump truncation radius"),
    "scheme": (_scheme, None, "increment scheme or auto"),
    "viscosity": (float, 1.0, "nu >= 1"),
    "p": (float, 4.0, "norm exponent, p > 2d/alpha"),
    # terminal data
    "u0": (str, "taylor-green", "taylor-green | single-mode k=.. e=.. | zero | file:<path>"),
    "amplitude": (float, 1.0, "factor applied to u0"),
    # solver
    "M": (int, 2000, "samples per node"),
    "dt": (float, 1e-3, "particle time step"),
    "K": (int, 2, "time slices"),
    "C0": (float, 1.0, "horizon constant"),
    "picard_tol": (float, 1e-3, "fixed-point tolerance"),
    "picard_max": (int, 8, "Picard iteration cap"),
    "max_halvings": (int, 6, "horizon halvings before giving up"),
    "interpolation": (_choice("linear", "spectral"), "linear", "drift interpolation"),
    "horizon": (_horizon, None, "solve horizon T <= 0 or auto"),
    "total_horizon": (float, None, "target horizon for continue"),
    "method": (_choice("stochastic", "spectral"), "stochastic", "solver used by solve"),
    "dt_ref": (float, 1e-3, "step of the spectral reference"),
    "weak_form": (_choice("on", "off"), "on", "weak-form residual report after solve"),
    # compare
    "solution": (str, None, "solution directory for compare"),
    "reference": (str, None, "reference directory for compare"),
    "budget": (float, 0.05, "relative L2 error budget for compare"),
    # verification suites
    "levy_alphas": (_floats, (1.2, 1.5, 1.8), "stability indices for verify-levy"),
    "levy_dims": (_ints, (1, 2), "dimensions for verify-levy"),
    "levy_dts": (_floats, (0.05, 0.2), "time steps for verify-levy"),
    "levy_samples": (int, 100000, "samples per verify-levy case"),
    "fk_samples": (int, 10000, "samples per point for verify-feynman-kac"),
    "fk_points": (int, 20, "query points for verify-feynman-kac"),
    "fk_t": (float, -0.1, "start time of the Feynman-Kac comparison"),
    "fk_viscosity": (float, 2.0, "viscosity of the Feynman-Kac comparison"),
    "volume_t": (float, -0.2, "start time of the volume check"),
    "volume_samples": (int, 10000, "flows in the volume check"),
    "sde_samples": (int, 2000, "samples per node in the flow-gradient check"),
    "sde_dt": (float, 5e-3, "time step of the flow-gradient check"),
    "kernel_samples": (int, 1000000, "draws in the kernel checks"),
    "krylov_samples": (int, 2000, "flows per start point in the Krylov check"),
}

REQUIRED = {"compare": ("solution", "reference"), "continue": ("total_horizon",)}


@dataclass
class RunConfig:
    """Validated run configuration; every key of :data:`KEYS` is an attribute."""

    values: dict
    lines: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def command(self):
        return self.values["command"]

    def grid(self):
        return F.PeriodicGrid(self.dim, self.n)

    def symbol(self):
        return LevySymbol(self.alpha, sigma=self.sigma, kind=self.kind,
                          truncation_a=self.truncation_a)

    def solve_config(self, **over):
        from .solver import SolveConfig
        kw = dict(grid=self.grid(), symbol=self.symbol(), viscosity=self.viscosity, M=self.M,
                  dt=self.dt, K=self.K, C0=self.C0, picard_tol=self.picard_tol,
                  picard_max=self.picard_max, p=self.p, seed=self.master_seed,
                  interpolation=self.interpolation, workers=self.workers,
                  max_halvings=self.max_halvings, scheme=self.scheme)
        kw.update(over)
        return SolveConfig(**kw)

    def initial_velocity(self):
        return make_u0(self.u0, self.grid(), self.amplitude)


def help_text():
    out = []
    for k, (_, default, doc) in KEYS.items():
        shown = "required" if default is None else (
            ",".join(f"{v:g}" for v in default) if isinstance(default, tuple) else default)
        out.append(f"  {k:<16} {doc} (default: {shown})")
    return "\n".join(out)


def _validate(vals, lines, end_line):
    def line(k):
        return lines.get(k, 0)

    cmd = vals.get("command")
    if cmd is None:
        raise ConfigError("missing required key 'command'", end_line)
    for k in REQUIRED.get(cmd, ()):
        if vals.get(k) is None:
            raise ConfigError(f"missing required key {k!r} for {cmd}", end_line)
    a = vals["alpha"]
    if not 0.0 < a < 2.0:
        raise ConfigError(f"alpha = {a} is out of range: condition (H)_alpha needs alpha in "
                          f"(0, 2) and the solver needs alpha in (1, 2)", line("alpha"))
    if cmd in SOLVER_COMMANDS and vals["method"] == "stochastic" and not 1.0 < a < 2.0:
        raise ConfigError(f"alpha = {a} is out of range: the solver needs alpha in (1, 2), "
                          f"condition (H)_alpha alone allows (0, 2)", line("alpha"))
    for k in vals.get("levy_alphas", ()):
        if not 0.0 < k < 2.0:
            raise ConfigError(f"levy_alphas entry {k} is outside (0, 2)", line("levy_alphas"))
    d, n = vals["dim"], vals["n"]
    if d not in (1, 2, 3):
        raise ConfigError(f"dim = {d} is out of range (1, 2 or 3)", line("dim"))
    if n < 4 or n & (n - 1):
        raise ConfigError(f"n = {n} is not a power of two >= 4", line("n"))
    for k in ("viscosity", "fk_viscosity"):
        if vals[k] < 1.0:
            raise ConfigError(f"{k} = {vals[k]} is out of range (needs >= 1)", line(k))
    if cmd in SOLVER_COMMANDS and vals["p"] <= 2 * d / a:
        raise ConfigError(f"p = {vals['p']} violates p > 2d/alpha = {2 * d / a:.4g}",
                          line("p") or line("alpha") or line("dim"))
    for k in ("sigma", "truncation_a", "dt", "C0", "picard_tol", "dt_ref", "budget", "sde_dt"):
        if not vals[k] > 0:
            raise ConfigError(f"{k} = {vals[k]} is out of range (needs > 0)", line(k))
    for k in ("workers", "M", "K", "picard_max", "levy_samples", "fk_samples", "fk_points",
              "volume_samples", "sde_samples", "kernel_samples", "krylov_samples"):
        if vals[k] < 1:
            raise ConfigError(f"{k} = {vals[k]} is out of range (needs >= 1)", line(k))
    if vals["max_halvings"] < 0:
        raise ConfigError("max_halvings must be >= 0", line("max_halvings"))
    for k in ("horizon", "fk_t", "volume_t"):
        if vals[k] is not None and vals[k] > 0:
            raise ConfigError(f"{k} = {vals[k]} is out of range (needs <= 0)", line(k))
    if vals["total_horizon"] is not None and vals["total_horizon"] >= 0:
        raise ConfigError("total_horizon must be negative", line("total_horizon"))
    try:
        parse_u0_spec(vals["u0"])
    except ValueError as exc:
        raise ConfigError(str(exc), line("u0")) from None


def parse_config(text, overrides=None):
    """Parse a ``key = value`` document into a validated :class:`RunConfig`.

    Parameters
    ----------
    text : str
        One assignment per line; ``#`` starts a comment.
    overrides : dict, optional
        Values applied after parsing (command-line flags), as raw strings or
        already typed values.

    Raises
    ------
    ConfigError
        For unknown keys, malformed or out-of-range values and missing
        required keys, with the offending line number.
    """
    vals = {k: v[1] for k, v in KEYS.items()}
    lines = {}
    n_lines = 0
    for i, raw in enumerate(text.splitlines(), start=1):
        n_lines = i
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", i)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", i)
        if key in lines:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", i)
        try:
            vals[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})", i) from None
        lines[key] = i
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        vals[key] = KEYS[key][0](value) if isinstance(value, str) else value
        lines.pop(key, None)
    _validate(vals, lines, n_lines + 1)
    return RunConfig(vals, lines)


def load_config(path, overrides=None):
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)


def parse_u0_spec(spec):
    """Split a u0 preset into ``(name, options)``."""
    spec = spec.strip()
    if spec.startswith("file:"):
        return "file", {"path": spec[5:].strip()}
    parts = spec.split()
    name, opts = parts[0], {}
    for item in parts[1:]:
        if "=" not in item:
            raise ValueError(f"u0 option {item!r} is not key=value")
        k, v = item.split("=", 1)
        opts[k] = v
    if name not in ("taylor-green", "single-mode", "zero"):
        raise ValueError(f"unknown u0 preset {name!r}")
    if name == "single-mode":
        if set(opts) - {"k", "e"}:
            raise ValueError("single-mode takes only k= and e=")
        opts.setdefault("k", "0,1")
        opts.setdefault("e", "1,0")
    elif opts:
        raise ValueError(f"u0 preset {name} takes no options")
    return name, opts


def make_u0(spec, grid, amplitude=1.0):
    """Terminal velocity from a preset.

    ``taylor-green`` is ``(sin x cos y, -cos x sin y)`` in the first two
    coordinates. ``single-mode k=k1,k2 e=e1,e2`` is ``e cos(k.x)`` with
    ``e`` projected orthogonal to ``k``. ``file:<path>`` reads an FNSE-FIELD
    dump.
    """
    from .io import read_field
    name, opts = parse_u0_spec(spec)
    d = grid.dim
    if name == "zero":
        return F.PeriodicField.zeros(grid, d)
    if name == "file":
        f, _ = read_field(opts["path"])
        if f.grid != grid or f.comps != d:
            raise ValueError("u0 file does not match the configured grid")
        return F.PeriodicField(grid, amplitude * f.values, divergence_free=True)
    if d < 2:
        raise ValueError("velocity presets need dim >= 2")
    x = grid.coords
    v = np.zeros((d,) + grid.shape)
    if name == "taylor-green":
        v[0] = np.sin(x[0]) * np.cos(x[1])
        v[1] = -np.cos(x[0]) * np.sin(x[1])
    else:
        k = np.array(_ints(opts["k"]), float)
        e = np.array(_floats(opts["e"]), float)
        if k.size != d or e.size != d or not np.any(k):
            raise ValueError(f"single-mode needs nonzero k and e with {d} entries")
        e = e - (e @ k) / (k @ k) * k
        if not np.any(np.abs(e) > 1e-14):
            raise ValueError("single-mode polarization is parallel to k")
        e = e / np.linalg.norm(e)
        phase = np.tensordot(k, x, axes=1)
        v = np.einsum("i,...->i...", e, np.cos(phase))
    return F.PeriodicField(grid, amplitude * v, divergence_free=True)

