"""Run configuration: ``key=value`` lines with ``#`` comments."""

from dataclasses import dataclass, fields, replace

from .assembly import QuadratureSettings
from .field import EPS_MARUSSI, FdConfig
from .mesh import MAX_CUBE_LEVEL, MAX_ICOSPHERE_LEVEL


class ConfigError(ValueError):
    pass


_CHOICES = {
    "shape": ("icosphere", "cube"),
    "smoother_surface": ("current", "reference"),
    "vector_smoothing": ("normal-tangential", "componentwise"),
    "transport": ("taylor", "none"),
    "gravity": ("projected", "facet", "vertex"),
}


@dataclass(frozen=True)
class RunConfig:
    shape: str = "icosphere"
    level: int = 2
    theta0: float = 2.6
    kappa: float = 6.0
    max_iter: int = 30
    tol: float = 1e-3
    smoother: bool = True
    modes: int = -1  # -1: full basis (V - 1)
    smoother_power: float = 1.0
    smoother_surface: str = "current"
    vector_smoothing: str = "normal-tangential"
    transport: str = "taylor"
    gravity: str = "projected"
    restart_every: int = 0
    fd_delta_normal: float = 1e-4
    fd_delta_tangential: float = 1e-5
    eps_marussi: float = EPS_MARUSSI
    quad_order: int = 8
    quad_ratio: float = 0.15
    quad_levels: int = 6
    target_radius: float = 1.1
    output: str = "report.csv"

    def __post_init__(self):
        for name, allowed in _CHOICES.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {', '.join(allowed)}, got {getattr(self, name)!r}")
        guard = MAX_ICOSPHERE_LEVEL if self.shape == "icosphere" else MAX_CUBE_LEVEL
        checks = [
            (0 <= self.level <= guard, f"level must lie in [0, {guard}]"),
            (self.theta0 > 1, "theta0 must be > 1"),
            (self.kappa > 1, "kappa must be > 1"),
            (self.max_iter >= 1, "max_iter must be >= 1"),
            (self.tol > 0, "tol must be positive"),
            (self.modes >= -1, "modes must be >= 0, or -1 for the full basis"),
            (self.smoother_power >= 1, "smoother_power must be >= 1"),
            (self.restart_every >= 0, "restart_every must be >= 0"),
            (self.fd_delta_normal > 0 and self.fd_delta_tangential > 0, "finite-difference steps must be positive"),
            (self.eps_marussi > 0, "eps_marussi must be positive"),
            (self.quad_order >= 2, "quad_order must be >= 2"),
            (0 < self.quad_ratio < 1, "quad_ratio must lie in (0, 1)"),
            (self.quad_levels >= 1, "quad_levels must be >= 1"),
            (self.target_radius > 0, "target_radius must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def fd(self):
        return FdConfig(self.fd_delta_normal, self.fd_delta_tangential)

    @property
    def quadrature(self):
        return QuadratureSettings(order=self.quad_order, ratio=self.quad_ratio, levels=self.quad_levels)

    def echo(self):
        """The effective configuration as ``key=value`` lines."""
        return [f"{f.name}={_format(getattr(self, f.name))}" for f in fields(self)]

    def with_updates(self, **changes):
        return replace(self, **changes)


def _format(value):
    if isinstance(value, bool):
        return "on" if value else "off"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_bool(text):
    lowered = text.lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, text):
    kind = _TYPES[key]
    if kind is bool or kind == "bool":
        return _parse_bool(text)
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    return text


def parse_config(text):
    """Parse configuration text; errors carry the offending line number."""
    values = {}
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        last_line = lineno
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = (lineno, _convert(key, value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: cannot parse {key}: {exc}") from None
    try:
        return RunConfig(**{k: v for k, (_, v) in values.items()})
    except ConfigError as exc:
        # attribute the violation to the line that set the key, when there is one
        lines = [ln for k, (ln, _) in values.items() if k in str(exc).split()[0:1]]
        where = lines[0] if lines else last_line
        raise ConfigError(f"line {where}: {exc}") from None


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
