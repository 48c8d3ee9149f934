"""Run configuration: nested dataclasses loaded from YAML with strict key checking."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

EXPERIMENTS = ("coupling", "tomography", "qkd", "zernike-stats", "fried", "gen-screens")


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    n: int = 256
    waist: float = 1.0e-3  # source beam waist w0 (m)
    wavelength: float = 633e-9
    extent_waists: float = 12.0  # grid side in units of w0
    aperture_waists: float = 6.0  # receiver pupil diameter in units of w0


@dataclass
class ChannelConfig:
    before: float = 0.5
    cell: float = 0.3
    after: float = 0.5


@dataclass
class TurbulenceConfig:
    d_over_r0: float = 1.7  # D is the source beam diameter 2 w0; 0 means no turbulence
    r0: float | None = None  # overrides d_over_r0 when set
    greenwood: float = 2.0  # Hz
    subharmonics: int = 10


@dataclass
class AoConfig:
    gain: float = 0.4
    leak: float = 0.99
    tau: float = 0.02
    stroke: float = 20.0
    coupling: float = 0.3
    n_sub: int = 16
    threshold: float = 0.5
    pad: int = 2
    noise: float = 0.0
    iterations: int = 50
    loop_rate: float = 200.0


@dataclass
class CouplingConfig:
    duration: float = 100.0
    t_on: float = 50.0
    seeds: int = 3
    grid_n: int = 128  # the time series runs on a coarser grid of the same extent


@dataclass
class TomographyConfig:
    d: int = 3
    averaged: bool = True  # False: one reconstruction per realization


@dataclass
class QkdConfig:
    dims: list = field(default_factory=lambda: [2, 4, 6, 8, 10])
    bases: list = field(default_factory=lambda: ["logical", "ANG"])


@dataclass
class ZernikeConfig:
    jmax: int = 10
    source: str = "fft"  # fft: hotplate-style r0 sweep; sigma: modal synthesis from ``sigma``
    sigma: list = field(default_factory=list)
    settings: list = field(default_factory=lambda: [0, 1, 2, 3])
    d_over_r0_per_setting: float = 1.7


@dataclass
class FriedConfig:
    frames: int = 500


@dataclass
class ScreensConfig:
    r0_list: list = field(default_factory=lambda: [2e-3 / 1.7, 1.0e-3, 0.6e-3])
    save: int = 0  # number of screens per r0 written as binary containers


@dataclass
class RunConfig:
    experiment: str = "qkd"
    seed: int = 0
    trials: int = 100
    threads: int = 1
    output: str = "out"
    grid: GridConfig = field(default_factory=GridConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    turbulence: TurbulenceConfig = field(default_factory=TurbulenceConfig)
    ao: AoConfig = field(default_factory=AoConfig)
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    tomography: TomographyConfig = field(default_factory=TomographyConfig)
    qkd: QkdConfig = field(default_factory=QkdConfig)
    zernike: ZernikeConfig = field(default_factory=ZernikeConfig)
    fried: FriedConfig = field(default_factory=FriedConfig)
    screens: ScreensConfig = field(default_factory=ScreensConfig)

    @property
    def beam_diameter(self) -> float:
        return 2 * self.grid.waist

    @property
    def r0(self) -> float:
        t = self.turbulence
        if t.r0 is not None:
            return float(t.r0)
        if t.d_over_r0 == 0:
            return math.inf
        return self.beam_diameter / t.d_over_r0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def hash(self) -> str:
        doc = self.to_dict()
        doc.pop("output")
        doc.pop("threads")  # results do not depend on the worker count
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {unknown}; allowed: {sorted(fields)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, where)
        else:
            kwargs[name] = _coerce(value, default, where)
    return cls(**kwargs)


def _coerce(value, default, where):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate(cfg: RunConfig) -> RunConfig:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.experiment in EXPERIMENTS, f"experiment must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    need(cfg.trials >= 1, "trials must be >= 1")
    need(cfg.threads >= 1, "threads must be >= 1")
    need(cfg.seed >= 0, "seed must be a non-negative integer")
    g = cfg.grid
    need(g.n >= 32 and g.n & (g.n - 1) == 0, f"grid.n must be a power of two >= 32, got {g.n}")
    need(g.waist > 0 and g.wavelength > 0, "grid.waist and grid.wavelength must be positive")
    need(0 < g.aperture_waists < g.extent_waists,
         "grid.aperture_waists must be positive and smaller than grid.extent_waists")
    c = cfg.channel
    need(min(c.before, c.cell, c.after) >= 0, "channel distances must be >= 0")
    t = cfg.turbulence
    need(t.d_over_r0 >= 0, "turbulence.d_over_r0 must be >= 0 (0 disables turbulence)")
    need(t.r0 is None or (_is_number(t.r0) and t.r0 > 0),
         f"turbulence.r0 must be a positive number of meters when given, got {t.r0!r}")
    need(t.greenwood >= 0, "turbulence.greenwood must be >= 0")
    a = cfg.ao
    need(0 < a.gain <= 1, f"ao.gain must be in (0, 1], got {a.gain}")
    need(0 < a.leak <= 1, f"ao.leak must be in (0, 1], got {a.leak}")
    need(0 < a.tau < 1, "ao.tau must be in (0, 1)")
    need(a.loop_rate > 0, "ao.loop_rate must be positive")
    need(a.iterations >= 0, "ao.iterations must be >= 0")
    cp = cfg.coupling
    need(cp.duration > 0 and 0 <= cp.t_on <= cp.duration, "coupling.t_on must lie within [0, duration]")
    need(cp.seeds >= 1, "coupling.seeds must be >= 1")
    need(cp.grid_n >= 32 and cp.grid_n & (cp.grid_n - 1) == 0, "coupling.grid_n must be a power of two >= 32")
    need(cfg.tomography.d in (2, 3, 4, 5), f"tomography.d must be 2, 3, 4 or 5, got {cfg.tomography.d}")
    q = cfg.qkd
    need(len(q.dims) > 0 and all(isinstance(d, int) and d >= 2 and d % 2 == 0 for d in q.dims),
         f"qkd.dims must be even integers >= 2, got {q.dims}")
    need(max(q.dims) <= 16, "qkd.dims above 16 are not supported")
    need(set(q.bases) <= {"logical", "ANG"} and q.bases, "qkd.bases must be drawn from ['logical', 'ANG']")
    z = cfg.zernike
    for name, values in (("zernike.sigma", z.sigma), ("zernike.settings", z.settings),
                         ("screens.r0_list", cfg.screens.r0_list)):
        need(all(_is_number(v) for v in values), f"{name} must be a list of numbers, got {values}")
    need(1 <= z.jmax <= 66, "zernike.jmax must be in [1, 66]")
    need(z.source in ("fft", "sigma"), "zernike.source must be 'fft' or 'sigma'")
    need(z.source != "sigma" or (z.sigma and all(s >= 0 for s in z.sigma)),
         "zernike.source 'sigma' needs a non-empty list of non-negative zernike.sigma values")
    need(len(z.sigma) <= z.jmax, "zernike.sigma is longer than zernike.jmax")
    need(all(s >= 0 for s in z.settings), "zernike.settings must be >= 0")
    need(cfg.fried.frames >= 100, "fried.frames must be >= 100")
    need(all(r > 0 for r in cfg.screens.r0_list), "screens.r0_list entries must be positive")
    return cfg


def from_dict(data: dict) -> RunConfig:
    return validate(_build(RunConfig, data, ""))


def load(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML ({exc})") from exc
    return from_dict(data or {})
