"""INI-style experiment configuration."""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .solver import InitialDataSpec, geometric_times


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    n: int
    L: float
    N: int
    initial: InitialDataSpec
    dt: float
    t_end: float
    dense_until: float
    dense_step: float
    geometric_from: float
    geometric_count: int
    order: int = 2
    with_logs: bool = True
    heat_mode: str = "spectral"
    profile_L: float = 16.0
    profile_N: int = 128
    j_nodes: int = 32
    qs: tuple = (2.0,)
    window: tuple = (10.0, 100.0)
    crosscheck_t: float = 4.0
    output: str = "run"
    golden: str = ""
    seed: int = 0
    source_text: str = field(default="", repr=False)

    def snapshot_times(self) -> list[float]:
        k = int(round(self.dense_until / self.dense_step))
        dense = [round(i * self.dense_step, 12) for i in range(k + 1)]
        geo = geometric_times(self.geometric_from, self.t_end, self.geometric_count, self.dt)
        return sorted(t for t in set(dense) | set(geo) | {self.t_end} if t <= self.t_end)

    @property
    def digest(self) -> str:
        return config_hash(self.source_text)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # n and N are different keys
    return cp


def config_hash(text: str) -> str:
    """Hash of the normalized key=value content, insensitive to comments and spacing."""
    cp = _parser()
    cp.read_string(text)
    canon = []
    for sec in sorted(cp.sections()):
        for key in sorted(cp[sec]):
            canon.append(f"{sec}.{key}={cp[sec][key].strip()}")
    return hashlib.sha256("\n".join(canon).encode()).hexdigest()[:16]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) if x.strip() != "inf" else math.inf for x in text.split(","))


def parse_config(text: str, base: Path | None = None, golden_base: Path | None = None) -> ExperimentConfig:
    """Relative output paths resolve against `base`, a relative golden file
    against `golden_base` (the config's own directory when loaded from disk)."""
    cp = _parser()
    try:
        cp.read_string(text)
        g, ini, tm = cp["grid"], cp["initial"], cp["time"]
        ex = cp["expansion"] if cp.has_section("expansion") else {}
        vf = cp["verify"] if cp.has_section("verify") else {}
        out = cp["output"] if cp.has_section("output") else {}
        center = _floats(ini.get("center", "0,0"))
        cfg = ExperimentConfig(
            n=g.getint("n"),
            L=g.getfloat("L"),
            N=g.getint("N"),
            initial=InitialDataSpec(ini.getfloat("amplitude"), ini.getfloat("sigma"), center),
            dt=tm.getfloat("dt"),
            t_end=tm.getfloat("t_end"),
            dense_until=tm.getfloat("dense_until", 4.0),
            dense_step=tm.getfloat("dense_step", 0.125),
            geometric_from=tm.getfloat("geometric_from", 5.0),
            geometric_count=tm.getint("geometric_count", 20),
            order=int(ex.get("order", 2)),
            with_logs=str(ex.get("with_logs", "true")).lower() in ("1", "true", "yes", "on"),
            heat_mode=ex.get("heat", "spectral"),
            profile_L=float(ex.get("profile_L", 16.0)),
            profile_N=int(ex.get("profile_N", 128)),
            j_nodes=int(ex.get("j_nodes", 32)),
            qs=_floats(vf.get("q", "2")),
            window=_floats(vf.get("window", "10,100")),
            crosscheck_t=float(vf.get("crosscheck_t", 4.0)),
            output=out.get("directory", "run"),
            golden=out.get("golden", ""),
            seed=int(out.get("seed", 0)),
            source_text=text,
        )
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if base is not None:
        if not Path(cfg.output).is_absolute():
            cfg.output = str(base / cfg.output)
    gb = golden_base or base
    if gb is not None and cfg.golden and not Path(cfg.golden).is_absolute():
        cfg.golden = str(gb / cfg.golden)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.n != 2:
        raise ConfigError("the simulator is planar: n must be 2")
    if cfg.N < 8 or cfg.N % 2:
        raise ConfigError("N must be even and at least 8")
    if not (cfg.L > 0 and cfg.dt > 0 and cfg.t_end > 0):
        raise ConfigError("L, dt and t_end must be positive")
    if math.sqrt(cfg.t_end) > cfg.L / 6.0 * (1 + 1e-12):
        raise ConfigError(
            f"containment violated: sqrt(t_end) = {math.sqrt(cfg.t_end):.4g} exceeds L/6 = {cfg.L / 6:.4g}"
        )
    steps = cfg.t_end / cfg.dt
    if abs(steps - round(steps)) > 1e-9 * steps:
        raise ConfigError("t_end must be a multiple of dt")
    ratio = cfg.dense_step / cfg.dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigError("dense_step must be a multiple of dt")
    if not 0 <= cfg.order <= 2 * cfg.n:
        raise ConfigError(f"expansion order must lie in [0, {2 * cfg.n}]")
    if cfg.heat_mode not in ("hermite", "spectral"):
        raise ConfigError("heat must be hermite or spectral")
    if len(cfg.window) != 2 or not 0 < cfg.window[0] < cfg.window[1] <= cfg.t_end * (1 + 1e-12):
        raise ConfigError("window must be two increasing times inside (0, t_end]")
    in_window = [t for t in cfg.snapshot_times() if cfg.window[0] <= t <= cfg.window[1]]
    if len(in_window) < 6:
        raise ConfigError(f"window {cfg.window} holds {len(in_window)} snapshots, decay fits need >= 6")
    if any(not (q >= 1) for q in cfg.qs):
        raise ConfigError("q values must be >= 1")
    if not 0 < cfg.crosscheck_t <= cfg.dense_until:
        raise ConfigError("crosscheck_t must lie in the densely sampled range")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, base=Path.cwd(), golden_base=path.resolve().parent)
