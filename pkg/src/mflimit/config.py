"""Plain-text key=value configuration files and the shipped presets.

Lines are ``key = value``; ``#`` starts a comment.  Unknown keys are an
error so that typos do not silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .lattice import LatticeConfig
from .potentials import PotentialSpec

LATTICE_KEYS = {"dim": int, "length": float, "sites": int, "tracer_sites": int, "tracer_count": int}
POTENTIAL_KEYS = {
    "w.kind": ("kind_w", str), "w.amplitude": ("amplitude_w", float), "w.width": ("width_w", float),
    "v.kind": ("kind_v", str), "v.amplitude": ("amplitude_v", float), "v.lambda": ("lam", float),
    "v.epsilon": ("epsilon", float), "v.offset": ("v_offset", float),
}
RUN_KEYS = {
    "phi.kind": str, "phi.center": float, "phi.width": float, "phi.momentum": float, "phi.mode": int,
    "X0": float, "V0": float, "u.width": float, "n_max": int, "N": float, "tracer_p": str, "symbol": str,
}


def parse_keyvalue(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


@dataclass(frozen=True)
class RunConfig:
    """Lattice, kernels, and the initial data shared by both dynamics."""

    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    potentials: PotentialSpec = field(default_factory=PotentialSpec)
    phi_kind: str = "gaussian"
    phi_center: float = 6.4
    phi_width: float = 3.0
    phi_momentum: float = 0.0
    phi_mode: int = 1
    X0: float = 5.0
    V0: float = 0.0
    u_width: float = 1.0
    n_max: int = 16
    N: float = 1.0
    tracer_p: str = "spectral"
    symbol: str = "fd"

    def phi0(self) -> np.ndarray:
        """Initial condensate, normalized in the discrete L2 norm."""
        cfg = self.lattice
        x = cfg.points()
        if self.phi_kind == "zero":
            return np.zeros(cfg.modes, dtype=complex)
        if self.phi_kind == "gaussian":
            d = cfg.minimage(x - self.phi_center)
            f = np.exp(-0.5 * np.sum(d**2, axis=1) / self.phi_width**2) * np.exp(1j * self.phi_momentum * d[:, 0])
        elif self.phi_kind == "plane_wave":
            f = np.exp(2j * np.pi * self.phi_mode * x[:, 0] / cfg.length)
        else:
            raise ValueError(f"unknown phi.kind {self.phi_kind!r}")
        return f / np.sqrt(cfg.cell * np.sum(np.abs(f) ** 2))

    def X0_array(self) -> np.ndarray:
        return np.full((self.lattice.tracer_count, self.lattice.dim), self.X0)

    def V0_array(self) -> np.ndarray:
        return np.full((self.lattice.tracer_count, self.lattice.dim), self.V0)

    def to_text(self) -> str:
        lines = [f"{k} = {getattr(self.lattice, k)}" for k in LATTICE_KEYS]
        for key, (attr, _) in POTENTIAL_KEYS.items():
            lines.append(f"{key} = {getattr(self.potentials, attr)}")
        for key in RUN_KEYS:
            lines.append(f"{key} = {getattr(self, key.replace('.', '_'))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def config_from_mapping(kv: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    lat, pot, run = {}, {}, {}
    for key, val in kv.items():
        if key in LATTICE_KEYS:
            lat[key] = LATTICE_KEYS[key](val)
        elif key in POTENTIAL_KEYS:
            attr, typ = POTENTIAL_KEYS[key]
            pot[attr] = typ(val)
        elif key in RUN_KEYS:
            run[key.replace(".", "_")] = RUN_KEYS[key](val)
        else:
            raise KeyError(f"unknown config key {key!r}")
    return replace(base, lattice=replace(base.lattice, **lat), potentials=replace(base.potentials, **pot), **run)


def load_config(path: str | Path) -> RunConfig:
    text = Path(path).read_text()
    kv = parse_keyvalue(text)
    preset = kv.pop("preset", None)
    return config_from_mapping(kv, PRESETS[preset]() if preset else None)


# --- presets -------------------------------------------------------------------

def standard_micro() -> RunConfig:
    """Desk-scale microscopic config used by the convergence sweep."""
    return RunConfig(
        lattice=LatticeConfig(dim=1, length=12.8, sites=4, tracer_sites=80, tracer_count=1),
        potentials=PotentialSpec(kind_w="gaussian", amplitude_w=1.0, width_w=1.5,
                                 kind_v="regularized_coulomb", lam=1.0, epsilon=0.5),
        phi_center=6.4, phi_width=3.0, X0=5.0, V0=0.0, u_width=1.0, n_max=16,
    )


def standard_meanfield() -> RunConfig:
    """Same physics as the micro preset on a finer boson lattice."""
    base = standard_micro()
    return replace(base, lattice=replace(base.lattice, sites=64), phi_momentum=0.5, V0=0.2)


def tiny() -> RunConfig:
    """K_X=4, four boson modes, m=1: small enough for oracle comparisons."""
    return RunConfig(
        lattice=LatticeConfig(dim=1, length=12.8, sites=4, tracer_sites=4, tracer_count=1),
        potentials=PotentialSpec(kind_w="gaussian", amplitude_w=1.0, width_w=1.5,
                                 kind_v="regularized_coulomb", lam=1.0, epsilon=0.5),
        phi_center=6.4, phi_width=3.0, X0=5.0, V0=0.0, n_max=20,
    )


def small() -> RunConfig:
    """Quick end-to-end preset: packets fit for N <= 2, a few seconds per run."""
    base = standard_micro()
    return replace(base, lattice=replace(base.lattice, tracer_sites=56), n_max=11)


PRESETS = {"standard": standard_micro, "standard_meanfield": standard_meanfield, "tiny": tiny, "small": small}


# --- experiment plans ----------------------------------------------------------

PLAN_KEYS = {"config", "N_list", "T", "dt", "dt_report", "seed", "toggles", "M", "workers"}
TOGGLES = ("convergence", "fluctuation", "gronwall", "oracle")


@dataclass(frozen=True)
class ExperimentPlan:
    config: str = "standard"
    N_list: tuple[float, ...] = (1.0, 2.0, 4.0)
    T: float = 0.5
    dt: float = 1e-3
    dt_report: float = 0.05
    seed: int = 0
    toggles: tuple[str, ...] = ("convergence",)
    M: int = 8
    workers: int = 1

    def __post_init__(self):
        bad = [t for t in self.toggles if t not in TOGGLES]
        if bad:
            raise ValueError(f"unknown toggles {bad}; choose from {TOGGLES}")
        if not self.N_list or min(self.N_list) <= 0:
            raise ValueError("N_list must be non-empty and positive")

    def run_config(self, base_dir: Path | None = None) -> RunConfig:
        if self.config in PRESETS:
            return PRESETS[self.config]()
        p = Path(self.config)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return load_config(p)


def load_plan(path: str | Path) -> ExperimentPlan:
    kv = parse_keyvalue(Path(path).read_text())
    unknown = set(kv) - PLAN_KEYS
    if unknown:
        raise KeyError(f"unknown plan keys {sorted(unknown)}")
    args: dict = {}
    for f in fields(ExperimentPlan):
        if f.name not in kv:
            continue
        raw = kv[f.name]
        if f.name == "N_list":
            args[f.name] = tuple(float(s) for s in raw.replace(",", " ").split())
        elif f.name == "toggles":
            args[f.name] = tuple(s for s in raw.replace(",", " ").split())
        elif f.name in ("seed", "M", "workers"):
            args[f.name] = int(raw)
        elif f.name == "config":
            args[f.name] = raw
        else:
            args[f.name] = float(raw)
    return ExperimentPlan(**args)
