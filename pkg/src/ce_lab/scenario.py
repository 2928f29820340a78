"""Plain-text key=value scenario files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


def parse_complex(text: str) -> complex:
    """'re,im' or a bare real."""
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) == 1:
        return complex(float(parts[0]), 0.0)
    if len(parts) == 2:
        return complex(float(parts[0]), float(parts[1]))
    raise ValueError(f"cannot read a complex number from {text!r}")


@dataclass
class Scenario:
    name: str = "unnamed"
    c0: complex = complex(-2.0, 0.0)
    d: int = 2
    epsilon: float = 1e-8
    Delta: float = 9.0
    DeltaPrime: float = 6.0
    beta: float = 0.01
    epsilon1: float = 0.05
    kappa_prime: float | None = None
    C_tilde: float = 0.05
    C1: float = 1.1
    alpha: float | None = None
    gamma_factor: float = 0.9
    n_max: int = 10000
    depth_limit: int = 48
    sample_grid: int = 0
    density_grid: int = 64
    n_seg: int = 100
    scan_min_length: int = 0
    seed: int = 0

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = [v.real, v.imag] if isinstance(v, complex) else v
        return out

    def with_overrides(self, pairs: dict[str, str]) -> "Scenario":
        new = dataclasses.replace(self)
        for k, v in pairs.items():
            _assign(new, k, v)
        return new


_TYPES = {f.name: f.type for f in dataclasses.fields(Scenario)}


def _assign(sc: Scenario, key: str, value: str) -> None:
    if key not in _TYPES:
        raise ValueError(f"unknown scenario key {key!r}")
    t = _TYPES[key]
    value = value.strip()
    if "complex" in t:
        v = parse_complex(value)
    elif value.lower() in ("", "none", "default") and "None" in t:
        v = None
    elif t.startswith("int"):
        v = int(value)
    elif t.startswith("float"):
        v = float(value)
    else:
        v = value
    setattr(sc, key, v)


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        _assign(sc, k.strip(), v)
    return sc


def load_scenario(name_or_path: str) -> Scenario:
    """A path to a .cfg file, or the name of a bundled scenario."""
    p = Path(name_or_path)
    if p.is_file():
        return parse_scenario(p.read_text())
    bundled = resources.files("ce_lab") / "scenarios" / f"{name_or_path}.cfg"
    if bundled.is_file():
        return parse_scenario(bundled.read_text())
    raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r}")
