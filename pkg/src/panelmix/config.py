"""Run configuration: one structured text file, one master seed.

The TOML file mirrors the hyperparameter inventory; missing keys fall back
to the defaults below, and command-line flags override file values.  Every
stochastic procedure in a run derives its randomness from [run].seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


@dataclass
class RunConfig:
    # model
    global_k: int = 8
    local_k: int | None = None  # None: min(4, max(2, N_b // 5))
    ewm_half_life: float = 12.0
    ridge_lambda: float = 1.0
    global_ridge_lambda: float | None = None  # None: global_k
    ridge_alpha_multipliers: tuple[float, ...] = (0.1, 1.0, 10.0)
    # calendar
    train_years: int = 5
    test_years: tuple[int, ...] = tuple(range(2015, 2025))
    # inference
    bootstrap_resamples: int = 10000
    mbb_block_lengths: tuple[int, ...] = (2, 3)
    hac_bandwidths: tuple[int, ...] = (1, 2, 3)
    level: float = 0.95
    # validation
    placebo_permutations: int = 1000
    # run
    seed: int = 0

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


_SECTIONS = {
    "model": ("global_k", "local_k", "ewm_half_life", "ridge_lambda",
              "global_ridge_lambda", "ridge_alpha_multipliers"),
    "calendar": ("train_years", "test_years"),
    "inference": ("bootstrap_resamples", "mbb_block_lengths",
                  "hac_bandwidths", "level"),
    "validation": ("placebo_permutations",),
    "run": ("seed",),
}


def parse_years(value) -> tuple[int, ...]:
    """Years as a list, or a '2015..2024' range string."""
    if isinstance(value, str):
        if ".." in value:
            a, b = value.split("..")
            return tuple(range(int(a), int(b) + 1))
        return (int(value),)
    return tuple(int(v) for v in value)


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValueError(f"config parse error in {path}: {exc}") from exc
    for section, keys in _SECTIONS.items():
        body = raw.get(section, {})
        for key in body:
            if key not in keys:
                raise ValueError(f"config parse error: unknown key [{section}].{key}")
        for key in keys:
            if key in body:
                value = body[key]
                if key == "test_years":
                    value = parse_years(value)
                elif key in ("ridge_alpha_multipliers", "mbb_block_lengths",
                             "hac_bandwidths"):
                    value = tuple(value)
                elif key in ("local_k", "global_ridge_lambda") and value in (0, 0.0):
                    value = None
                setattr(cfg, key, value)
    return cfg
