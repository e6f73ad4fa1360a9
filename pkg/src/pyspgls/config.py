from __future__ import annotations

import configparser
import logging
import os
from pathlib import Path
from typing import TypedDict

import dotenv
from appdirs import user_cache_dir, user_config_dir

import pandas as pd

_log = logging.getLogger(__name__)
dotenv.load_dotenv()


DEFAULT_CONFIG = """
[output]
## Reports written by the spgls command line go here unless --out is given.
## The SPGLS_OUTPUT_DIR environment variable takes over when this is empty.
# path =

[cache]
## Generated synthetic datasets are cached as parquet files.
## Default settings:
## - $HOME/.cache/spgls (Linux)
## - $HOME/Library/Caches/spgls (MacOS) (unless XDG_CONFIG_HOME is set)
## - C:\\Users\\<username>\\AppData\\Local\\spgls\\Cache (Windows)
##
# path =

## Cached datasets older than this are removed when the library is imported.
purge = 30 days

[oracle]
## Largest n + 1 for which the dense eigendecomposition oracle may run.
size_cap = 500

[krylov]
tol = 1e-10
reorth = full

[rtr]
grad_tol = 1e-10
starts = 3
"""

if (xdg_config := os.environ.get("XDG_CONFIG_HOME")) is not None:
    spgls_config_dir = Path(xdg_config) / "pyspgls"
else:
    spgls_config_dir = Path(user_config_dir("pyspgls"))
spgls_config = configparser.ConfigParser()

if (spgls_config_file := spgls_config_dir / "settings.conf").exists():
    spgls_config.read(spgls_config_file.as_posix())
else:
    try:
        spgls_config_dir.mkdir(parents=True, exist_ok=True)
        spgls_config_file.write_text(DEFAULT_CONFIG)
    except OSError:  # read-only home, e.g. in CI sandboxes
        _log.warning(f"Could not write default config to {spgls_config_file}")
    spgls_config.read_string(DEFAULT_CONFIG)


def purge_cache(cache_path: Path) -> None:
    if os.environ.get("SPGLS_CACHE_NO_EXPIRE"):
        return

    cache_purge = "30 days"
    if purge := spgls_config.get("cache", "purge", fallback=None):
        if purge.strip() != "":
            cache_purge = purge

    expiration = pd.Timestamp("now") - pd.Timedelta(cache_purge)

    for cache_file in cache_path.glob("*.parquet"):
        ctime = cache_file.stat().st_ctime
        if ctime < expiration.timestamp():
            _log.warning(f"Removing {cache_file} created on {ctime}")
            cache_file.unlink()


class Resolution(TypedDict, total=False):
    category: str
    name: str
    environment_variable: str


NAME_RESOLUTION: dict[str, Resolution] = {
    "output_dir": dict(
        category="output",
        name="path",
        environment_variable="SPGLS_OUTPUT_DIR",
    ),
    "cache_dir": dict(
        category="cache",
        name="path",
        environment_variable="SPGLS_CACHE",
    ),
    "size_cap": dict(category="oracle", name="size_cap"),
    "krylov_tol": dict(category="krylov", name="tol"),
    "krylov_reorth": dict(category="krylov", name="reorth"),
    "rtr_grad_tol": dict(category="rtr", name="grad_tol"),
    "rtr_starts": dict(category="rtr", name="starts"),
}

DEFAULTS: dict[str, str] = {
    "output_dir": ".",
    "size_cap": "500",
    "krylov_tol": "1e-10",
    "krylov_reorth": "full",
    "rtr_grad_tol": "1e-10",
    "rtr_starts": "3",
}

__all__ = list(NAME_RESOLUTION.keys())


def get_config(
    category: str,
    name: str,
    environment_variable: None | str = None,
) -> None | str:
    if value := spgls_config.get(category, name, fallback=None):
        if value.strip() != "":
            return value.strip()

    if environment_variable is not None:
        return os.environ.get(environment_variable)

    return None


def get_float(name: str) -> float:
    value = get_config(**NAME_RESOLUTION[name])
    return float(value if value is not None else DEFAULTS[name])


def get_int(name: str) -> int:
    value = get_config(**NAME_RESOLUTION[name])
    return int(value if value is not None else DEFAULTS[name])


cache_dir = get_config(**NAME_RESOLUTION["cache_dir"])
if cache_dir is None:
    cache_dir = user_cache_dir("spgls")
cache_path = Path(cache_dir)
try:
    cache_path.mkdir(parents=True, exist_ok=True)
    purge_cache(cache_path)
except OSError:
    _log.warning(f"Cache folder {cache_path} is not writable")


def __getattr__(name: str) -> None | str:
    # Pick in order:
    # 1. pyspgls -> settings.conf
    # 2. environment variables
    # 3. built-in defaults

    if name in __all__:
        if value := get_config(**NAME_RESOLUTION[name]):
            return value
        return DEFAULTS.get(name)

    raise AttributeError(name)
