"""Bundled example datasets (see README.md in this directory for sources)."""

from __future__ import annotations

from importlib.resources import as_file, files

from ..data import RawDataset, read_csv

BUILTIN = ("iris", "galaxies", "mortality")


def _read(name, **kwargs) -> RawDataset:
    with as_file(files(__name__) / f"{name}.csv") as path:
        return read_csv(path, **kwargs)


def load_iris(columns=None) -> RawDataset:
    """150 x 4 iris measurements (species label dropped)."""
    return _read("iris", columns=columns)


def load_galaxies() -> RawDataset:
    """82 galaxy velocities in 1000 km/s."""
    return _read("galaxies")


def load_mortality() -> RawDataset:
    """Daily death counts, expanded to one row per day (n = 1096)."""
    return _read("mortality", columns=["deaths"], count_column="days", integer=True)


def load(name: str) -> RawDataset:
    loaders = {"iris": load_iris, "galaxies": load_galaxies, "mortality": load_mortality}
    if name not in loaders:
        raise KeyError(f"unknown dataset {name!r}; choose from {', '.join(BUILTIN)}")
    return loaders[name]()


def csv_path(name: str):
    """Context manager yielding a filesystem path to a bundled CSV."""
    return as_file(files(__name__) / f"{name}.csv")
