"""Dataset CSV files and TOML configuration.

File layout of a dataset directory:

``gyro.csv``   t, u                                  (s, rad/s)
``mag.csv``    t, m0x, m0y, m0z, ..., m3x, m3y, m3z  (s, uT) raw array readings
               or t, Bx, By, Bz, gxx, gxy, gxz, gyy, gyz  (s, uT, uT/m) preprocessed
``truth.csv``  t, x, y, theta                        (s, m, m, rad), optional
``wheel.csv``  t, v                                  (s, m/s), optional
``dataset.toml`` array baseline and simulation provenance, optional

Floats are written with 17 significant digits so a write/read cycle is
exact.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

from .errors import ConfigError, DataError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

CONFIG_ENV = "MAGNAV_CONFIG_DIR"

GYRO_COLS = ("t", "u")
RAW_MAG_COLS = ("t",) + tuple(f"m{s}{a}" for s in range(4) for a in "xyz")
PRE_MAG_COLS = ("t", "Bx", "By", "Bz", "gxx", "gxy", "gxz", "gyy", "gyz")
TRUTH_COLS = ("t", "x", "y", "theta")
WHEEL_COLS = ("t", "v")
ESTIMATE_COLS = ("t", "x", "y", "theta")
COV_COLS = ("t", "c_pp", "c_px", "c_py", "c_xx", "c_xy", "c_yy")
LOOP_COLS = ("i", "j", "score", "statistic", "accepted")


# --- CSV ---------------------------------------------------------------------


def write_csv(path, columns, data):
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ValueError(f"{path}: expected {len(columns)} columns, got shape {data.shape}")
    np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt="%.17g")


def read_csv(path, columns=None):
    """Return (header, data). Checks the header when ``columns`` is given."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with path.open() as fh:
        header = tuple(h.strip() for h in fh.readline().strip().split(","))
    if columns is not None and header != tuple(columns):
        raise DataError(f"{path}: expected columns {','.join(columns)}, got {','.join(header)}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if data.size == 0:
        data = np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise DataError(f"{path}: rows have {data.shape[1]} fields, header has {len(header)}")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite values")
    return header, data


def _check_increasing(t, name):
    if t.size and np.any(np.diff(t) <= 0):
        k = int(np.argmax(np.diff(t) <= 0)) + 1
        raise DataError(f"{name}: timestamps not strictly increasing at row {k + 1}")


@dataclass
class Dataset:
    """Sensor streams of one run. Either ``readings`` or (``B``, ``g``) is set."""

    t_gyro: np.ndarray
    u: np.ndarray
    t_mag: np.ndarray
    readings: np.ndarray | None = None  # (N, 4, 3)
    B: np.ndarray | None = None  # (N, 3)
    g: np.ndarray | None = None  # (N, 5)
    truth: np.ndarray | None = None  # (M, 4): t, x, y, theta
    wheel: np.ndarray | None = None  # (L, 2): t, v
    baseline: float | None = None
    meta: dict | None = None

    def __post_init__(self):
        if self.readings is None and (self.B is None or self.g is None):
            raise DataError("dataset needs raw readings or preprocessed B and g")
        _check_increasing(np.asarray(self.t_gyro), "gyro")
        _check_increasing(np.asarray(self.t_mag), "mag")
        if self.truth is not None:
            _check_increasing(np.asarray(self.truth)[:, 0], "truth")
        if self.wheel is not None:
            _check_increasing(np.asarray(self.wheel)[:, 0], "wheel")

    @property
    def preprocessed(self) -> bool:
        return self.readings is None

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_csv(d / "gyro.csv", GYRO_COLS, np.column_stack([self.t_gyro, self.u]))
        if self.readings is not None:
            mag = np.column_stack([self.t_mag, self.readings.reshape(-1, 12)])
            write_csv(d / "mag.csv", RAW_MAG_COLS, mag)
        else:
            write_csv(d / "mag.csv", PRE_MAG_COLS, np.column_stack([self.t_mag, self.B, self.g]))
        if self.truth is not None:
            write_csv(d / "truth.csv", TRUTH_COLS, self.truth)
        if self.wheel is not None:
            write_csv(d / "wheel.csv", WHEEL_COLS, self.wheel)
        meta = {"array": {}, **(self.meta or {})}
        if self.baseline is not None:
            meta["array"] = {"baseline": float(self.baseline)}
        (d / "dataset.toml").write_text(tomli_w.dumps(_plain(meta)))

    @classmethod
    def read(cls, directory) -> "Dataset":
        d = Path(directory)
        if not d.is_dir():
            raise DataError(f"{d}: dataset directory not found")
        _, gyro = read_csv(d / "gyro.csv", GYRO_COLS)
        header, mag = read_csv(d / "mag.csv")
        kw = {}
        if header == RAW_MAG_COLS:
            kw["readings"] = mag[:, 1:].reshape(-1, 4, 3)
        elif header == PRE_MAG_COLS:
            kw["B"], kw["g"] = mag[:, 1:4], mag[:, 4:9]
        else:
            raise DataError(f"{d / 'mag.csv'}: unrecognised columns {','.join(header)}")
        truth = read_csv(d / "truth.csv", TRUTH_COLS)[1] if (d / "truth.csv").exists() else None
        wheel = read_csv(d / "wheel.csv", WHEEL_COLS)[1] if (d / "wheel.csv").exists() else None
        meta = load_toml(d / "dataset.toml") if (d / "dataset.toml").exists() else {}
        baseline = meta.get("array", {}).get("baseline")
        return cls(gyro[:, 0], gyro[:, 1], mag[:, 0], truth=truth, wheel=wheel,
                   baseline=baseline, meta=meta, **kw)


def write_estimate(directory, t, theta, r, covariances=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_csv(d / "estimate.csv", ESTIMATE_COLS, np.column_stack([t, r, theta]))
    if covariances is not None:
        P = np.asarray(covariances)
        cols = [P[:, 0, 0], P[:, 0, 1], P[:, 0, 2], P[:, 1, 1], P[:, 1, 2], P[:, 2, 2]]
        write_csv(d / "covariances.csv", COV_COLS, np.column_stack([t] + cols))


def read_estimate(path):
    """Return (t, theta, r) from an estimate CSV."""
    _, e = read_csv(path, ESTIMATE_COLS)
    return e[:, 0], e[:, 3], e[:, 1:3]


def read_covariances(path):
    """Return (t, P) with P of shape (K, 3, 3)."""
    _, c = read_csv(path, COV_COLS)
    P = np.empty((c.shape[0], 3, 3))
    pp, px, py, xx, xy, yy = c[:, 1:].T
    P[:, 0, 0], P[:, 0, 1], P[:, 0, 2] = pp, px, py
    P[:, 1, 0], P[:, 1, 1], P[:, 1, 2] = px, xx, xy
    P[:, 2, 0], P[:, 2, 1], P[:, 2, 2] = py, xy, yy
    return c[:, 0], P


def write_loops(path, candidates):
    rows = [[c.i, c.j, c.score, c.statistic, float(c.accepted)] for c in candidates]
    write_csv(path, LOOP_COLS, np.array(rows).reshape(-1, len(LOOP_COLS)))


def write_matrix(path, D):
    np.savetxt(path, np.asarray(D), delimiter=",", fmt="%.17g")


# --- TOML ---------------------------------------------------------------------


def load_toml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        if "at end of document" in msg:
            # the decoder only gives "(at line L, column C)" for mid-file errors
            msg = msg.replace("at end of document", f"at end of document, line {text.count(chr(10)) + 1}")
        raise ConfigError(f"{path}: {msg}") from exc


def config_dirs():
    dirs = []
    env = os.environ.get(CONFIG_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(Path(str(resources.files("magnav") / "configs")))
    return dirs


def resolve_config(name) -> Path:
    """A path as given, else ``name`` (or ``name.toml``) in the config dirs."""
    p = Path(name)
    if p.is_file():
        return p
    for d in config_dirs():
        for cand in (d / name, d / f"{name}.toml"):
            if cand.is_file():
                return cand
    raise ConfigError(f"config {name!r} not found (searched {', '.join(map(str, config_dirs()))})")


def load_config(name) -> dict:
    """Load a config; an ``include = [...]`` list is merged in first."""
    path = resolve_config(name)
    cfg = load_toml(path)
    merged: dict = {}
    for inc in cfg.pop("include", []):
        sub = path.parent / inc
        _merge(merged, load_config(sub if sub.is_file() else inc))
    _merge(merged, cfg)
    return merged


def _merge(base: dict, new: dict):
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def _plain(obj):
    """Convert numpy scalars/arrays so tomli_w can serialize them."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
