"""Datasets, costs, standardization and composed maps shared by every solver."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"


class CotxError(Exception):
    """Base class for errors raised by this package."""


class DataError(CotxError, ValueError):
    """Bad input data: missing files or columns, malformed cells, shape mismatches."""


class DimensionError(DataError):
    pass


class NumericalError(CotxError, ArithmeticError):
    """A computation produced non-finite or divergent values."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class DivergenceError(NumericalError):
    """An optimization left its admissible range (objective blew up)."""


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d array, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class ConditionedDataset:
    """n samples of a response ``points`` (n x d_x) with covariates (n x d_z)."""

    points: np.ndarray
    covariates: np.ndarray | None = None
    column_names: tuple[str, ...] = ()
    covariate_kinds: tuple[str, ...] = ()

    def __post_init__(self):
        pts = _as_matrix(self.points, "points")
        n = pts.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if self.covariates is None:
            cov = np.zeros((n, 0))
        else:
            cov = np.asarray(self.covariates, dtype=np.float64)
            if cov.ndim == 1:
                cov = cov.reshape(n, -1) if cov.size else np.zeros((n, 0))
            cov = _as_matrix(cov, "covariates")
        if cov.shape[0] != n:
            raise DimensionError(f"points have {n} rows but covariates have {cov.shape[0]}")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(cov))):
            raise DataError("dataset contains NaN or infinite entries")
        dx, dz = pts.shape[1], cov.shape[1]

        names = tuple(self.column_names)
        if not names:
            names = tuple(f"x{k + 1}" for k in range(dx)) + tuple(f"z{k + 1}" for k in range(dz))
        if len(names) != dx + dz:
            raise DimensionError(f"expected {dx + dz} column names, got {len(names)}")
        kinds = tuple(self.covariate_kinds) or (CONTINUOUS,) * dz
        if len(kinds) != dz:
            raise DimensionError(f"expected {dz} covariate kinds, got {len(kinds)}")
        for k, kind in enumerate(kinds):
            if kind not in (CONTINUOUS, BINARY):
                raise DataError(f"unknown covariate kind {kind!r}")
            if kind == BINARY and not np.all((cov[:, k] == 0) | (cov[:, k] == 1)):
                raise DataError(f"binary covariate {names[dx + k]!r} has values outside {{0, 1}}")

        pts = pts.copy()
        cov = cov.copy()
        pts.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "covariate_kinds", kinds)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.points.shape[1], self.covariates.shape[1]

    @property
    def response_names(self) -> tuple[str, ...]:
        return self.column_names[: self.dims[0]]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return self.column_names[self.dims[0]:]

    def with_points(self, points) -> "ConditionedDataset":
        return ConditionedDataset(points, self.covariates, self.column_names, self.covariate_kinds)

    def select_covariates(self, columns: Sequence[int | str]) -> "ConditionedDataset":
        idx = [self.covariate_names.index(c) if isinstance(c, str) else int(c) for c in columns]
        names = self.response_names + tuple(self.covariate_names[i] for i in idx)
        return ConditionedDataset(self.points, self.covariates[:, idx], names,
                                  tuple(self.covariate_kinds[i] for i in idx))

    def drop_covariates(self) -> "ConditionedDataset":
        return self.select_covariates([])

    def joint(self) -> np.ndarray:
        """Rows of ``[points, covariates]``."""
        return np.hstack([self.points, self.covariates])


# ---------------------------------------------------------------- CSV I/O


@dataclass(frozen=True)
class Schema:
    """Column roles for a CSV file. Binary flags are never guessed."""

    response: tuple[str, ...]
    covariates: tuple[str, ...] = ()
    binary: frozenset[str] = field(default_factory=frozenset)

    @classmethod
    def from_header(cls, header: Sequence[str], binary: Iterable[str] = ()) -> "Schema":
        """Default roles: columns whose name starts with ``z`` are covariates."""
        cov = tuple(h for h in header if h.startswith("z"))
        resp = tuple(h for h in header if not h.startswith("z"))
        return cls(resp, cov, frozenset(binary))


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    return header, body


def parse_columns(path, header, body, names) -> np.ndarray:
    out = np.empty((len(body), len(names)))
    for j, name in enumerate(names):
        if name not in header:
            raise DataError(f"{path}: missing column {name!r}")
        col = header.index(name)
        for i, row in enumerate(body):
            try:
                out[i, j] = float(row[col])
            except (ValueError, IndexError):
                cell = row[col] if col < len(row) else ""
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {i + 1}, column {name!r}") from None
    return out


def load_dataset(path, schema: Schema | None = None) -> ConditionedDataset:
    header, body = read_csv_table(path)
    if schema is None:
        schema = Schema.from_header(header)
    if not schema.response:
        raise DataError(f"{path}: schema names no response column")
    pts = parse_columns(path, header, body, schema.response)
    cov = parse_columns(path, header, body, schema.covariates)
    kinds = tuple(BINARY if c in schema.binary else CONTINUOUS for c in schema.covariates)
    for k, c in enumerate(schema.covariates):
        if kinds[k] == BINARY:
            bad = np.flatnonzero((cov[:, k] != 0) & (cov[:, k] != 1))
            if bad.size:
                raise DataError(f"{path}: binary column {c!r} has value {cov[bad[0], k]!r} at row {bad[0] + 1}")
    return ConditionedDataset(pts, cov, tuple(schema.response) + tuple(schema.covariates), kinds)


def fmt(v: float) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(v))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_dataset(path, data: ConditionedDataset) -> None:
    write_csv(path, data.column_names, data.joint().tolist())


# ---------------------------------------------------------------- standardization


@dataclass(frozen=True, eq=False)
class ScalingParams:
    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        shift = np.atleast_1d(np.asarray(self.shift, dtype=np.float64))
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        if shift.shape != scale.shape:
            raise DimensionError("shift and scale must have the same length")
        if np.any(~(scale > 0)):
            raise DataError("scale entries must be strictly positive")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls, d: int) -> "ScalingParams":
        return cls(np.zeros(d), np.ones(d))

    def apply(self, a: np.ndarray) -> np.ndarray:
        return (a - self.shift) / self.scale

    def invert(self, a: np.ndarray) -> np.ndarray:
        return a * self.scale + self.shift

    def to_json(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "ScalingParams":
        return cls(doc["shift"], doc["scale"])


def fit_scaling(a: np.ndarray, selected: Sequence[bool] | None = None) -> ScalingParams:
    """Mean/sd (n-denominator) scaling of the columns of ``a``; unselected columns get (0, 1)."""
    a = _as_matrix(a, "array")
    d = a.shape[1]
    sel = np.ones(d, bool) if selected is None else np.asarray(selected, bool)
    shift = np.zeros(d)
    scale = np.ones(d)
    for k in np.flatnonzero(sel):
        sd = a[:, k].std()
        if not sd > 0:
            raise DataError(f"column {k} has zero variance and cannot be standardized")
        shift[k] = a[:, k].mean()
        scale[k] = sd
    return ScalingParams(shift, scale)


def _selection(data: ConditionedDataset, columns) -> np.ndarray:
    dx, dz = data.dims
    if columns is None or columns == "continuous":
        return np.array([True] * dx + [k == CONTINUOUS for k in data.covariate_kinds])
    names = data.column_names
    sel = np.zeros(dx + dz, bool)
    for c in columns:
        sel[names.index(c) if isinstance(c, str) else int(c)] = True
    return sel


def standardize(data: ConditionedDataset, columns=None) -> tuple[ConditionedDataset, ScalingParams]:
    """Standardize the selected columns (default: responses and continuous covariates).

    Columns are indexed over ``[points, covariates]``. The returned parameters
    cover every column, with shift 0 and scale 1 on unselected ones.
    """
    dx = data.dims[0]
    params = fit_scaling(data.joint(), _selection(data, columns))
    joint = data.joint()
    sel = params.scale != 1.0
    sel |= params.shift != 0.0
    out = joint.copy()
    out[:, sel] = (joint[:, sel] - params.shift[sel]) / params.scale[sel]
    return ConditionedDataset(out[:, :dx], out[:, dx:], data.column_names, data.covariate_kinds), params


def unstandardize(data: ConditionedDataset, params: ScalingParams) -> ConditionedDataset:
    dx = data.dims[0]
    out = params.invert(data.joint())
    return ConditionedDataset(out[:, :dx], out[:, dx:], data.column_names, data.covariate_kinds)


# ---------------------------------------------------------------- cost


def quadratic_cost(u, v) -> float:
    """c(u, v) = 0.5 * ||u - v||^2."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if u.shape != v.shape:
        raise DimensionError(f"cost arguments differ in shape: {u.shape} vs {v.shape}")
    diff = u - v
    return 0.5 * float(diff @ diff)


def quadratic_cost_rows(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise quadratic cost for two n x d arrays."""
    diff = u - v
    return 0.5 * np.einsum("ij,ij->i", diff, diff)


# ---------------------------------------------------------------- composed maps


@dataclass
class ComposedMap:
    """Ordered composition of elementary maps acting on x, parametrized by z.

    ``scaling`` is an optional ``(x_scaling, z_scaling)`` pair: inputs are mapped
    into the fitting coordinates before the layers run, and outputs are mapped
    back with the x scaling.
    """

    input_dims: tuple[int, int]
    layers: list = field(default_factory=list)
    scaling: tuple[ScalingParams, ScalingParams] | None = None

    def __post_init__(self):
        self.input_dims = (int(self.input_dims[0]), int(self.input_dims[1]))
        for layer in self.layers:
            self._check_layer(layer)
        if self.scaling is not None:
            sx, sz = self.scaling
            if sx.shift.size != self.input_dims[0] or sz.shift.size != self.input_dims[1]:
                raise DimensionError("scaling parameters do not match map dimensions")

    def _check_layer(self, layer):
        if tuple(layer.dims) != self.input_dims:
            raise DimensionError(f"layer dims {layer.dims} differ from map dims {self.input_dims}")

    def append(self, layer) -> None:
        self._check_layer(layer)
        self.layers.append(layer)

    def __len__(self):
        return len(self.layers)

    def to_json(self) -> dict:
        scaling = None
        if self.scaling is not None:
            scaling = {"x": self.scaling[0].to_json(), "z": self.scaling[1].to_json()}
        return {
            "version": 1,
            "dims": list(self.input_dims),
            "scaling": scaling,
            "layers": [{"kind": layer.kind, "params": layer.to_params()} for layer in self.layers],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ComposedMap":
        if doc.get("version") != 1:
            raise DataError(f"unsupported map version {doc.get('version')!r}")
        dims = tuple(doc["dims"])
        kinds = _layer_kinds()
        layers = []
        for entry in doc["layers"]:
            kind = entry.get("kind")
            if kind not in kinds:
                raise DataError(f"unknown layer kind {kind!r}")
            layers.append(kinds[kind].from_params(entry["params"], dims))
        scaling = doc.get("scaling")
        if scaling is not None:
            scaling = (ScalingParams.from_json(scaling["x"]), ScalingParams.from_json(scaling["z"]))
        return cls(dims, layers, scaling)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ComposedMap":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_json(doc)


def _layer_kinds() -> dict:
    from .composeflow import ComposeLayer
    from .gaussflow import GaussFlowParams

    return {"gaussflow": GaussFlowParams, "composeflow": ComposeLayer}


def _batch(a, d: int, name: str) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim <= 1
    if single:
        a = a.reshape(1, -1) if a.size else np.zeros((1, 0))
    if a.ndim != 2 or a.shape[1] != d:
        raise DimensionError(f"{name} has trailing dimension {a.shape[-1] if a.ndim else 0}, map expects {d}")
    return a, single


def evaluate_map(tmap: ComposedMap, x, z=None) -> np.ndarray:
    """Apply the composed map to one point (d_x-vector) or a batch (n x d_x)."""
    dx, dz = tmap.input_dims
    xb, single = _batch(x, dx, "x")
    if z is None:
        z = np.zeros((xb.shape[0], 0)) if not single else np.zeros(0)
    zb, _ = _batch(z, dz, "z")
    if zb.shape[0] != xb.shape[0]:
        raise DimensionError(f"x has {xb.shape[0]} rows but z has {zb.shape[0]}")
    if not tmap.layers:
        out = xb.copy()
        return out[0] if single else out
    if tmap.scaling is not None:
        xb = tmap.scaling[0].apply(xb)
        zb = tmap.scaling[1].apply(zb)
    carry = None
    for layer in tmap.layers:
        xb, carry = layer.apply(xb, zb, carry)
    if tmap.scaling is not None:
        xb = tmap.scaling[0].invert(xb)
    return xb[0] if single else xb


def push_forward(tmap: ComposedMap, data: ConditionedDataset) -> ConditionedDataset:
    """Replace points by their images; covariates are carried over untouched."""
    if data.dims != tmap.input_dims:
        raise DimensionError(f"dataset dims {data.dims} differ from map dims {tmap.input_dims}")
    if not tmap.layers:
        return data
    return data.with_points(evaluate_map(tmap, data.points, data.covariates))


def rms(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        return math.sqrt(float(np.mean(a * a)))
    return math.sqrt(float(np.mean(np.sum(a * a, axis=1))))
