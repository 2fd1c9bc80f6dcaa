"""Treatment-effect estimation as conditional transport.

Untreated rows form the source (x, z) and treated rows the target (y, z).
When the treated response law is the untreated one shifted by tau(z), the
conditional map is T(x, z) = x + tau(z), and per-row effects are read off as
T(x_i, z_i) - x_i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (BINARY, CONTINUOUS, ComposedMap, ConditionedDataset, DataError, DimensionError,
                   evaluate_map, parse_columns, read_csv_table, write_csv)
from .minimax import FitDiagnostics, MinimaxConfig, fit

N_BINS = 20


@dataclass(frozen=True, eq=False)
class TrialTable:
    response: np.ndarray
    covariates: np.ndarray
    treated: np.ndarray
    covariate_kinds: tuple[str, ...]
    covariate_names: tuple[str, ...] = ()
    response_name: str = "y"
    patient_id: np.ndarray | None = None
    # generator ground truth, when known
    true_effect: np.ndarray | None = None
    baseline_mean: np.ndarray | None = None

    def __post_init__(self):
        r = np.asarray(self.response, dtype=np.float64).reshape(-1)
        n = r.size
        cov = np.asarray(self.covariates, dtype=np.float64)
        cov = cov.reshape(n, -1) if cov.size else np.zeros((n, 0))
        t = np.asarray(self.treated)
        if t.dtype != bool:
            if not np.all((t == 0) | (t == 1)):
                raise DataError("treatment flags must be 0/1 or boolean")
            t = t.astype(bool)
        t = t.reshape(-1)
        if cov.shape[0] != n or t.size != n:
            raise DimensionError("response, covariates and treatment flags need the same row count")
        if not t.any() or t.all():
            raise DataError("trial table needs at least one treated and one untreated row")
        names = tuple(self.covariate_names) or tuple(f"z{k + 1}" for k in range(cov.shape[1]))
        if len(names) != cov.shape[1] or len(self.covariate_kinds) != cov.shape[1]:
            raise DimensionError("one name and one kind per covariate column")
        object.__setattr__(self, "response", r)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "treated", t)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "covariate_kinds", tuple(self.covariate_kinds))
        for name in ("patient_id", "true_effect", "baseline_mean"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v).reshape(-1)
                if v.size != n:
                    raise DimensionError(f"{name} needs one entry per row")
                object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.response.size

    def binary_columns(self) -> list[str]:
        return [c for c, k in zip(self.covariate_names, self.covariate_kinds) if k == BINARY]

    def shuffled(self, rng: np.random.Generator) -> "TrialTable":
        idx = rng.permutation(self.n)
        pick = lambda a: None if a is None else a[idx]
        return TrialTable(self.response[idx], self.covariates[idx], self.treated[idx], self.covariate_kinds,
                          self.covariate_names, self.response_name, pick(self.patient_id),
                          pick(self.true_effect), pick(self.baseline_mean))


def split_by_treatment(table: TrialTable) -> tuple[ConditionedDataset, ConditionedDataset]:
    names = (table.response_name,) + table.covariate_names
    u, t = ~table.treated, table.treated
    source = ConditionedDataset(table.response[u], table.covariates[u], names, table.covariate_kinds)
    target = ConditionedDataset(table.response[t], table.covariates[t], names, table.covariate_kinds)
    return source, target


# ---------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class CovariateBalance:
    name: str
    smd: float
    degenerate: bool
    edges: np.ndarray
    untreated_counts: np.ndarray
    treated_counts: np.ndarray


@dataclass
class UnbalanceReport:
    columns: list[CovariateBalance] = field(default_factory=list)

    def smd(self) -> np.ndarray:
        return np.array([c.smd for c in self.columns])

    def write_csv(self, path) -> None:
        rows = []
        for c in self.columns:
            for k in range(len(c.untreated_counts)):
                rows.append([c.name, c.smd, int(c.degenerate), k, float(c.edges[k]), float(c.edges[k + 1]),
                             int(c.untreated_counts[k]), int(c.treated_counts[k])])
        write_csv(path, ["covariate", "smd", "degenerate", "bin", "lo", "hi", "untreated", "treated"], rows)


def unbalance_report(source: ConditionedDataset, target: ConditionedDataset) -> UnbalanceReport:
    """Standardized mean differences (treated minus untreated) and 20-bin histograms per covariate.

    The pooled sd is sqrt((var_u + var_t) / 2) with population variances.
    """
    if source.covariate_names != target.covariate_names:
        raise DimensionError("source and target covariate columns differ")
    report = UnbalanceReport()
    for k, name in enumerate(source.covariate_names):
        a, b = source.covariates[:, k], target.covariates[:, k]
        sd = math.sqrt((a.var() + b.var()) / 2.0)
        degenerate = not sd > 0
        smd = 0.0 if degenerate else float((b.mean() - a.mean()) / sd)
        lo, hi = float(min(a.min(), b.min())), float(max(a.max(), b.max()))
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, N_BINS + 1)
        report.columns.append(CovariateBalance(name, smd, degenerate, edges,
                                               np.histogram(a, edges)[0], np.histogram(b, edges)[0]))
    return report


# ---------------------------------------------------------------- fitting and effects


def _subset(table: TrialTable, covariate_subset) -> list[str]:
    if covariate_subset is None or covariate_subset == "all":
        return list(table.covariate_names)
    if covariate_subset == "binary":
        return table.binary_columns()
    if covariate_subset == "none":
        return []
    out = []
    for c in covariate_subset:
        name = table.covariate_names[c] if isinstance(c, (int, np.integer)) else str(c)
        if name not in table.covariate_names:
            raise DataError(f"unknown covariate {name!r}")
        out.append(name)
    return out


def fit_treatment_map(table: TrialTable, covariate_subset: str | Sequence = "all",
                      cfg: MinimaxConfig = MinimaxConfig(), family: str = "composeflow", log=None
                      ) -> tuple[ComposedMap, FitDiagnostics]:
    """Fit the untreated-to-treated map conditioned on a covariate subset.

    ``covariate_subset`` is "all", "binary", "none" or a list of names or
    indices. Standardization happens inside the fit and is folded into the
    returned map, which therefore works in the table's own units.
    """
    source, target = split_by_treatment(table)
    cols = _subset(table, covariate_subset)
    return fit(source.select_covariates(cols), target.select_covariates(cols), family, cfg, log)


@dataclass(frozen=True, eq=False)
class EffectEstimate:
    tau_hat: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.tau_hat))

    def quantiles(self, levels=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        return {float(q): float(v) for q, v in zip(levels, np.quantile(self.tau_hat, levels))}

    def summary(self) -> dict:
        return {"n": int(self.tau_hat.size), "mean": self.mean, "sd": float(np.std(self.tau_hat)),
                "quantiles": self.quantiles()}


def estimate_effect(tmap: ComposedMap, source: ConditionedDataset) -> EffectEstimate:
    if tuple(tmap.input_dims) != source.dims:
        raise DimensionError(f"map expects dims {tuple(tmap.input_dims)}, data has {source.dims}")
    out = evaluate_map(tmap, source.points, source.covariates)
    return EffectEstimate((out - source.points)[:, 0])


def effect_for_table(tmap: ComposedMap, table: TrialTable, covariate_subset="all") -> EffectEstimate:
    source, _ = split_by_treatment(table)
    return estimate_effect(tmap, source.select_covariates(_subset(table, covariate_subset)))


@dataclass(frozen=True, eq=False)
class PatientComparison:
    patient: float
    edges: np.ndarray
    observed: np.ndarray  # counts of the patient's treated responses
    predicted: np.ndarray  # counts of the patient's mapped untreated responses


def patient_comparison(tmap: ComposedMap, table: TrialTable, covariate_subset="all",
                       bins: int = N_BINS) -> list[PatientComparison]:
    """Histogram of observed treated responses next to mapped untreated ones, per patient.

    Rows sharing a patient id are repeated batches of one covariate profile.
    Patients seen only treated or only untreated are skipped.
    """
    if table.patient_id is None:
        raise DataError("trial table has no patient id column")
    cols = [table.covariate_names.index(c) for c in _subset(table, covariate_subset)]
    out = []
    for pid in np.unique(table.patient_id):
        rows = table.patient_id == pid
        u, t = rows & ~table.treated, rows & table.treated
        if not u.any() or not t.any():
            continue
        x = table.response[u][:, None]
        pred = evaluate_map(tmap, x, table.covariates[u][:, cols])[:, 0]
        obs = table.response[t]
        lo, hi = float(min(pred.min(), obs.min())), float(max(pred.max(), obs.max()))
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
        out.append(PatientComparison(float(pid), edges, np.histogram(obs, edges)[0], np.histogram(pred, edges)[0]))
    return out


def write_patient_comparison(path, comparisons: Sequence[PatientComparison]) -> None:
    rows = ([c.patient, float(c.edges[k]), float(c.edges[k + 1]), int(c.observed[k]), int(c.predicted[k])]
            for c in comparisons for k in range(c.observed.size))
    write_csv(path, ["patient_id", "bin_lo", "bin_hi", "observed", "predicted"], rows)


def naive_standard_error(table: TrialTable) -> float:
    """sqrt(var_u / n_u + var_t / n_t): the standard error of a difference in group means."""
    u, t = table.response[~table.treated], table.response[table.treated]
    return math.sqrt(u.var(ddof=1) / u.size + t.var(ddof=1) / t.size)


def write_effects(path, table: TrialTable, est: EffectEstimate) -> None:
    u = np.flatnonzero(~table.treated)
    header = ["row_id", "x", *table.covariate_names, "tau_hat"]
    rows = ([int(i), float(table.response[i]), *map(float, table.covariates[i]), float(tau)]
            for i, tau in zip(u, est.tau_hat))
    write_csv(path, header, rows)


# ---------------------------------------------------------------- synthetic trials

# untreated response f(z) = BASE_BIN . b + BASE_CONT . c
BASE_BIN = np.array([0.5, -0.3, 0.4, 0.2, -0.5, 0.3])
BASE_CONT = np.array([1.0, 0.5])
# treatment log-odds: every covariate enters, the first continuous one most
ASSIGN_BIN = np.array([0.4, -0.3, 0.3, 0.2, -0.2, 0.3])
ASSIGN_CONT = np.array([1.0, 0.4])
BIN_PREVALENCE = np.array([0.5, 0.4, 0.6, 0.3, 0.5, 0.7])
NOISE_SD = 1.0


def synth_acic(n: int, seed: int = 0, effect_spec: Sequence[float] = (1.0, 0.0, 0.5, 0.0, 0.0, 0.0)
               ) -> TrialTable:
    """Trial with 6 binary and 2 continuous covariates and effects on the binaries only.

    Columns z1..z6 are Bernoulli, z7 and z8 standard normal. Assignment is
    logistic in all eight, so treated and untreated covariate laws differ.
    The untreated response is f(z) + noise and the treated one the same draw
    shifted by tau(z) = effect_spec . z1..z6, so the treated law given z is the
    untreated law shifted by tau(z).
    """
    if n < 10:
        raise DataError("synth_acic needs n >= 10")
    eff = np.asarray(effect_spec, dtype=np.float64).reshape(-1)
    if eff.size != 6:
        raise DataError("effect_spec needs 6 coefficients, one per binary covariate")
    rng = np.random.default_rng(seed)
    b = (rng.random((n, 6)) < BIN_PREVALENCE).astype(np.float64)
    c = rng.normal(size=(n, 2))
    logit = (b - BIN_PREVALENCE) @ ASSIGN_BIN + c @ ASSIGN_CONT
    treated = rng.random(n) < 1.0 / (1.0 + np.exp(-logit))
    base = b @ BASE_BIN + c @ BASE_CONT
    x = base + NOISE_SD * rng.normal(size=n)
    tau = b @ eff
    response = np.where(treated, x + tau, x)
    kinds = (BINARY,) * 6 + (CONTINUOUS,) * 2
    names = tuple(f"z{k + 1}" for k in range(8))
    return TrialTable(response, np.hstack([b, c]), treated, kinds, names, "y",
                      true_effect=tau, baseline_mean=base)


# ---------------------------------------------------------------- CSV input


def load_trial_csv(path, response: str = "y", treatment: str = "treated", covariates=None,
                   binary=None, patient_id: str | None = None) -> TrialTable:
    """Read a trial table. Covariates default to every column starting with ``z``.

    Binary columns are those listed in ``binary``; when ``binary`` is None a
    column counts as binary if all its values are 0 or 1.
    """
    header, body = read_csv_table(path)
    for col in (response, treatment):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    if covariates is None:
        covariates = [h for h in header if h.startswith("z") and h not in (response, treatment, patient_id)]
    covariates = list(covariates)
    r = parse_columns(path, header, body, [response])[:, 0]
    t = parse_columns(path, header, body, [treatment])[:, 0]
    bad = np.flatnonzero((t != 0) & (t != 1))
    if bad.size:
        raise DataError(f"{path}: treatment column {treatment!r} has value {t[bad[0]]!r} at row {bad[0] + 1}")
    cov = parse_columns(path, header, body, covariates)
    if binary is None:
        kinds = tuple(BINARY if np.all((cov[:, k] == 0) | (cov[:, k] == 1)) else CONTINUOUS
                      for k in range(cov.shape[1]))
    else:
        binary = set(binary)
        kinds = tuple(BINARY if c in binary else CONTINUOUS for c in covariates)
    pid = None
    if patient_id is not None:
        pid = parse_columns(path, header, body, [patient_id])[:, 0]
    return TrialTable(r, cov, t.astype(bool), kinds, tuple(covariates), response, pid)


def load_acic_csv(path, patient_id: str | None = None) -> TrialTable:
    """ACIC-style layout: response ``y``, treatment ``z``, covariates ``x_*``.

    Covariates are renamed z1, z2, ... in file order to match this package's
    convention.
    """
    header, _ = read_csv_table(path)
    cov = [h for h in header if h.startswith("x")]
    table = load_trial_csv(path, response="y", treatment="z", covariates=cov, patient_id=patient_id)
    return TrialTable(table.response, table.covariates, table.treated, table.covariate_kinds,
                      tuple(f"z{k + 1}" for k in range(len(cov))), "y", table.patient_id)


def write_trial_csv(path, table: TrialTable) -> None:
    header = [table.response_name, "treated", *table.covariate_names]
    rows = ([float(table.response[i]), int(table.treated[i]), *map(float, table.covariates[i])]
            for i in range(table.n))
    write_csv(path, header, rows)
