"""Dataset and parameter file formats.

Datasets are long-format CSV: a metadata comment line, a ``t,i,j,value``
header, and one row per matrix cell with 1-based indices.  Every cell of the
``n x p x q`` grid must appear exactly once.  Optional companion files carry
true factors (``<stem>.factors.csv``), true states (``<stem>.states.csv``),
and generating parameters (``<stem>.truth.json``).  A JSON container format
with nested arrays is available for programmatic consumers.

Floats are serialized with ``repr`` (shortest round-trip representation).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .em import FitResult
from .model import ModelParams, params_from_dict, params_to_dict

__all__ = [
    "Dataset",
    "DatasetFormatError",
    "save_dataset",
    "load_dataset",
    "save_params",
    "load_params",
    "save_fit",
    "load_fit",
    "write_csv_rows",
    "read_csv_rows",
]


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries row numbers where possible."""


@dataclass
class Dataset:
    Y: np.ndarray                     # (n, p, q)
    factors: np.ndarray | None = None  # (n, k1, k2)
    states: np.ndarray | None = None   # (n,) 0-based
    truth: ModelParams | None = None


def _fmt(x: float) -> str:
    return repr(float(x))


def _companion(path: Path, kind: str) -> Path:
    return path.with_suffix(f".{kind}{path.suffix}" if path.suffix == ".csv"
                            else f".{kind}.csv")


def _truth_path(path: Path) -> Path:
    return path.with_suffix(".truth.json")


def save_dataset(path, Y: np.ndarray, factors: np.ndarray | None = None,
                 states: np.ndarray | None = None,
                 truth: ModelParams | None = None, fmt: str = "csv") -> None:
    path = Path(path)
    Y = np.asarray(Y, dtype=float)
    n, p, q = Y.shape
    if fmt == "json":
        doc = {"n": n, "p": p, "q": q, "Y": Y.tolist()}
        if factors is not None:
            doc["factors"] = np.asarray(factors).tolist()
        if states is not None:
            doc["states"] = (np.asarray(states) + 1).tolist()
        if truth is not None:
            doc["truth"] = params_to_dict(truth)
        path.write_text(json.dumps(doc))
        return
    if fmt != "csv":
        raise ValueError(f"unknown dataset format {fmt!r}")
    with open(path, "w", newline="") as fh:
        fh.write(f"# msdmf-dataset n={n} p={p} q={q} "
                 f"factors={int(factors is not None)} "
                 f"states={int(states is not None)}\n")
        fh.write("t,i,j,value\n")
        for t in range(n):
            for i in range(p):
                for j in range(q):
                    fh.write(f"{t + 1},{i + 1},{j + 1},{_fmt(Y[t, i, j])}\n")
    if factors is not None:
        F = np.asarray(factors, dtype=float)
        k1, k2 = F.shape[1], F.shape[2]
        with open(_companion(path, "factors"), "w", newline="") as fh:
            fh.write(f"# msdmf-factors n={n} k1={k1} k2={k2}\n")
            fh.write("t,a,b,value\n")
            for t in range(n):
                for a in range(k1):
                    for b in range(k2):
                        fh.write(f"{t + 1},{a + 1},{b + 1},{_fmt(F[t, a, b])}\n")
    if states is not None:
        s = np.asarray(states)
        with open(_companion(path, "states"), "w", newline="") as fh:
            fh.write("t,state\n")
            for t in range(n):
                fh.write(f"{t + 1},{int(s[t]) + 1}\n")
    if truth is not None:
        save_params(_truth_path(path), truth)


def _parse_meta(line: str, path: Path,
                required: tuple[str, ...]) -> dict[str, int]:
    if not line.startswith("#"):
        raise DatasetFormatError(
            f"{path}: line 1: expected a '# msdmf-...' metadata line")
    meta = {}
    for tok in line[1:].split():
        if "=" in tok:
            key, _, val = tok.partition("=")
            try:
                meta[key] = int(val)
            except ValueError as exc:
                raise DatasetFormatError(
                    f"{path}: line 1: bad metadata token {tok!r}") from exc
    for key in required:
        if key not in meta:
            raise DatasetFormatError(f"{path}: line 1: missing metadata key {key!r}")
    return meta


def _load_grid(path: Path, shape_keys: tuple[str, str, str],
               header: tuple[str, str, str, str]) -> tuple[np.ndarray, dict]:
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        meta = _parse_meta(first, path, shape_keys)
        dims = tuple(meta[k] for k in shape_keys)
        arr = np.full(dims, np.nan)
        seen = np.zeros(dims, dtype=bool)
        reader = csv.reader(fh)
        hdr = next(reader, None)
        if hdr is None or [h.strip() for h in hdr] != list(header):
            raise DatasetFormatError(
                f"{path}: line 2: expected header {','.join(header)}")
        for rownum, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != 4:
                raise DatasetFormatError(
                    f"{path}: line {rownum}: expected 4 fields, got {len(row)}")
            try:
                t, i, j = int(row[0]) - 1, int(row[1]) - 1, int(row[2]) - 1
                val = float(row[3])
            except ValueError as exc:
                raise DatasetFormatError(
                    f"{path}: line {rownum}: {exc}") from exc
            if not (0 <= t < dims[0] and 0 <= i < dims[1] and 0 <= j < dims[2]):
                raise DatasetFormatError(
                    f"{path}: line {rownum}: index ({t + 1},{i + 1},{j + 1}) "
                    f"outside declared grid {dims}")
            if seen[t, i, j]:
                raise DatasetFormatError(
                    f"{path}: line {rownum}: duplicate cell ({t + 1},{i + 1},{j + 1})")
            if not np.isfinite(val):
                raise DatasetFormatError(
                    f"{path}: line {rownum}: non-finite value {row[3]!r}")
            seen[t, i, j] = True
            arr[t, i, j] = val
    if not seen.all():
        t, i, j = np.argwhere(~seen)[0]
        raise DatasetFormatError(
            f"{path}: missing cell (t={t + 1}, i={i + 1}, j={j + 1})")
    return arr, meta


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        Y = np.asarray(doc["Y"], dtype=float)
        if not np.all(np.isfinite(Y)):
            raise DatasetFormatError(f"{path}: non-finite observation values")
        factors = (np.asarray(doc["factors"], dtype=float)
                   if "factors" in doc else None)
        states = (np.asarray(doc["states"], dtype=int) - 1
                  if "states" in doc else None)
        truth = params_from_dict(doc["truth"]) if "truth" in doc else None
        return Dataset(Y=Y, factors=factors, states=states, truth=truth)

    Y, meta = _load_grid(path, ("n", "p", "q"), ("t", "i", "j", "value"))
    factors = states = truth = None
    fpath = _companion(path, "factors")
    if meta.get("factors") and fpath.exists():
        factors, _ = _load_grid(fpath, ("n", "k1", "k2"), ("t", "a", "b", "value"))
    spath = _companion(path, "states")
    if meta.get("states") and spath.exists():
        with open(spath, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)  # header
            states = np.array([int(row[1]) - 1 for row in reader if row])
        if len(states) != meta["n"]:
            raise DatasetFormatError(
                f"{spath}: expected {meta['n']} states, got {len(states)}")
    tpath = _truth_path(path)
    if tpath.exists():
        truth = load_params(tpath)
    return Dataset(Y=Y, factors=factors, states=states, truth=truth)


def save_params(path, params: ModelParams) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path) -> ModelParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def write_csv_rows(path, rows: list[dict]) -> None:
    """Write dict rows with a union-of-keys header (first-seen order)."""
    cols: list[str] = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (_fmt(v) if isinstance(v, float) else v)
                             for k, v in row.items()})


def read_csv_rows(path) -> list[dict]:
    """Read CSV rows, converting numeric-looking fields to float."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for key, val in row.items():
                if val is None or val == "":
                    parsed[key] = None
                    continue
                try:
                    parsed[key] = float(val)
                except ValueError:
                    parsed[key] = val
            out.append(parsed)
    return out


def _fit_path(prefix, suffix: str) -> Path:
    return Path(str(prefix) + suffix)


def save_fit(prefix, result: FitResult) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    save_params(_fit_path(prefix, ".params.json"), result.theta)
    save_params(_fit_path(prefix, ".params_raw.json"), result.theta_raw)
    n, M = result.weights.shape
    with open(_fit_path(prefix, ".weights.csv"), "w", newline="") as fh:
        fh.write("t," + ",".join(f"w_{k + 1}" for k in range(M)) + "\n")
        for t in range(n):
            fh.write(f"{t + 1}," + ",".join(_fmt(v) for v in result.weights[t]) + "\n")
    with open(_fit_path(prefix, ".states.csv"), "w", newline="") as fh:
        fh.write("t,state\n")
        for t in range(n):
            fh.write(f"{t + 1},{int(result.s_hat[t]) + 1}\n")
    r = result.f_hat.shape[1]
    with open(_fit_path(prefix, ".factors.csv"), "w", newline="") as fh:
        fh.write("t," + ",".join(f"f_{a + 1}" for a in range(r)) + "\n")
        for t in range(n):
            fh.write(f"{t + 1}," + ",".join(_fmt(v) for v in result.f_hat[t]) + "\n")
    with open(_fit_path(prefix, ".loglik.csv"), "w", newline="") as fh:
        fh.write("iteration,loglik\n")
        for m, ll in enumerate(result.loglik_trace, start=1):
            fh.write(f"{m},{_fmt(ll)}\n")
    meta = {"iterations": result.iterations, "converged": result.converged,
            "loglik_decreased": result.loglik_decreased}
    _fit_path(prefix, ".meta.json").write_text(json.dumps(meta))


def load_fit(prefix) -> FitResult:
    """Reload the pieces of a saved fit needed for evaluation."""
    prefix = Path(prefix)
    theta = load_params(_fit_path(prefix, ".params.json"))
    theta_raw = load_params(_fit_path(prefix, ".params_raw.json"))
    weights_rows = read_csv_rows(_fit_path(prefix, ".weights.csv"))
    M = theta.dims.M
    weights = np.array([[row[f"w_{k + 1}"] for k in range(M)]
                        for row in weights_rows])
    states_rows = read_csv_rows(_fit_path(prefix, ".states.csv"))
    s_hat = np.array([int(row["state"]) - 1 for row in states_rows])
    factor_rows = read_csv_rows(_fit_path(prefix, ".factors.csv"))
    r = theta.dims.r
    f_hat = np.array([[row[f"f_{a + 1}"] for a in range(r)]
                      for row in factor_rows])
    meta = json.loads(_fit_path(prefix, ".meta.json").read_text())
    trace_rows = read_csv_rows(_fit_path(prefix, ".loglik.csv"))
    return FitResult(theta=theta, theta_raw=theta_raw, f_hat=f_hat,
                     s_hat=s_hat, weights=weights,
                     loglik_trace=[row["loglik"] for row in trace_rows],
                     iterations=int(meta["iterations"]),
                     converged=bool(meta["converged"]),
                     loglik_decreased=bool(meta["loglik_decreased"]))
