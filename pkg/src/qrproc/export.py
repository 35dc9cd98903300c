"""CSV export and re-import of fitted processes and bands.

Floats are written with ``repr`` (shortest round-trip form), so a process
read back from its CSV is bit-identical to the one written.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import CoefProcess, Dataset, Engine, QrFit, QuantileGrid
from .errors import ParseError, ShapeError

PROCESS_COLUMNS = ("tau", "coefficient", "estimate", "se", "engine", "objective", "moment_inf_norm",
                   "iterations", "fixups")


def _num(x) -> str:
    return repr(float(x))


def write_process_csv(path: str | Path, proc: CoefProcess, column_names, se: np.ndarray | None = None) -> None:
    """Long format, one row per (tau, coefficient); ``se`` is (J, k) or omitted (written as nan)."""
    betas = proc.betas
    se = np.full(betas.shape, np.nan) if se is None else np.asarray(se, dtype=np.float64)
    if se.shape != betas.shape:
        raise ShapeError(f"se has shape {se.shape}, process {betas.shape}")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PROCESS_COLUMNS)
        for j, fit in enumerate(proc.fits):
            for c, name in enumerate(column_names):
                w.writerow([_num(fit.tau), name, _num(betas[j, c]), _num(se[j, c]), Engine(fit.engine).value,
                            _num(fit.objective), _num(fit.moment_inf_norm), int(fit.iterations), int(fit.fixups)])


def read_process_csv(path: str | Path, ds: Dataset | None = None) -> tuple[CoefProcess, np.ndarray]:
    """Rebuild (process, se) from :func:`write_process_csv` output.

    Coefficients must appear in the same order at every tau; with ``ds`` the
    names are checked against its columns.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PROCESS_COLUMNS:
            raise ParseError(f"{path}: header must be {','.join(PROCESS_COLUMNS)}", row=0)
        rows = [rec for rec in reader if rec]
    if not rows:
        raise ParseError(f"{path}: no data rows", row=1)
    taus: list[float] = []
    names: list[str] = []
    est: dict[float, list[float]] = {}
    ses: dict[float, list[float]] = {}
    meta: dict[float, tuple] = {}
    for lineno, rec in enumerate(rows, start=1):
        if len(rec) != len(PROCESS_COLUMNS):
            raise ParseError(f"{path}: row {lineno} has {len(rec)} cells", row=lineno)
        try:
            t = float(rec[0])
            b, s, obj, mom = float(rec[2]), float(rec[3]), float(rec[5]), float(rec[6])
            engine = Engine(rec[4])
            it, fx = int(rec[7]), int(rec[8])
        except ValueError as exc:
            raise ParseError(f"{path}: row {lineno}: {exc}", row=lineno) from None
        if t not in est:
            taus.append(t)
            est[t], ses[t] = [], []
            meta[t] = (engine, obj, mom, it, fx)
        pos = len(est[t])
        if len(taus) == 1:
            names.append(rec[1])
        elif pos >= len(names) or rec[1] != names[pos]:
            raise ParseError(f"{path}: row {lineno}: coefficient {rec[1]!r} out of order", row=lineno)
        est[t].append(b)
        ses[t].append(s)
    k = len(names)
    if any(len(v) != k for v in est.values()):
        raise ParseError(f"{path}: every tau needs {k} coefficients", row=len(rows))
    if ds is not None and tuple(names) != tuple(ds.column_names):
        raise ParseError(f"{path}: coefficients {names} do not match data columns {list(ds.column_names)}", row=1)
    fits = []
    for t in taus:
        engine, obj, mom, it, fx = meta[t]
        fits.append(QrFit(t, np.array(est[t]), obj, mom, engine, it, fx))
    proc = CoefProcess(QuantileGrid(np.array(taus)), fits, info={"source": str(path), "column_names": names})
    return proc, np.array([ses[t] for t in taus])


def write_bands_csv(path: str | Path, bands) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "coefficient", "estimate", "lower", "upper", "pointwise_lower", "pointwise_upper",
                    "critical_value"])
        cv = np.broadcast_to(np.atleast_1d(bands.critical_value), (len(bands.column_names),))
        for j, t in enumerate(bands.taus):
            for c, name in enumerate(bands.column_names):
                w.writerow([_num(t), name, _num(bands.estimate[j, c]), _num(bands.lower[j, c]),
                            _num(bands.upper[j, c]), _num(bands.pointwise_lower[j, c]),
                            _num(bands.pointwise_upper[j, c]), _num(cv[c])])
