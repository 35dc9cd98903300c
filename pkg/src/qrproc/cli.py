"""Command-line front end.

Subcommands: fit, process, bootstrap, test, bands, simulate, bench.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure,
4 internal error. ``--workers`` falls back to $QRPROC_WORKERS; results do
not depend on the worker count. Every command takes ``--seed``.

``--engine auto`` uses the one-step march when J * n * k exceeds
AUTO_ONESTEP_WORK (J grid points, n rows, k columns) and preprocessing
otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import InputError, NumericalError

AUTO_ONESTEP_WORK = 2.5e7
DEFAULT_GRID = "0.05:0.95:0.01"
ENGINES = ("auto", "full", "preprocess", "onestep")
BOOTSTRAPS = ("none", "empirical", "empirical-onestep", "score")
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_INTERNAL = 0, 2, 3, 4


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    response: str = "y"
    taus: str = DEFAULT_GRID
    engine: str = "auto"
    bootstrap: str = "none"
    scheme: str = "gaussian"
    B: int = 250
    alpha: float = 0.05
    seed: int = 0
    output: str | None = None
    format: str | None = None
    workers: int | None = None

    def __post_init__(self) -> None:
        from .errors import DomainError

        if self.engine not in ENGINES:
            raise DomainError(f"engine must be one of {ENGINES}")
        if self.bootstrap not in BOOTSTRAPS:
            raise DomainError(f"bootstrap must be one of {BOOTSTRAPS}")
        if self.B < 1:
            raise DomainError("B must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if self.format not in (None, "csv", "json", "binary"):
            raise DomainError("format must be csv, json or binary")
        if self.workers is not None and self.workers < 1:
            raise DomainError("workers must be >= 1")

    def grid(self) -> np.ndarray:
        from .core import parse_grid

        return parse_grid(self.taus)


def resolve_engine(engine: str, J: int, n: int, k: int) -> str:
    """Documented auto rule: one-step when J n k > AUTO_ONESTEP_WORK, else preprocess."""
    if engine != "auto":
        return engine
    return "onestep" if J * n * k > AUTO_ONESTEP_WORK else "preprocess"


def check_combination(engine: str, bootstrap: str) -> None:
    """Empirical draws must re-estimate with the engine that produced the estimate they are centred on."""
    from .errors import DomainError

    if bootstrap == "empirical" and engine == "onestep":
        raise DomainError("bootstrap 'empirical' re-solves exactly; use 'empirical-onestep' with engine onestep")
    if bootstrap == "empirical-onestep" and engine != "onestep":
        raise DomainError("bootstrap 'empirical-onestep' requires engine onestep")


def _load(cfg: RunConfig):
    from .core import load_csv
    from .errors import DomainError

    if not cfg.input:
        raise DomainError("--input is required")
    return load_csv(cfg.input, cfg.response)


def _fit(ds, taus: np.ndarray, engine: str, seed: int):
    from .core import CoefProcess, QuantileGrid, validate_grid
    from .onestep import fit_process_onestep
    from .preprocess import PreprocessConfig, fit_process_preprocess
    from .solver import solve_qr

    pp_cfg = PreprocessConfig(seed=seed)
    if engine == "full":
        grid, warns = validate_grid(taus, ds.n, ds.k)
        return CoefProcess(grid, [solve_qr(ds, t) for t in grid.taus], info={"warnings": warns, "engine": "full"})
    if engine == "onestep":
        return fit_process_onestep(ds, QuantileGrid(taus), pp_cfg=pp_cfg)
    return fit_process_preprocess(ds, taus, pp_cfg)


def _standard_errors(ds, proc, alpha: float) -> tuple[np.ndarray, list[str]]:
    """Sandwich standard errors; nan (with a warning) where the Jacobian is near singular."""
    from .inference import pointwise_variance, sigma_hat
    from .onestep import process_jacobians

    out = np.full((len(proc.taus), ds.k), np.nan)
    warns = []
    for j, (fit, J) in enumerate(zip(proc.fits, process_jacobians(ds, proc, alpha))):
        if J.is_singular():
            warns.append(f"tau={fit.tau:g}: near-singular Jacobian, standard errors set to nan")
            continue
        V = pointwise_variance(J, sigma_hat(ds, fit.beta, fit.beta, fit.tau, fit.tau))
        out[j] = np.sqrt(np.clip(np.diag(V), 0.0, None) / ds.n)
    return out, warns


def _write_json(obj, path: str | None) -> None:
    from .simulate import _json_default

    text = json.dumps(obj, indent=2, default=_json_default) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _metadata_path(output: str, explicit: str | None) -> str:
    return explicit or f"{output}.json"


def _metadata(command: str, cfg: RunConfig, ds=None, **extra) -> dict:
    meta = {"command": command, "version": __version__, "config": asdict(cfg)}
    if ds is not None:
        meta.update(n=ds.n, k=ds.k, column_names=list(ds.column_names))
    meta.update(extra)
    return meta


def _warn(messages: Sequence[str]) -> None:
    for m in messages:
        print(f"warning: {m}", file=sys.stderr)


def _config(args) -> RunConfig:
    fields = RunConfig.__dataclass_fields__
    return RunConfig(**{k: v for k, v in vars(args).items() if k in fields and v is not None})


def _require_output(cfg: RunConfig) -> str:
    from .errors import DomainError

    if not cfg.output:
        raise DomainError("--output is required")
    return cfg.output


def _run_fit_like(args, command: str, taus: np.ndarray) -> int:
    from .export import write_process_csv

    cfg = _config(args)
    out = _require_output(cfg)
    ds = _load(cfg)
    engine = resolve_engine(cfg.engine, taus.size, ds.n, ds.k)
    t0 = time.perf_counter()
    proc = _fit(ds, taus, engine, cfg.seed)
    t_fit = time.perf_counter() - t0
    se, se_warns = _standard_errors(ds, proc, cfg.alpha)
    write_process_csv(out, proc, ds.column_names, se)
    warns = list(proc.info.get("warnings", [])) + se_warns
    _warn(warns)
    info = {k: v for k, v in proc.info.items() if k != "warnings"}
    _write_json(_metadata(command, cfg, ds, engine=engine, grid=proc.taus.tolist(), warnings=warns,
                          process_info=info, seconds=t_fit), _metadata_path(out, args.metadata))
    return EXIT_OK


def cmd_fit(args) -> int:
    from .core import _check_tau

    return _run_fit_like(args, "fit", np.array([_check_tau(args.tau)]))


def cmd_process(args) -> int:
    return _run_fit_like(args, "process", _config(args).grid())


def _engine_of(proc) -> str:
    """Engine label of a re-read process: onestep if any fit came from the march, else full or preprocess."""
    from .core import Engine

    kinds = {Engine(f.engine) for f in proc.fits}
    if Engine.ONESTEP in kinds:
        return "onestep"
    return "full" if kinds == {Engine.BASELINE} else "preprocess"


def _sample_process(args, cfg: RunConfig, ds):
    """The process to bootstrap around: re-read from --process when given, else fitted now.

    A re-read process keeps the file's coefficients bit for bit; objective
    and moment are recomputed from the data.
    """
    from .core import CoefProcess, make_fit
    from .export import read_process_csv

    if getattr(args, "process", None):
        loaded, _ = read_process_csv(args.process, ds)
        fits = [make_fit(ds, f.tau, f.beta, f.engine, f.iterations, f.fixups) for f in loaded.fits]
        proc = CoefProcess(loaded.grid, fits, info={"source": args.process})
        return proc, _engine_of(proc)
    taus = cfg.grid()
    engine = resolve_engine(cfg.engine, taus.size, ds.n, ds.k)
    return _fit(ds, taus, engine, cfg.seed), engine


def _default_bootstrap(engine: str) -> str:
    return "empirical-onestep" if engine == "onestep" else "empirical"


def _draws(cfg: RunConfig, ds, proc, engine: str, method: str):
    from . import bootstrap as bs
    from .onestep import with_jacobians

    check_combination(engine, method)
    if method == "empirical":
        return bs.bootstrap_qr_preprocessed(ds, proc, cfg.B, base_seed=cfg.seed, workers=cfg.workers)
    if method == "empirical-onestep":
        return bs.bootstrap_onestep(ds, proc.taus, cfg.B, base_seed=cfg.seed, workers=cfg.workers)
    return bs.score_multiplier_bootstrap(ds, with_jacobians(ds, proc, cfg.alpha), cfg.B, cfg.scheme, cfg.seed,
                                         workers=cfg.workers)


def cmd_bootstrap(args) -> int:
    from .errors import DomainError

    cfg = _config(args)
    out = _require_output(cfg)
    ds = _load(cfg)
    proc, engine = _sample_process(args, cfg, ds)
    method = cfg.bootstrap if cfg.bootstrap != "none" else _default_bootstrap(engine)
    t0 = time.perf_counter()
    draws = _draws(cfg, ds, proc, engine, method)
    fmt = cfg.format or ("binary" if out.endswith(".bin") else "csv")
    if fmt == "binary":
        draws.to_binary(out)
    elif fmt == "csv":
        draws.to_csv(out)
    else:
        raise DomainError("bootstrap draws are written as csv or binary")
    _write_json(_metadata("bootstrap", cfg, ds, engine=engine, method=method, format=fmt, B=draws.B,
                          failed=draws.failed, replicates=draws.replicates.tolist(), grid=draws.taus.tolist(),
                          seconds=time.perf_counter() - t0), _metadata_path(out, args.metadata))
    return EXIT_OK


def _coefficient(spec: str, ds) -> int:
    from .errors import DomainError

    if spec in ds.column_names:
        return ds.column_names.index(spec)
    try:
        j = int(spec)
    except ValueError:
        raise DomainError(f"unknown coefficient {spec!r}; columns are {list(ds.column_names)}") from None
    if not 0 <= j < ds.k:
        raise DomainError(f"coefficient index {j} out of range 0..{ds.k - 1}")
    return j


def cmd_test(args) -> int:
    from .inference import functional_test

    cfg = _config(args)
    ds = _load(cfg)
    proc, engine = _sample_process(args, cfg, ds)
    method = cfg.bootstrap if cfg.bootstrap != "none" else _default_bootstrap(engine)
    j = _coefficient(args.coefficient, ds)
    draws = _draws(cfg, ds, proc, engine, method)
    res = functional_test(ds, proc, draws, j, args.null, args.kind, cfg.alpha, min_replicates=args.min_replicates)
    out = res.to_dict() | {"coefficient_name": ds.column_names[j], "method": method, "engine": engine,
                           "B": draws.B, "seed": cfg.seed}
    _write_json(out, cfg.output)
    return EXIT_OK


def cmd_bands(args) -> int:
    from .export import write_bands_csv
    from .inference import uniform_bands

    cfg = _config(args)
    ds = _load(cfg)
    proc, engine = _sample_process(args, cfg, ds)
    method = cfg.bootstrap if cfg.bootstrap != "none" else _default_bootstrap(engine)
    draws = _draws(cfg, ds, proc, engine, method)
    bands = uniform_bands(ds, proc, draws, cfg.alpha, joint=not args.per_coefficient)
    fmt = cfg.format or ("csv" if (cfg.output or "").endswith(".csv") else "json")
    if fmt == "csv":
        write_bands_csv(_require_output(cfg), bands)
    else:
        _write_json(bands.to_dict() | {"method": method, "engine": engine, "B": draws.B, "seed": cfg.seed},
                    cfg.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .core import parse_grid
    from .simulate import (FunctionalStudy, HeteroskedasticDesign, LocationScaleDesign, PointwiseStudy,
                           mc_relative_accuracy, mc_size_power)

    cfg = _config(args)
    methods = tuple(m.strip() for m in args.methods.split(",")) if args.methods else None
    if args.study == "accuracy":
        design = (LocationScaleDesign(k=args.k) if args.design == "location-scale" else HeteroskedasticDesign())
        grid = parse_grid(args.taus or "0.01:0.99:0.01")
        rep = mc_relative_accuracy(design, args.n, grid, args.R, cfg.seed, workers=cfg.workers)
    elif args.study == "pointwise":
        kw = {"tau": args.tau, "coef": args.coef, "B_empirical": args.B_empirical, "B_score": cfg.B,
              "scheme": cfg.scheme}
        if methods:
            kw["methods"] = methods
        rep = mc_size_power(HeteroskedasticDesign(), args.n, PointwiseStudy(**kw), args.R, cfg.alpha, cfg.seed,
                            cfg.workers)
    else:
        kw = {"B": cfg.B, "scheme": cfg.scheme}
        if methods:
            kw["methods"] = methods
        if args.taus:
            kw["grid"] = tuple(parse_grid(args.taus).tolist())
        rep = mc_size_power(HeteroskedasticDesign(), args.n, FunctionalStudy(**kw), args.R, cfg.alpha, cfg.seed,
                            cfg.workers)
    _write_json(asdict(rep), cfg.output)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .core import parse_grid
    from .simulate import bench_engines

    cfg = _config(args)
    panels = tuple(p.strip() for p in args.panels.split(","))
    grid = parse_grid(args.taus) if args.taus else None
    rep = bench_engines(args.n, args.k, grid, cfg.B, args.repetitions, cfg.seed, panels)
    if args.markdown:
        Path(args.markdown).write_text(rep.to_markdown(), encoding="utf-8")
    else:
        sys.stderr.write(rep.to_markdown())
    _write_json(asdict(rep), cfg.output)
    return EXIT_OK


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="base seed for every random stream (default 0)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default $QRPROC_WORKERS or 1)")
    p.add_argument("--output", help="output path (JSON results go to stdout when omitted)")
    p.add_argument("--alpha", type=float, default=0.05)
    if data:
        p.add_argument("--input", help="CSV file with a header row; every non-response column is a regressor")
        p.add_argument("--response", default="y", help="name of the response column (default y)")
        p.add_argument("--engine", choices=ENGINES, default="auto")


def _inference_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--taus", default=DEFAULT_GRID, help="grid 'a:b:s' (inclusive) or 't1,t2,...'")
    p.add_argument("--process", help="process CSV written by 'process'; its estimates are used as is")
    p.add_argument("--bootstrap", choices=BOOTSTRAPS, default="none",
                   help="draws to use (default: empirical, or empirical-onestep for the one-step engine)")
    p.add_argument("--scheme", default="gaussian",
                   choices=("gaussian", "bayesian_exponential", "wild", "multinomial"))
    p.add_argument("--B", type=int, default=250)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrproc", description="Quantile regression processes and inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="one quantile, with sandwich standard errors")
    _common(p)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--metadata", help="metadata JSON path (default: OUTPUT.json)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("process", help="coefficient process over a grid")
    _common(p)
    p.add_argument("--taus", default=DEFAULT_GRID, help="grid 'a:b:s' (inclusive) or 't1,t2,...'")
    p.add_argument("--metadata", help="metadata JSON path (default: OUTPUT.json)")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("bootstrap", help="bootstrap draws of the process")
    _common(p)
    _inference_args(p)
    p.add_argument("--format", choices=("csv", "binary"), help="default: binary for *.bin, else csv")
    p.add_argument("--metadata", help="metadata JSON path (default: OUTPUT.json)")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("test", help="KS / CvM test of a constant null for one coefficient")
    _common(p)
    _inference_args(p)
    p.add_argument("--coefficient", required=True, help="column name or index")
    p.add_argument("--null", type=float, default=0.0)
    p.add_argument("--kind", choices=("KS", "CvM"), default="KS")
    p.add_argument("--min-replicates", type=int, default=100)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bands", help="uniform confidence bands")
    _common(p)
    _inference_args(p)
    p.add_argument("--per-coefficient", action="store_true", help="one critical value per coefficient")
    p.add_argument("--format", choices=("csv", "json"), help="default: csv for *.csv, else json")
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("simulate", help="Monte Carlo studies")
    _common(p, data=False)
    p.add_argument("--study", choices=("accuracy", "pointwise", "functional"), required=True)
    p.add_argument("--design", choices=("heteroskedastic", "location-scale"), default="heteroskedastic",
                   help="design for the accuracy study (size/power studies use the heteroskedastic one)")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--k", type=int, default=20, help="columns of the location-scale design")
    p.add_argument("--R", type=int, default=100)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--coef", type=int, default=2)
    p.add_argument("--taus", help="grid for the accuracy or functional study")
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--B", type=int, default=250, help="score or functional bootstrap size")
    p.add_argument("--B-empirical", dest="B_empirical", type=int, default=100)
    p.add_argument("--scheme", default="gaussian")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="engine timing (single worker)")
    _common(p, data=False)
    p.add_argument("--n", type=int, default=50000)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--B", type=int, default=50)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--taus", help="process grid (default 0.01:0.99:0.01)")
    p.add_argument("--panels", default="single,process,bootstrap")
    p.add_argument("--markdown", help="write the markdown table here (default: stderr)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception:  # noqa: BLE001 - last-resort mapping to the internal-error exit code
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
