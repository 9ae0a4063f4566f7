"""Command line front end.

Subcommands cover the measurement workflow end to end: design an excitation,
simulate a benchmark cell (or ingest a measured CSV), analyze distortion,
identify linear and nonlinear models, and validate a stored model against a
record. Configuration comes from a TOML file with flag overrides; every
command writes a deterministic manifest (config hash, package and library
versions, input digests) next to its outputs, plus report figures alongside
the delimited files.
"""

import argparse
import dataclasses
import importlib.metadata
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from . import bench, linmodel, lpm, plots, pnlss, signals, spectral, trend
from .errors import ConfigError, FormatError, NlsidError
from .util import config_hash, file_digest, rfft_norm

OUT_ENV = "NLSID_OUT"

DEFAULTS = {
    "signal": {
        "fs": 50.0,
        "samples": 5000,
        "band": [1.0, 5.0],
        "grid": "odd-random",
        "group_size": 4,
        "omit_per_group": 1,
        "rms": 20.0,
        "seed": 0,
        "realizations": 2,
    },
    "record": {"periods": 20, "transient_skip": 1},
    "cell": {
        "preset": "soc10",
        "nl_even": None,
        "nl_odd": None,
        "drift_rate": None,
        "noise_std": None,
    },
    "analysis": {"margin_db": 6.0},
    "trend": {"enable": True, "lam": None, "lam_frac": 0.1, "tol": 1e-8},
    "lpm": {"order": 2, "dof_extra": 1},
    "linear": {"max_order": 4, "refine_iter": 100},
    "pnlss": {
        "degrees": [2, 3],
        "max_iter": 100,
        "transient_periods": 1,
        "validation_periods": 2,
    },
    "output": {"dir": "out"},
}


def _package_version():
    try:
        return importlib.metadata.version("nlsid")
    except importlib.metadata.PackageNotFoundError:
        return "0.0.0"


def _merge(base, override, path=""):
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config section {path + key!r} must be a table")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(path=None):
    if path is None:
        return json.loads(json.dumps(DEFAULTS))
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return _merge(DEFAULTS, raw)


def _apply_flags(cfg, args):
    flag_map = {
        "fs": ("signal", "fs"),
        "samples": ("signal", "samples"),
        "rms": ("signal", "rms"),
        "seed": ("signal", "seed"),
        "realizations": ("signal", "realizations"),
        "grid_kind": ("signal", "grid"),
        "periods": ("record", "periods"),
        "transient_skip": ("record", "transient_skip"),
        "preset": ("cell", "preset"),
        "margin_db": ("analysis", "margin_db"),
        "max_order": ("linear", "max_order"),
        "max_iter": ("pnlss", "max_iter"),
    }
    for flag, (section, key) in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg[section][key] = val
    if getattr(args, "band", None) is not None:
        cfg["signal"]["band"] = list(args.band)
    if getattr(args, "no_detrend", False):
        cfg["trend"]["enable"] = False
    return cfg


def _out_dir(cfg, args):
    root = getattr(args, "out", None) or os.environ.get(OUT_ENV) or cfg["output"]["dir"]
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _signal_spec(cfg):
    s = cfg["signal"]
    return signals.MultisineSpec(
        fs=float(s["fs"]),
        N=int(s["samples"]),
        band=tuple(float(x) for x in s["band"]),
        grid_kind=s["grid"],
        group_size=int(s["group_size"]),
        omit_per_group=int(s["omit_per_group"]),
        target_rms=float(s["rms"]) if s["rms"] else None,
        seed=int(s["seed"]),
    )


def _cell_from_config(cfg):
    cell = bench.cell_preset(cfg["cell"]["preset"], fs=float(cfg["signal"]["fs"]))
    overrides = {
        k: float(cfg["cell"][k])
        for k in ("nl_even", "nl_odd", "drift_rate", "noise_std")
        if cfg["cell"][k] is not None
    }
    return dataclasses.replace(cell, **overrides) if overrides else cell


def _write_manifest(out, command, cfg, inputs, outputs):
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "package_version": _package_version(),
        "numpy_version": np.__version__,
        "scipy_version": importlib.metadata.version("scipy"),
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _load_grid(args, record_path=None):
    grid_path = getattr(args, "grid", None)
    if grid_path is None and record_path is not None:
        candidate = Path(record_path).with_name("grid.json")
        if candidate.exists():
            grid_path = candidate
    if grid_path is None:
        raise ConfigError("no harmonic grid given (--grid) and none found next to the record")
    return Path(grid_path), signals.load_grid_json(grid_path)


def _check_grid(grid, rec):
    top = int(np.max(grid.all_inband(), initial=0))
    if top > rec.N // 2:
        raise ConfigError(
            f"grid bins reach {top} but the record period holds only {rec.N} samples"
        )


def _prepare_record(measured, cfg):
    """Transient skip plus optional detrending, as configured."""
    rec = measured.rec
    skip = int(cfg["record"]["transient_skip"])
    if skip and rec.P > skip:
        rec = rec.discard_periods(skip)
    trends = None
    if cfg["trend"]["enable"]:
        lam = cfg["trend"]["lam"]
        rec, trends = trend.detrend_record(
            rec,
            lam=float(lam) if lam is not None else None,
            lam_frac=float(cfg["trend"]["lam_frac"]),
            tol=float(cfg["trend"]["tol"]),
        )
    return rec, trends


def cmd_design(cfg, args):
    out = _out_dir(cfg, args)
    spec = _signal_spec(cfg)
    sigs = signals.realizations(spec, int(cfg["signal"]["realizations"]))
    outputs = []
    for r, sig in enumerate(sigs):
        p = out / f"signal_r{r}.csv"
        signals.export_signal_csv(sig, p)
        outputs.append(p)
    gpath = out / "grid.json"
    signals.export_grid_json(sigs[0], gpath)
    outputs.append(gpath)
    outputs.append(plots.save_signal_figure(sigs[0], out / "signal.png"))
    _write_manifest(out, "design", cfg, [], outputs)
    g = sigs[0].grid
    print(
        f"designed {len(sigs)} realization(s): {len(g.excited)} excited, "
        f"{len(g.odd_detect)} odd and {len(g.even_detect)} even detection lines, "
        f"resolution {spec.f0:g} Hz, rms {sigs[0].realized_rms:.6g}"
    )
    return 0


def cmd_simulate(cfg, args):
    out = _out_dir(cfg, args)
    spec = _signal_spec(cfg)
    sigs = signals.realizations(spec, int(cfg["signal"]["realizations"]))
    cell = _cell_from_config(cfg)
    rec = bench.simulate_cell(cell, sigs, int(cfg["record"]["periods"]), seed=int(cfg["signal"]["seed"]))
    rpath = out / "record.csv"
    bench.export_record_csv(rec, rpath, extra_meta={"label": cell.label})
    gpath = out / "grid.json"
    signals.export_grid_json(sigs[0], gpath)
    outputs = [rpath, bench._sidecar_path(rpath), gpath]
    _write_manifest(out, "simulate", cfg, [], outputs)
    print(
        f"simulated preset {cell.label}: {rec.R} realization(s) x {rec.P} period(s) "
        f"x {rec.N} samples at {rec.fs:g} Hz -> {rpath}"
    )
    return 0


def cmd_ingest(cfg, args):
    out = _out_dir(cfg, args)
    src = Path(args.record)
    measured = bench.ingest_csv(
        src,
        meta_path=getattr(args, "meta", None),
        N=getattr(args, "samples", None),
        P=getattr(args, "periods", None),
        R=getattr(args, "realizations", None),
        fs=getattr(args, "fs", None),
    )
    rec = measured.rec
    rpath = out / "record.csv"
    bench.export_record_csv(rec, rpath, extra_meta=measured.meta)
    _write_manifest(out, "ingest", cfg, [src], [rpath, bench._sidecar_path(rpath)])
    print(
        f"ingested {src}: {rec.R} realization(s) x {rec.P} period(s) x {rec.N} samples "
        f"at {rec.fs:g} Hz"
    )
    return 0


def cmd_analyze(cfg, args):
    out = _out_dir(cfg, args)
    src = Path(args.record)
    measured = bench.ingest_csv(src)
    gpath, grid = _load_grid(args, src)
    _check_grid(grid, measured.rec)
    rec, _ = _prepare_record(measured, cfg)
    spec_rec = spectral.to_spectra(rec, grid)
    report = spectral.distortion_analysis(spec_rec, margin_db=float(cfg["analysis"]["margin_db"]))
    jpath = out / "distortion.json"
    cpath = out / "distortion.csv"
    spectral.export_report_json(report, jpath)
    spectral.export_report_csv(report, cpath)
    fig = plots.save_distortion_figure(report, out / "distortion.png")
    _write_manifest(out, "analyze", cfg, [src, gpath], [jpath, cpath, fig])
    print(
        f"verdict: {report.verdict} "
        f"(even {report.band_level_db('even'):+.1f} dB, odd {report.band_level_db('odd'):+.1f} dB "
        f"vs noise {report.band_level_db('noise'):+.1f} dB)"
    )
    return 0


def _split_est_val(rec, val_periods):
    if val_periods < 1 or rec.P < val_periods + 1:
        return rec, None
    est = spectral.TimeRecord(rec.u[:, :-val_periods], rec.y[:, :-val_periods], rec.fs)
    val = spectral.TimeRecord(rec.u[:, -val_periods:], rec.y[:, -val_periods:], rec.fs)
    return est, val


def _ac_rmse(model, rec, transient_periods=1):
    """Steady-state rms output error with the constant offset removed.

    Detrending strips the record mean together with the drift, while the
    model keeps its own DC response, so models are scored on the mean-free
    residual.
    """
    R, P, N = rec.u.shape
    u_mean = rec.u.mean(axis=1)
    y_mean = rec.y.mean(axis=1)
    total = 0.0
    for r in range(R):
        y, _ = model.simulate(np.tile(u_mean[r], transient_periods + 1))
        err = y[-N:] - y_mean[r]
        err = err - err.mean()
        total += float(err @ err)
    return float(np.sqrt(total / (R * N)))


def cmd_identify(cfg, args):
    out = _out_dir(cfg, args)
    src = Path(args.record)
    measured = bench.ingest_csv(src)
    gpath, grid = _load_grid(args, src)
    _check_grid(grid, measured.rec)
    rec, trends = _prepare_record(measured, cfg)
    outputs = []
    if trends is not None:
        # first realization, for the report only: original = detrended + trend
        detrended0 = rec.y[0].ravel()
        res = trend.TrendResult(
            trend=trends[0],
            detrended=detrended0,
            lam=0.0,
            duality_gap=0.0,
            gap_tol=0.0,
            dual_residual=0.0,
            feas_tol=0.0,
            n_iter=0,
            kink_idx=np.array([], dtype=int),
        )
        y_orig = detrended0 + trends[0]
        tpath = out / "trend.csv"
        trend.export_trend_csv(y_orig, res, tpath)
        outputs.append(tpath)
        outputs.append(plots.save_trend_figure(y_orig, res, out / "trend.png", fs=rec.fs))

    spec_rec = spectral.to_spectra(rec, grid)
    cfg_lpm = lpm.LpmConfig(R=int(cfg["lpm"]["order"]), dof_extra=int(cfg["lpm"]["dof_extra"]))
    bla = lpm.bla_robust(spec_rec, cfg_lpm)
    bpath = out / "bla.csv"
    lpm.export_bla_csv(bla, bpath)
    outputs += [bpath, plots.save_bla_figure(bla, out / "bla.png")]

    orders = linmodel.mdl_select(bla, max_order=int(cfg["linear"]["max_order"]))
    rat = linmodel.fit_rational(bla, *orders)
    ss0 = linmodel.balanced_realization(rat, fs=rec.fs)
    ss, ml_res = linmodel.ml_refine(ss0, bla, max_iter=int(cfg["linear"]["refine_iter"]))
    if np.max(np.abs(np.linalg.eigvals(ss.A))) >= 1.0:
        # refinement drove a pole outside the unit circle; the nonlinear
        # stage needs a simulable starting point, so keep the balanced model
        warnings.warn("refined linear model is unstable, reverting to the balanced model")
        ss = ss0
    lin_path = out / "linear_model.json"
    linmodel.export_model_json(
        ss, lin_path, provenance={"orders": list(orders), "config_hash": config_hash(cfg)}
    )
    outputs.append(lin_path)

    est, val = _split_est_val(rec, int(cfg["pnlss"]["validation_periods"]))
    init = pnlss.init_from_linear(ss, tuple(cfg["pnlss"]["degrees"]), est)
    # distortion products land well outside the excited band, so the fit
    # must explain every line except DC or time-domain error stays high
    opts = pnlss.FitOptions(
        max_iter=int(cfg["pnlss"]["max_iter"]),
        transient_periods=int(cfg["pnlss"]["transient_periods"]),
        bins=np.arange(1, est.N // 2 + 1),
    )
    model, fit_report = pnlss.fit(init, est, grid, opts, val_rec=val)
    npath = out / "pnlss_model.json"
    pnlss.export_model_json(model, npath, provenance={"config_hash": config_hash(cfg)})
    fpath = out / "fit_report.csv"
    pnlss.export_fit_csv(fit_report, fpath)
    outputs += [npath, fpath, plots.save_fit_figure(fit_report, out / "fit.png")]

    score_rec = val if val is not None else est
    rmse_lin = _ac_rmse(ss, score_rec)
    rmse_nl = _ac_rmse(model, score_rec)
    epath = out / "error_spectra.csv"
    fig = _error_spectra(ss, model, score_rec, grid, epath, out / "errors.png")
    outputs += [epath, fig]

    summary = {
        "orders": list(orders),
        "n_states": ss.n_x,
        "rmse_linear": rmse_lin,
        "rmse_pnlss": rmse_nl,
        "rmse_ratio": rmse_nl / rmse_lin if rmse_lin else float("nan"),
        "fit_status": fit_report.status,
        "fit_iterations": fit_report.n_iter,
        "ml_status": ml_res.status,
        "validation_periods": 0 if val is None else val.P,
    }
    spath = out / "summary.json"
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    outputs.append(spath)
    _write_manifest(out, "identify", cfg, [src, gpath], outputs)
    print(
        f"linear order {orders}, rmse {rmse_lin:.4e}; "
        f"nonlinear rmse {rmse_nl:.4e} (ratio {summary['rmse_ratio']:.3f})"
    )
    return 0


def _error_spectra(ss, model, rec, grid, csv_path, fig_path):
    import csv as csv_mod

    bins = grid.all_inband()
    freq = bins * rec.fs / rec.N
    u_mean = rec.u.mean(axis=1)[0]
    y_mean = rec.y.mean(axis=1)[0]
    Y = rfft_norm(y_mean)[bins]
    y_lin, _ = ss.simulate(np.tile(u_mean, 2))
    y_nl, _ = model.simulate(np.tile(u_mean, 2))
    E_lin = rfft_norm(y_lin[-rec.N :])[bins] - Y
    E_nl = rfft_norm(y_nl[-rec.N :])[bins] - Y
    with open(csv_path, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["bin", "freq_hz", "abs_y", "abs_err_linear", "abs_err_pnlss"])
        for i, b in enumerate(bins):
            writer.writerow(
                [
                    int(b),
                    float(freq[i]),
                    repr(float(np.abs(Y[i]))),
                    repr(float(np.abs(E_lin[i]))),
                    repr(float(np.abs(E_nl[i]))),
                ]
            )
    return plots.save_error_spectra_figure(freq, Y, E_lin, E_nl, fig_path)


def cmd_validate(cfg, args):
    out = _out_dir(cfg, args)
    src = Path(args.record)
    mpath = Path(args.model)
    measured = bench.ingest_csv(src)
    rec, _ = _prepare_record(measured, cfg)
    with open(mpath) as fh:
        kind = json.load(fh).get("kind")
    if kind == "state_space":
        model = linmodel.load_model_json(mpath)
    elif kind == "pnlss":
        model = pnlss.load_model_json(mpath)
    else:
        raise FormatError(f"unknown model kind {kind!r} in {mpath}")
    err = _ac_rmse(model, rec)
    level = float(np.sqrt(np.mean(rec.y**2)))
    result = {
        "model": str(mpath),
        "kind": kind,
        "rmse": err,
        "output_rms": level,
        "rmse_over_rms": err / level if level else float("nan"),
    }
    vpath = out / "validation.json"
    with open(vpath, "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)

    bins_all = np.arange(1, rec.N // 2 + 1)
    u_mean = rec.u.mean(axis=1)[0]
    y_mean = rec.y.mean(axis=1)[0]
    ysim, _ = model.simulate(np.tile(u_mean, 2))
    E = rfft_norm(ysim[-rec.N :]) - rfft_norm(y_mean)
    freq = bins_all * rec.fs / rec.N
    fig = plots.save_error_spectra_figure(
        freq,
        rfft_norm(y_mean)[bins_all],
        E[bins_all],
        E[bins_all],
        out / "validation.png",
    )
    _write_manifest(out, "validate", cfg, [src, mpath], [vpath, fig])
    print(f"{kind} model rmse {err:.4e} ({result['rmse_over_rms']:.4f} of output rms)")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out", help=f"output directory (or ${OUT_ENV})")
    common.add_argument("--fs", type=float)
    common.add_argument("--samples", type=int, help="samples per period")
    common.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"))
    common.add_argument("--rms", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--realizations", type=int)
    common.add_argument("--periods", type=int)
    common.add_argument("--transient-skip", dest="transient_skip", type=int)
    common.add_argument("--grid-kind", dest="grid_kind", choices=signals.GRID_KINDS)
    common.add_argument("--preset")
    common.add_argument("--margin-db", dest="margin_db", type=float)
    common.add_argument("--max-order", dest="max_order", type=int)
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--no-detrend", action="store_true")

    parser = argparse.ArgumentParser(prog="nlsid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("design", parents=[common], help="design a multisine excitation")
    sub.add_parser("simulate", parents=[common], help="simulate a benchmark cell record")

    p = sub.add_parser("ingest", parents=[common], help="validate and canonicalize a record CSV")
    p.add_argument("record")
    p.add_argument("--meta", help="sidecar JSON path")

    p = sub.add_parser("analyze", parents=[common], help="distortion detection-line analysis")
    p.add_argument("record")
    p.add_argument("--grid", help="grid JSON from the design step")

    p = sub.add_parser("identify", parents=[common], help="estimate linear + nonlinear models")
    p.add_argument("record")
    p.add_argument("--grid", help="grid JSON from the design step")

    p = sub.add_parser("validate", parents=[common], help="score a stored model on a record")
    p.add_argument("record")
    p.add_argument("--model", required=True, help="model JSON (linear or nonlinear)")
    return parser


COMMANDS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "analyze": cmd_analyze,
    "identify": cmd_identify,
    "validate": cmd_validate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_flags(cfg, args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NlsidError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
