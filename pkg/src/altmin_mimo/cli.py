"""Command-line front end.

Subcommands: ``ber-sweep``, ``iter-sweep``, ``complexity-table``,
``oracle-check``, ``detect-once``.  Values resolve as subcommand defaults <
config file < flags.  Config files are INI::

    [experiment]
    n_t = 16
    n_r = 128
    modulation = 4
    snr_db_list = 0:2:14
    detectors = altmin, mmse
    seed = 7

    [altmin]
    tol = 1e-3
    max_iter = 8
    c_scale = 16

A ``manifest.json`` written by a previous run is also accepted as a config.
Exit status: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
from dataclasses import asdict, replace
import json
import logging
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__
from . import altmin as am
from . import harness as hs
from .baselines import LinearDetectorKind, linear_detect, ml_bruteforce
from .harness import ConfigError, Experiment, ExperimentConfig
from .model import RngStream, build_constellation, demodulate, realize_system

log = logging.getLogger("altmin_mimo")

OUT_DIR_ENV = "ALTMIN_OUT_DIR"

SUBCOMMANDS = {
    "ber-sweep": Experiment.BER_VS_SNR,
    "iter-sweep": Experiment.BER_VS_ITERATIONS,
    "complexity-table": Experiment.COMPLEXITY_TABLE,
    "oracle-check": Experiment.ORACLE_CHECK,
    "detect-once": None,
}

# fields a subcommand cannot run without (after file + flags)
REQUIRED = {
    "ber-sweep": ("n_t", "n_r", "snr_db_list"),
    "iter-sweep": ("n_t", "n_r"),
    "complexity-table": (),
    "oracle-check": (),
    "detect-once": ("n_t", "n_r", "snr_db_list"),
}

SUBCOMMAND_DEFAULTS = {
    "ber-sweep": {},
    "iter-sweep": {"snr_db_list": (12.0,)},
    "complexity-table": {"n_r": 128, "snr_db_list": (12.0,), "trials": 5},
    "oracle-check": {
        "n_t": 4, "n_r": 8, "snr_db_list": (10.0,), "trials": 100,
        "altmin": {"tol": 1e-10, "max_iter": 5000, "c_scale": 1.0},
    },
    "detect-once": {"trials": 1},
}

# flag dest -> config field
FLAG_FIELDS = {
    "nt": "n_t", "nr": "n_r", "mod": "modulation", "snr": "snr_db_list",
    "detectors": "detectors", "seed": "seed", "trials": "trials",
    "min_bit_errors": "min_bit_errors", "max_bits": "max_bits",
    "snr_convention": "snr_convention", "workers": "workers",
    "iter_cap": "iter_cap", "iter_step": "iter_step", "nt_values": "n_t_values",
    "parity": "parity_iterations",
}
ALTMIN_FLAGS = {"tol": "tol", "max_iter": "max_iter", "c_scale": "c_scale"}


def parse_snr_list(text: str) -> tuple[float, ...]:
    """``"12"``, ``"8,10,12"`` or ``"start:step:stop"`` (stop inclusive)."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"SNR range must be start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("SNR range step must be > 0")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + k * step, 10) for k in range(max(n, 0)))
    return tuple(float(p) for p in text.replace(" ", "").split(",") if p)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in str(text).replace(" ", "").split(",") if p)


def _parity_map(text) -> dict[int, int]:
    if isinstance(text, dict):
        return {int(k): int(v) for k, v in text.items()}
    out = {}
    for item in str(text).replace(" ", "").split(","):
        if item:
            k, v = item.split(":")
            out[int(k)] = int(v)
    return out


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _none_or_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "nt", "n_t"):
        return None
    return float(text)


CONVERTERS = {
    "n_t": int, "n_r": int, "modulation": int, "seed": int, "trials": int,
    "min_bit_errors": int, "max_bits": lambda s: int(float(s)), "workers": int,
    "iter_cap": int, "iter_step": int, "batch_trials": int,
    "snr_db_list": lambda s: s if isinstance(s, (list, tuple)) else parse_snr_list(s),
    "detectors": lambda s: tuple(s) if isinstance(s, (list, tuple))
    else tuple(p.strip() for p in str(s).split(",") if p.strip()),
    "n_t_values": lambda s: tuple(s) if isinstance(s, (list, tuple)) else _int_list(s),
    "parity_iterations": _parity_map,
    "snr_convention": str,
    "noiseless": _bool,
    "experiment": str,
}
ALTMIN_CONVERTERS = {
    "tol": float, "max_iter": int, "c_scale": _none_or_float, "record_trace": _bool,
}


def _convert(name: str, value, table) -> object:
    if name not in table:
        raise ConfigError(name, "unknown configuration field")
    try:
        return table[name](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"invalid value {value!r} ({exc})") from None


def load_config_file(path) -> dict:
    """Read an INI config (or a previous run's manifest.json) into a flat dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"no such file: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        data = data.get("config", data)
        out = {}
        for k, v in data.items():
            if k == "altmin":
                out["altmin"] = {
                    ak: _convert(ak, av, ALTMIN_CONVERTERS) for ak, av in v.items()
                }
            elif k == "experiment" or v is None:
                continue
            else:
                out[k] = _convert(k, v, CONVERTERS)
        return out
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    out: dict = {}
    for section in cp.sections():
        if section == "altmin":
            out["altmin"] = {
                k: _convert(k, v, ALTMIN_CONVERTERS) for k, v in cp.items(section)
            }
        elif section == "experiment":
            for k, v in cp.items(section):
                if k != "experiment":
                    out[k] = _convert(k, v, CONVERTERS)
        else:
            raise ConfigError(section, "unknown config section")
    return out


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cmd = args.command
    values: dict = {}
    altmin_vals: dict = {}
    defaults = dict(SUBCOMMAND_DEFAULTS[cmd])
    altmin_vals.update(defaults.pop("altmin", {}))
    values.update(defaults)
    if args.config:
        file_vals = load_config_file(args.config)
        altmin_vals.update(file_vals.pop("altmin", {}))
        values.update(file_vals)
    for dest, name in FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = _convert(name, v, CONVERTERS)
    for dest, name in ALTMIN_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            altmin_vals[name] = _convert(name, v, ALTMIN_CONVERTERS)
    if getattr(args, "noiseless", False):
        values["noiseless"] = True
    detector = getattr(args, "detector", None)
    if detector is not None:
        values["detectors"] = (detector,)
    for name in REQUIRED[cmd]:
        if name not in values:
            flag = {v: k for k, v in FLAG_FIELDS.items()}.get(name, name)
            raise ConfigError(flag, f"missing required field '{flag}' ({name})")
    try:
        acfg = am.AltMinConfig(**altmin_vals)
    except ValueError as exc:
        raise ConfigError("altmin", str(exc)) from None
    exp = SUBCOMMANDS[cmd] or Experiment.BER_VS_SNR
    return ExperimentConfig(experiment=exp, altmin=acfg, **values)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="altmin-mimo",
        description="AltMin massive-MIMO uplink detection experiments",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file or a previous manifest.json")
    common.add_argument("--nt", type=int, help="UE antennas N_t")
    common.add_argument("--nr", type=int, help="BS antennas N_r")
    common.add_argument("--mod", type=int, help="QAM order M (4 or 16)")
    common.add_argument("--snr", help="SNR list in dB: 12 | 8,10 | start:step:stop")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int, help="minimum fading blocks per point")
    common.add_argument("--min-bit-errors", type=int, dest="min_bit_errors")
    common.add_argument("--max-bits", type=float, dest="max_bits", help="bit budget per point")
    common.add_argument("--snr-convention", dest="snr_convention",
                        help="per_user (sigma^2 = N_r 10^(-SNR/10)) or rx_antenna (N_t 10^(-SNR/10))")
    common.add_argument("--noiseless", action="store_true", help="force sigma_v^2 = 0")
    common.add_argument("--tol", type=float, help="AltMin convergence tolerance")
    common.add_argument("--max-iter", type=int, dest="max_iter", help="AltMin iteration cap T")
    common.add_argument("--c-scale", dest="c_scale", help="AltMin scaling C (number, or 'nt')")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: available cores)")
    common.add_argument("--out-dir", dest="out_dir",
                        help=f"output directory (env {OUT_DIR_ENV}, default ./results)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    b = sub.add_parser("ber-sweep", parents=[common], help="BER versus SNR")
    b.add_argument("--detectors", help="comma list from altmin,mmse,zf,ml")

    it = sub.add_parser("iter-sweep", parents=[common], help="BER versus AltMin iteration cap")
    it.add_argument("--iter-cap", type=int, dest="iter_cap")
    it.add_argument("--iter-step", type=int, dest="iter_step")

    ct = sub.add_parser("complexity-table", parents=[common],
                        help="multiplications per detection, AltMin vs MMSE")
    ct.add_argument("--nt-values", dest="nt_values", help="comma list of N_t")
    ct.add_argument("--parity", help="N_t:T pairs, e.g. 16:6,32:8; measured if omitted")
    ct.add_argument("--iter-cap", type=int, dest="iter_cap")
    ct.add_argument("--sweep-min-bit-errors", type=int, dest="sweep_min_bit_errors",
                    default=200, help="MMSE errors per parity sweep when measuring T")

    sub.add_parser("oracle-check", parents=[common],
                   help="AltMin (C=1) against a projected-gradient oracle")

    d = sub.add_parser("detect-once", parents=[common], help="detect one realization")
    d.add_argument("--detector", choices=hs.DETECTORS, default="altmin")
    d.add_argument("--trial", type=int, default=0, help="stream id of the realization")
    d.add_argument("--trace-csv", dest="trace_csv", help="write the AltMin trace here")
    return p


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get(OUT_DIR_ENV) or "results"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(args, cfg: ExperimentConfig, argv, extra=None) -> dict:
    m = {
        "tool": "altmin-mimo",
        "version": __version__,
        "subcommand": args.command,
        "argv": list(argv),
        "snr_convention": cfg.snr_convention,
        "config": cfg.to_dict(),
    }
    if extra:
        m.update(extra)
    return m


def _print_table(rows: list[dict], cols: list[str]) -> None:
    widths = {c: max(len(c), *(len(_fmt(r[c])) for r in rows)) if rows else len(c) for c in cols}
    print("  ".join(c.rjust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(_fmt(r[c]).rjust(widths[c]) for c in cols))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _cmd_ber_sweep(args, cfg, out: Path, argv) -> None:
    res = hs.run_ber_vs_snr(cfg)
    hs.write_records_csv(res.records, out / "records.csv")
    summary = [p.to_dict() for p in res.summary]
    hs.write_json({"snr_convention": cfg.snr_convention, "points": summary}, out / "summary.json")
    _print_table(summary, ["snr_db", "detector", "ber", "ci95_half_width", "bits", "mean_real_mults"])


def _cmd_iter_sweep(args, cfg, out: Path, argv) -> None:
    res = hs.run_ber_vs_iterations(cfg)
    hs.write_records_csv(res.records, out / "records.csv")
    payload = {
        "snr_convention": cfg.snr_convention,
        "snr_db": res.snr_db,
        "n_t": cfg.n_t,
        "n_r": cfg.n_r,
        "parity_iterations": res.parity_t,
        "mmse": res.mmse.to_dict(),
        "altmin": {str(t): p.to_dict() for t, p in res.altmin.items()},
        "grid": list(res.grid),
    }
    hs.write_json(payload, out / "summary.json")
    _print_table(res.table(), ["T", "ber", "ci95_half_width", "mmse_ber", "mmse_ci95_half_width"])
    print(f"parity iteration count: {res.parity_t}")


def _cmd_complexity(args, cfg, out: Path, argv) -> None:
    parity = cfg.parity_iterations
    measured = {}
    if not parity:
        parity = {}
        for n_t in cfg.n_t_values:
            sweep_cfg = ExperimentConfig(
                experiment=Experiment.BER_VS_ITERATIONS, n_t=n_t, n_r=cfg.n_r,
                modulation=cfg.modulation, snr_db_list=cfg.snr_db_list[:1],
                detectors=("altmin", "mmse"), altmin=cfg.altmin, trials=20,
                min_bit_errors=args.sweep_min_bit_errors, max_bits=cfg.max_bits,
                seed=cfg.seed, snr_convention=cfg.snr_convention, workers=cfg.workers,
                iter_cap=cfg.iter_cap, iter_step=cfg.iter_step,
            )
            t = hs.run_ber_vs_iterations(sweep_cfg).parity_t
            if t is None:
                raise RuntimeError(f"no parity within iter_cap={cfg.iter_cap} for n_t={n_t}")
            parity[n_t] = measured[n_t] = t
            log.info("n_t=%d parity T=%d", n_t, t)
        cfg = replace(cfg, parity_iterations=parity)
    rows = hs.run_complexity_table(cfg)
    table = [r.to_dict() for r in rows]
    hs.write_json(
        {"snr_convention": cfg.snr_convention, "rows": table,
         "parity_measured": bool(measured)},
        out / "summary.json",
    )
    _print_table(table, ["n_t", "n_r", "altmin_iterations", "mults_mmse", "mults_altmin", "ratio"])
    return {"parity_iterations": {str(k): v for k, v in parity.items()}}


def _cmd_oracle(args, cfg, out: Path, argv) -> int:
    rep = hs.run_oracle_check(cfg)
    rows = [asdict(r) | {"passed": r.passed} for r in rep.rows]
    hs.write_json(
        {"n_pass": rep.n_pass, "n": len(rep.rows), "c_scale": rep.c_scale, "rows": rows},
        out / "summary.json",
    )
    print(f"oracle check: {rep.n_pass}/{len(rep.rows)} passed (c_scale={rep.c_scale})")
    return 0 if rep.all_passed else 1


def _cmd_detect_once(args, cfg, out: Path, argv) -> None:
    c = build_constellation(cfg.modulation)
    snr = cfg.snr_db_list[0]
    sys_ = realize_system(
        cfg.n_t, cfg.n_r, c, snr, RngStream(cfg.seed, args.trial),
        convention=cfg.snr_convention, noiseless=cfg.noiseless,
    )
    name = cfg.detectors[0]
    if name == "altmin":
        acfg = am.AltMinConfig(cfg.altmin.tol, cfg.altmin.max_iter, cfg.altmin.c_scale,
                               record_trace=bool(args.trace_csv))
        res = am.run(sys_, acfg, c)
        if args.trace_csv:
            am.write_trace_csv(res, args.trace_csv)
    elif name == "ml":
        res = ml_bruteforce(sys_, c)
    else:
        res = linear_detect(sys_, LinearDetectorKind(name), c)
    rx_bits = demodulate(res.x_hat_sliced, c)
    errors = int(np.count_nonzero(rx_bits != sys_.bits))
    tx_sym = sys_.x_true_complex
    rx_sym = res.x_hat_sliced[: cfg.n_t] + 1j * res.x_hat_sliced[cfg.n_t :]
    print(f"detector={name} n_t={cfg.n_t} n_r={cfg.n_r} snr_db={snr} "
          f"sigma_v2={sys_.noise_var_complex:.6g} ({cfg.snr_convention})")
    print(f"{'k':>3}  {'transmitted':>22}  {'detected':>22}")
    for k in range(cfg.n_t):
        print(f"{k:>3}  {tx_sym[k]:>22.4f}  {rx_sym[k]:>22.4f}")
    r_det = sys_.residual_sq(res.x_hat_sliced)
    r_true = sys_.residual_sq(sys_.x_true_real)
    print(f"residual ||y-Hx||^2: detected={r_det:.6g} true={r_true:.6g}")
    print(f"bit errors: {errors}/{sys_.bits.size}  iterations={res.iterations} "
          f"real_mults={res.multiply_count}")
    hs.write_json(
        {"detector": name, "bit_errors": errors, "bits": int(sys_.bits.size),
         "residual_detected": r_det, "residual_true": r_true,
         "iterations": res.iterations, "real_mults": res.multiply_count,
         "x_true_real": sys_.x_true_real.tolist(),
         "x_hat_sliced": res.x_hat_sliced.tolist()},
        out / "summary.json",
    )


HANDLERS = {
    "ber-sweep": _cmd_ber_sweep,
    "iter-sweep": _cmd_iter_sweep,
    "complexity-table": _cmd_complexity,
    "oracle-check": _cmd_oracle,
    "detect-once": _cmd_detect_once,
}


def parse_and_run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.workers is None:
        args.workers = os.cpu_count() or 1
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"altmin-mimo: config error: {exc}", file=sys.stderr)
        return 2
    try:
        out = _out_dir(args)
        extra = HANDLERS[args.command](args, cfg, out, argv)
        status = extra if isinstance(extra, int) else 0
        hs.write_json(
            _manifest(args, cfg, argv, extra if isinstance(extra, dict) else None),
            out / "manifest.json",
        )
    except ConfigError as exc:
        print(f"altmin-mimo: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("failure", exc_info=True)
        print(f"altmin-mimo: error: {exc}", file=sys.stderr)
        return 1
    return status


def main() -> None:
    sys.exit(parse_and_run())
