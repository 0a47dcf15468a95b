"""
Command-line driver: scenario loading, the three experiment families, CSV output.

    fdwpt rate-region --config scenario.json --out-dir results/
    fdwpt partial-csi --config scenario.json --out-dir results/
    fdwpt validate    --config scenario.json --out-dir results/

``n_tx`` and ``power_dbm`` may be lists; every combination is then run and
written to its own ``nt<N_t>_p<P>dBm`` subdirectory.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import fullcsi, mc, partialcsi
from .model import CovarianceModel, SystemParams, dbm_to_watts, sample_realization

log = logging.getLogger("fdwpt")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3

RATE_REGION_COLUMNS = ("realization_id", "r_b_target_bpcu", "method", "alpha",
                       "ms_rate_bpcu", "feasible")
RATE_REGION_AVG_COLUMNS = ("grid_index", "method", "r_b_target_bpcu", "ms_rate_bpcu",
                           "feasible_fraction")
PARTIAL_COLUMNS = ("rho", "alpha_opt", "beta_opt", "ergodic_rate_bpcu", "outage_bound",
                   "outage_exact", "outage_mc")
VALIDATION_COLUMNS = ("quantity", "sweep_value", "analytic", "mc", "stderr", "allowed",
                      "passed")


class ConfigError(ValueError):
    """Invalid scenario file; the message names the offending key."""


# key -> (default, kind); kinds drive parsing and range checks
_KEYS: dict[str, tuple[Any, str]] = {
    "n_total": (6, "int"),
    "n_tx": (4, "int_or_list"),
    "power_dbm": (0.0, "dbm_or_list"),
    "eta": (0.5, "unit_open_closed"),
    "distance_m": (10.0, "positive"),
    "pathloss_exp": (3.0, "pathloss"),
    "noise_bs_dbm": (-70.0, "dbm"),
    "noise_ms_dbm": (-70.0, "dbm"),
    "li_bs_dbm": (30.0, "dbm"),
    "li_ms_dbm": (30.0, "dbm"),
    "gamma_b_bpcu": (3.0, "nonneg"),
    "rho_grid": ([1.0, 0.47, 0.2, 0.1, 0.05], "rho_list"),
    "theta_b_deg": (5.0, "angle"),
    "theta_m_deg": (15.0, "angle"),
    "sigma_theta_deg": (10.0, "spread"),
    "alpha_step": (1e-3, "alpha_step"),
    "rb_grid_points": (20, "int_ge2"),
    "realizations": (100, "int_ge1"),
    "mc_samples": (1_000_000, "samples"),
    "seed": (0, "seed"),
    "partial_alpha_step": (0.01, "alpha_step"),
    "beta_grid_points": (64, "int_ge1"),
    "tolerance_scale": (1.0, "nonneg"),
}


@dataclass(frozen=True)
class Scenario:
    n_total: int
    n_tx: tuple
    power_dbm: tuple
    eta: float
    distance_m: float
    pathloss_exp: float
    noise_bs_dbm: float
    noise_ms_dbm: float
    li_bs_dbm: float
    li_ms_dbm: float
    gamma_b_bpcu: float
    rho_grid: tuple
    theta_b_deg: float
    theta_m_deg: float
    sigma_theta_deg: float
    alpha_step: float
    rb_grid_points: int
    realizations: int
    mc_samples: int
    seed: int
    partial_alpha_step: float
    beta_grid_points: int
    tolerance_scale: float

    def cases(self):
        """(n_tx, power_dbm) combinations in file order."""
        return list(itertools.product(self.n_tx, self.power_dbm))

    def params(self, n_tx: int, power_dbm: float, rho: float = 1.0) -> SystemParams:
        return SystemParams(
            p_bs=dbm_to_watts(power_dbm), eta=self.eta, n_total=self.n_total, n_tx=n_tx,
            sigma2_b=dbm_to_watts(self.noise_bs_dbm), sigma2_m=dbm_to_watts(self.noise_ms_dbm),
            sigma2_li_bs=dbm_to_watts(self.li_bs_dbm), sigma2_li_ms=dbm_to_watts(self.li_ms_dbm),
            d=self.distance_m, tau=self.pathloss_exp, gamma_b=self.gamma_b_bpcu, rho=rho)


def _number(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite, got {value!r}")
    return float(value)


def _integer(key: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return value


def _dbm(key: str, value: Any) -> float:
    if isinstance(value, str):
        text = value.strip()
        if text.lower().endswith("dbm"):
            text = text[:-3].strip()
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot read a dBm value from {value!r}") from None
    return _number(key, value)


def _as_list(key: str, value: Any) -> list:
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError(f"{key}: list must not be empty")
    return items


def _parse_value(key: str, kind: str, value: Any):
    if kind == "int":
        v = _integer(key, value)
        if v < 2:
            raise ConfigError(f"{key}: must be >= 2, got {v}")
        return v
    if kind == "int_or_list":
        out = tuple(_integer(key, v) for v in _as_list(key, value))
        if any(v < 1 for v in out):
            raise ConfigError(f"{key}: entries must be >= 1")
        return out
    if kind == "dbm_or_list":
        return tuple(_dbm(key, v) for v in _as_list(key, value))
    if kind == "dbm":
        return _dbm(key, value)
    v_list = None
    if kind == "rho_list":
        v_list = tuple(_number(key, v) for v in _as_list(key, value))
        if any(not 0.0 < v <= 1.0 for v in v_list):
            raise ConfigError(f"{key}: entries must lie in (0, 1]")
        return v_list
    if kind in ("int_ge1", "int_ge2", "samples", "seed"):
        v = _integer(key, value)
        lower = {"int_ge1": 1, "int_ge2": 2, "samples": mc.MIN_SAMPLES, "seed": 0}[kind]
        if v < lower:
            raise ConfigError(f"{key}: must be >= {lower}, got {v}")
        return v
    v = _number(key, value)
    checks = {
        "positive": (v > 0, "must be > 0"),
        "nonneg": (v >= 0, "must be >= 0"),
        "unit_open_closed": (0 < v <= 1, "must lie in (0, 1]"),
        "pathloss": (v >= 2, "must be >= 2"),
        "angle": (-90 <= v <= 90, "must lie in [-90, 90] degrees"),
        "spread": (0 <= v <= 90, "must lie in [0, 90] degrees"),
        "alpha_step": (0 < v <= 0.1, "must lie in (0, 0.1]"),
    }
    ok, msg = checks[kind]
    if not ok:
        raise ConfigError(f"{key}: {msg}, got {v}")
    return v


def parse_scenario(raw: Any) -> Scenario:
    """Validate a decoded JSON object and return a :class:`Scenario`."""
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a JSON object")
    unknown = sorted(set(raw) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    values = {}
    for key, (default, kind) in _KEYS.items():
        values[key] = _parse_value(key, kind, raw.get(key, default))
    for nt in values["n_tx"]:
        if not 0 < nt < values["n_total"]:
            raise ConfigError(
                f"n_tx: must satisfy 0 < n_tx < n_total={values['n_total']}, got {nt}")
        if nt > 16 or values["n_total"] - nt > 16:
            raise ConfigError("n_tx: antenna counts above 16 are not supported")
    return Scenario(**values)


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_scenario(raw)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".12g")
    return str(value)


def write_csv(path: Path, columns, rows) -> None:
    """Write rows atomically: a temp file in the same directory is renamed into place."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _realization_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _case_dir(out_dir: Path, scen: Scenario, n_tx: int, power_dbm: float) -> Path:
    if len(scen.cases()) == 1:
        return out_dir
    return out_dir / f"nt{n_tx}_p{_fmt(power_dbm)}dBm"


def _map(fn, args, threads: int):
    if threads > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, args))
    return [fn(a) for a in args]


# ---- rate region -------------------------------------------------------

def _rate_region_one(args):
    scen, n_tx, power_dbm, r = args
    params = scen.params(n_tx, power_dbm)
    real = sample_realization(params, _realization_rng(scen.seed, r))
    curves = fullcsi.rate_region_sweep(real, params, scen.rb_grid_points, scen.alpha_step)
    rows = []
    for method in ("optimum", "zf", "hd_ac", "hd_rfc"):
        for pt in curves[method].points:
            rows.append((r, pt.r_b_target, method, pt.alpha, pt.ms_rate, pt.feasible))
    return rows


def run_rate_region(scen: Scenario, out_dir: Path, threads: int = 1) -> list[Path]:
    written = []
    for n_tx, power_dbm in scen.cases():
        jobs = [(scen, n_tx, power_dbm, r) for r in range(scen.realizations)]
        rows = [row for chunk in _map(_rate_region_one, jobs, threads) for row in chunk]
        case = _case_dir(out_dir, scen, n_tx, power_dbm)
        write_csv(case / "rate_region.csv", RATE_REGION_COLUMNS, rows)
        write_csv(case / "rate_region_avg.csv", RATE_REGION_AVG_COLUMNS, average_rate_region(rows))
        written += [case / "rate_region.csv", case / "rate_region_avg.csv"]
        log.info("rate region n_tx=%d P=%s dBm: %d rows", n_tx, _fmt(power_dbm), len(rows))
    return written


def average_rate_region(rows) -> list[tuple]:
    """Average each method's curve by grid index over realizations (feasible points only)."""
    by_key: dict[tuple, list] = {}
    counters: dict[tuple, int] = {}
    for rid, rb, method, _alpha, ms, feasible in rows:
        idx = counters.get((rid, method), 0)
        counters[(rid, method)] = idx + 1
        by_key.setdefault((method, idx), []).append((rb, ms, feasible))
    out = []
    for method in ("optimum", "zf", "hd_ac", "hd_rfc"):
        idx = 0
        while (method, idx) in by_key:
            entries = by_key[(method, idx)]
            ok = [(rb, ms) for rb, ms, f in entries if f]
            if ok:
                rb_mean = math.fsum(e[0] for e in ok) / len(ok)
                ms_mean = math.fsum(e[1] for e in ok) / len(ok)
            else:
                rb_mean = ms_mean = math.nan
            out.append((idx, method, rb_mean, ms_mean, len(ok) / len(entries)))
            idx += 1
    return out


# ---- partial CSI -------------------------------------------------------

def _partial_one(args):
    scen, n_tx, power_dbm, r = args
    params = scen.params(n_tx, power_dbm)
    cov = CovarianceModel.from_angles(
        params, math.radians(scen.theta_b_deg), math.radians(scen.theta_m_deg),
        math.radians(scen.sigma_theta_deg), math.radians(scen.sigma_theta_deg))
    rng = _realization_rng(scen.seed, r)
    inst = partialcsi.PartialCsiInstance.draw(params, cov, rng)
    alphas = partialcsi.default_alpha_grid(scen.partial_alpha_step)
    rows = []
    for k, rho in enumerate(scen.rho_grid):
        sol = partialcsi.joint_partial_csi(inst, alphas, scen.beta_grid_points, rho=rho)
        if sol.feasible:
            est, _ = mc.mc_outage(inst, sol.w, sol.alpha, scen.mc_samples,
                                  seed=scen.seed + 7919 * (r + 1) + k)
            rows.append((r, rho, sol.alpha, sol.beta, sol.ms_rate, sol.outage_bound,
                         sol.outage_exact, est))
        else:
            rows.append((r, rho) + (math.nan,) * 6)
    return rows


def run_partial_csi(scen: Scenario, out_dir: Path, threads: int = 1) -> list[Path]:
    written = []
    for n_tx, power_dbm in scen.cases():
        jobs = [(scen, n_tx, power_dbm, r) for r in range(scen.realizations)]
        runs = [row for chunk in _map(_partial_one, jobs, threads) for row in chunk]
        avg = []
        for rho in scen.rho_grid:
            ok = [row for row in runs if row[1] == rho and not math.isnan(row[4])]
            if ok:
                means = [math.fsum(row[c] for row in ok) / len(ok) for c in range(2, 8)]
            else:
                means = [math.nan] * 6
            avg.append((rho, *means))
        case = _case_dir(out_dir, scen, n_tx, power_dbm)
        write_csv(case / "partial_csi.csv", PARTIAL_COLUMNS, avg)
        write_csv(case / "partial_csi_runs.csv", ("realization_id",) + PARTIAL_COLUMNS, runs)
        written += [case / "partial_csi.csv", case / "partial_csi_runs.csv"]
        log.info("partial CSI n_tx=%d P=%s dBm done", n_tx, _fmt(power_dbm))
    return written


# ---- validation --------------------------------------------------------

def run_validate(scen: Scenario, out_dir: Path, threads: int = 1) -> tuple[list[Path], bool]:
    written, all_ok = [], True
    for n_tx, power_dbm in scen.cases():
        plan = mc.ValidationPlan(
            base=scen.params(n_tx, power_dbm),
            theta_b=math.radians(scen.theta_b_deg), theta_m=math.radians(scen.theta_m_deg),
            sigma_theta=math.radians(scen.sigma_theta_deg),
            outage_samples=scen.mc_samples,
            rate_samples=max(mc.MIN_SAMPLES, scen.mc_samples // 10),
            tolerance_scale=scen.tolerance_scale, seed=scen.seed, threads=threads)
        report = mc.validate_figures(plan)
        rows = [(p.quantity, p.sweep_value, p.analytic, p.mc, p.stderr, p.allowed, p.passed)
                for p in report.points]
        case = _case_dir(out_dir, scen, n_tx, power_dbm)
        write_csv(case / "validation.csv", VALIDATION_COLUMNS, rows)
        written.append(case / "validation.csv")
        for p in report.failures():
            log.error("validation failed: %s at %s (analytic %.6g, mc %.6g, allowed %.3g)",
                      p.quantity, _fmt(p.sweep_value), p.analytic, p.mc, p.allowed)
        all_ok = all_ok and report.passed
    return written, all_ok


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdwpt", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("rate-region", "full-CSI rate regions for every method"),
                       ("partial-csi", "ergodic rate vs outage trade-off from statistics"),
                       ("validate", "closed forms vs Monte Carlo")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON scenario file")
        p.add_argument("--out-dir", default=".", help="directory for CSV output")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes/threads")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        scen = load_scenario(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed: must be >= 0, got {args.seed}")
            scen = replace(scen, seed=args.seed)
        if args.threads < 1:
            raise ConfigError(f"--threads: must be >= 1, got {args.threads}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out_dir)
    if args.command == "rate-region":
        paths = run_rate_region(scen, out_dir, args.threads)
    elif args.command == "partial-csi":
        paths = run_partial_csi(scen, out_dir, args.threads)
    else:
        paths, ok = run_validate(scen, out_dir, args.threads)
        for path in paths:
            print(path)
        return EXIT_OK if ok else EXIT_VALIDATION
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
