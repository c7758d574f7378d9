"""Experiment orchestration: config validation, runners, and report emission.

Reports are plain JSON-native dicts so that parse(emit(report)) == report.
Volatile fields (timestamp, wall time) live in an isolated ``meta`` block;
everything else is deterministic given (config, seed).
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import os
import tempfile
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import ConfigError, SpeclabError
from .geometry import (
    bishop_check,
    check_growth_condition,
    check_subexponential,
    radial_ricci,
    ricci_decay_audit,
    sturm_integral,
    warping_profile,
)
from .heat import (
    KernelSampleSpec,
    domination_check,
    gaussian_bound_fit,
    mu_form_bound_fit,
    pnorm_growth_check,
    resolvent_laplace_check,
    resolvent_power_kernel,
)
from .operators import (
    DIRAC_SQUARED,
    RadialGrid,
    assemble_operator,
    spectrum_window,
)
from .weyl import spectral_region_map, weyl_quotient_p, _fit_slope

EXPERIMENTS = ("growth-audit", "spectrum-fill", "weyl-sweep", "region-map", "heat-audit")

SCHEMA_VERSION = 1

# fixed CSV schemas per experiment (documented in the README)
CSV_SCHEMAS = {
    "growth-audit": {
        "subexponential": ["epsilon", "fitted_c", "r_max", "slope", "passed"],
        "growth_condition": ["t", "g"],
        "ricci": ["t", "ricci", "delta_times_t2"],
        "sturm_integral": ["t_audit", "estimate"],
    },
    "spectrum-fill": {
        "eigenvalues": ["t_max", "j", "eigenvalue", "oracle", "rel_error"],
        "gaps": ["t_max", "lambda_max", "max_gap", "count"],
    },
    "weyl-sweep": {
        "quotients": ["lambda", "T", "p", "quotient", "paper_bound", "slope"],
    },
    "region-map": {
        "region": ["re", "im", "p", "slope", "classification"],
    },
    "heat-audit": {
        "domination": ["tau", "k1", "max_violation", "max_normalized_violation"],
        "pnorm": ["p", "tau", "value"],
        "fits": ["form", "param", "value"],
    },
}


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


class _Checker:
    """Collects config problems so they can be reported in one aggregate error."""

    def __init__(self):
        self.problems = []

    def fail(self, path, message):
        self.problems.append(f"{path}: {message}")

    def block(self, cfg, path, key, required=True):
        if key not in cfg:
            if required:
                self.fail(f"{path}.{key}" if path else key, "missing required block")
            return None
        val = cfg[key]
        if not isinstance(val, dict):
            self.fail(f"{path}.{key}" if path else key, "must be an object")
            return None
        return val

    def value(self, cfg, path, key, types, required=True, default=None, check=None):
        if key not in cfg:
            if required:
                self.fail(f"{path}.{key}", "missing required key")
            return default
        val = cfg[key]
        if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
            self.fail(f"{path}.{key}", f"expected {types}, got bool")
            return default
        if not isinstance(val, types):
            self.fail(f"{path}.{key}", f"expected {types}, got {type(val).__name__}")
            return default
        if check is not None and not check(val):
            self.fail(f"{path}.{key}", f"invalid value {val!r}")
            return default
        return val

    def number_list(self, cfg, path, key, required=True, default=None, positive=False):
        if key not in cfg:
            if required:
                self.fail(f"{path}.{key}", "missing required key")
            return default
        val = cfg[key]
        if not isinstance(val, list) or not val or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in val
        ):
            self.fail(f"{path}.{key}", "must be a nonempty list of numbers")
            return default
        if positive and any(x <= 0 for x in val):
            self.fail(f"{path}.{key}", "entries must be > 0")
            return default
        return [float(x) for x in val]

    def no_unknown(self, cfg, path, known):
        for key in cfg:
            if key not in known:
                self.fail(f"{path}.{key}" if path else key, "unknown key")


_PROFILE_PARAMS = {
    "polynomial": ("k",),
    "quasi_polynomial": ("beta",),
    "exponential": ("alpha",),
    "tabulated": ("t_samples", "f_samples"),
}


def _validate_profile(chk, cfg):
    block = chk.block(cfg, "", "profile")
    if block is None:
        return None
    family = chk.value(block, "profile", "family", str, check=lambda v: v in _PROFILE_PARAMS)
    n = chk.value(block, "profile", "n", int, check=lambda v: v >= 2)
    if family is None or n is None:
        return None
    chk.no_unknown(block, "profile", {"family", "n", *_PROFILE_PARAMS[family]})
    params = {}
    for key in _PROFILE_PARAMS[family]:
        if key in ("t_samples", "f_samples"):
            params[key] = chk.number_list(block, "profile", key)
        else:
            params[key] = chk.value(block, "profile", key, (int, float))
    if any(v is None for v in params.values()):
        return None
    echo = {"family": family, "n": n} | {
        k: (v if isinstance(v, list) else float(v)) for k, v in params.items()
    }
    return echo


def _validate_grid(chk, cfg, required):
    block = chk.block(cfg, "", "grid", required=required)
    if block is None:
        return None
    chk.no_unknown(block, "grid", {"t_max", "h", "m"})
    t_max = chk.value(block, "grid", "t_max", (int, float), check=lambda v: v > 0)
    has_h = "h" in block
    has_m = "m" in block
    if has_h == has_m:
        chk.fail("grid", "exactly one of 'h' or 'm' must be given")
        return None
    if has_h:
        h = chk.value(block, "grid", "h", (int, float), check=lambda v: v > 0)
        if t_max is None or h is None:
            return None
        return {"t_max": float(t_max), "h": float(h)}
    m = chk.value(block, "grid", "m", int, check=lambda v: v >= 3)
    if t_max is None or m is None:
        return None
    return {"t_max": float(t_max), "m": m}


def _grid_from_echo(echo) -> RadialGrid:
    if "m" in echo:
        return RadialGrid.from_node_count(echo["t_max"], echo["m"])
    return RadialGrid.from_spacing(echo["t_max"], echo["h"])


def validate_config(raw: dict) -> dict:
    """Validate a raw config dict; return the echo with defaults materialized.

    All problems are aggregated into a single ConfigError; unknown keys are
    rejected so configs cannot drift silently.
    """
    chk = _Checker()
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be an object"])
    experiment = chk.value(raw, "", "experiment", str, check=lambda v: v in EXPERIMENTS)
    known = {"experiment", "profile", "grid", "output", "seed"}
    echo = {"experiment": experiment, "seed": chk.value(raw, "", "seed", int, required=False, default=0)}

    out_block = chk.block(raw, "", "output", required=False)
    if out_block is not None:
        chk.no_unknown(out_block, "output", {"dir"})
        echo["output"] = {"dir": chk.value(out_block, "output", "dir", str, default=".")}

    profile_echo = _validate_profile(chk, raw)
    if profile_echo is not None:
        echo["profile"] = profile_echo

    if experiment == "growth-audit":
        known |= {"growth"}
        block = chk.block(raw, "", "growth")
        if block is not None:
            chk.no_unknown(
                block,
                "growth",
                {
                    "epsilons", "r_grid", "centers", "t_list", "k0", "bishop_pairs",
                    "bishop_centers", "sturm_beta", "sturm_t0", "sturm_doublings", "slope_tol",
                },
            )
            echo["growth"] = {
                "epsilons": chk.number_list(block, "growth", "epsilons", positive=True),
                "r_grid": chk.number_list(block, "growth", "r_grid", positive=True),
                "centers": chk.number_list(block, "growth", "centers"),
                "t_list": chk.number_list(block, "growth", "t_list", positive=True),
                "k0": chk.value(block, "growth", "k0", (int, float), check=lambda v: v >= 0),
                "bishop_pairs": block.get("bishop_pairs"),
                "bishop_centers": chk.number_list(block, "growth", "bishop_centers"),
                "sturm_beta": chk.value(block, "growth", "sturm_beta", (int, float), check=lambda v: v > 0),
                "sturm_t0": chk.value(
                    block, "growth", "sturm_t0", (int, float), required=False, default=40.0,
                    check=lambda v: v > 0,
                ),
                "sturm_doublings": chk.value(
                    block, "growth", "sturm_doublings", int, required=False, default=2,
                    check=lambda v: v >= 1,
                ),
                "slope_tol": chk.value(
                    block, "growth", "slope_tol", (int, float), required=False, default=0.1,
                    check=lambda v: v > 0,
                ),
            }
            pairs = block.get("bishop_pairs")
            if not (
                isinstance(pairs, list)
                and pairs
                and all(
                    isinstance(p, list) and len(p) == 2 and all(isinstance(x, (int, float)) for x in p)
                    and 0 < p[0] <= p[1]
                    for p in pairs
                )
            ):
                chk.fail("growth.bishop_pairs", "must be a list of [r, R] with 0 < r <= R")
    elif experiment == "spectrum-fill":
        known |= {"spectrum"}
        block = chk.block(raw, "", "spectrum")
        if block is not None:
            chk.no_unknown(
                block,
                "spectrum",
                {"t_max_list", "lambda_max", "h_divisor", "oracle_j_max", "oracle_rtol", "gap_range"},
            )
            echo["spectrum"] = {
                "t_max_list": chk.number_list(block, "spectrum", "t_max_list", positive=True),
                "lambda_max": chk.value(block, "spectrum", "lambda_max", (int, float), check=lambda v: v > 0),
                "h_divisor": chk.value(block, "spectrum", "h_divisor", int, check=lambda v: v >= 100),
                "oracle_j_max": chk.value(
                    block, "spectrum", "oracle_j_max", int, required=False, default=20,
                    check=lambda v: v >= 1,
                ),
                "oracle_rtol": chk.value(
                    block, "spectrum", "oracle_rtol", (int, float), required=False, default=1e-3,
                    check=lambda v: v > 0,
                ),
                "gap_range": chk.number_list(
                    block, "spectrum", "gap_range", required=False, default=[1.7, 2.3], positive=True
                ),
            }
    elif experiment == "weyl-sweep":
        known |= {"grid", "weyl"}
        grid_echo = _validate_grid(chk, raw, required=True)
        if grid_echo is not None:
            echo["grid"] = grid_echo
        block = chk.block(raw, "", "weyl")
        if block is not None:
            chk.no_unknown(block, "weyl", {"lambdas", "t_list", "p", "sign", "slope_range"})
            echo["weyl"] = {
                "lambdas": chk.number_list(block, "weyl", "lambdas"),
                "t_list": chk.number_list(block, "weyl", "t_list", positive=True),
                "p": chk.value(block, "weyl", "p", (int, float), required=False, default=1.0),
                "sign": chk.value(
                    block, "weyl", "sign", int, required=False, default=1, check=lambda v: v in (1, -1)
                ),
                "slope_range": chk.number_list(
                    block, "weyl", "slope_range", required=False, default=[-1.3, -0.7]
                ),
            }
    elif experiment == "region-map":
        known |= {"grid", "region"}
        grid_echo = _validate_grid(chk, raw, required=True)
        if grid_echo is not None:
            echo["grid"] = grid_echo
        block = chk.block(raw, "", "region")
        if block is not None:
            chk.no_unknown(block, "region", {"re_values", "im_values", "t_list", "p", "slope_threshold"})
            echo["region"] = {
                "re_values": chk.number_list(block, "region", "re_values"),
                "im_values": chk.number_list(block, "region", "im_values"),
                "t_list": chk.number_list(block, "region", "t_list", positive=True),
                "p": chk.value(block, "region", "p", (int, float), required=False, default=1.0),
                "slope_threshold": chk.value(
                    block, "region", "slope_threshold", (int, float), required=False, default=-0.5
                ),
            }
            t_list = echo["region"].get("t_list") if "region" in echo else None
            if t_list is not None and len(t_list) < 4:
                chk.fail("region.t_list", "needs >= 4 increasing entries")
    elif experiment == "heat-audit":
        known |= {"grid", "heat"}
        grid_echo = _validate_grid(chk, raw, required=True)
        if grid_echo is not None:
            echo["grid"] = grid_echo
        block = chk.block(raw, "", "heat")
        if block is not None:
            chk.no_unknown(
                block,
                "heat",
                {
                    "tau_list", "betas", "delta", "resolvent_xi", "resolvent_power",
                    "laplace_alpha", "laplace_power", "laplace_tau_max", "laplace_steps",
                    "sample_dt", "noise_floor_rel", "tol_rel",
                },
            )
            echo["heat"] = {
                "tau_list": chk.number_list(block, "heat", "tau_list", positive=True),
                "betas": chk.number_list(block, "heat", "betas", required=False, default=[1.0, 2.0], positive=True),
                "delta": chk.value(
                    block, "heat", "delta", (int, float), required=False, default=0.05,
                    check=lambda v: 0 < v < 1,
                ),
                "resolvent_xi": chk.number_list(block, "heat", "resolvent_xi", required=False, default=[-1.0, 0.0]),
                "resolvent_power": chk.value(
                    block, "heat", "resolvent_power", int, required=False, default=0,
                    check=lambda v: v >= 0,
                ),
                "laplace_alpha": chk.value(
                    block, "heat", "laplace_alpha", (int, float), required=False, default=-1.0
                ),
                "laplace_power": chk.value(
                    block, "heat", "laplace_power", int, required=False, default=6,
                    check=lambda v: v >= 2 and v % 2 == 0,
                ),
                "laplace_tau_max": chk.value(
                    block, "heat", "laplace_tau_max", (int, float), required=False, default=40.0,
                    check=lambda v: v > 0,
                ),
                "laplace_steps": chk.value(
                    block, "heat", "laplace_steps", int, required=False, default=64,
                    check=lambda v: v >= 4,
                ),
                "sample_dt": chk.value(
                    block, "heat", "sample_dt", (int, float), required=False, default=0.5,
                    check=lambda v: v > 0,
                ),
                "noise_floor_rel": chk.value(
                    block, "heat", "noise_floor_rel", (int, float), required=False, default=1e-10,
                    check=lambda v: v > 0,
                ),
                "tol_rel": chk.value(
                    block, "heat", "tol_rel", (int, float), required=False, default=1e-8,
                    check=lambda v: v > 0,
                ),
            }
            xi = echo["heat"].get("resolvent_xi")
            if xi is not None and len(xi) != 2:
                chk.fail("heat.resolvent_xi", "must be [re, im]")

    chk.no_unknown(raw, "", known)
    if chk.problems:
        raise ConfigError(chk.problems)
    return echo


# ---------------------------------------------------------------------------
# verdicts and runners
# ---------------------------------------------------------------------------


def _verdict(name, passed, inequality, values):
    return {
        "name": name,
        "passed": bool(passed),
        "inequality": inequality,
        "values": _jsonable(values),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _run_growth_audit(cfg, threads):
    profile = warping_profile(cfg["profile"]["family"], cfg["profile"]["n"],
                              **{k: v for k, v in cfg["profile"].items() if k not in ("family", "n")})
    g = cfg["growth"]
    tables = {name: [] for name in CSV_SCHEMAS["growth-audit"]}
    verdicts = []

    for eps in g["epsilons"]:
        verdict = check_subexponential(
            profile, eps, g["r_grid"], g["centers"], slope_tol=g["slope_tol"]
        )
        tables["subexponential"].append(
            {
                "epsilon": verdict.epsilon,
                "fitted_c": verdict.fitted_c,
                "r_max": verdict.r_max,
                "slope": verdict.divergence_trend,
                "passed": verdict.passed,
            }
        )
        verdicts.append(
            _verdict(
                f"subexponential_eps_{eps:g}",
                verdict.passed,
                "V(x,r) <= C * V(x,1) * exp(eps*r) with C stable under r_max growth",
                {"epsilon": eps, "fitted_c": verdict.fitted_c, "slope": verdict.divergence_trend},
            )
        )

    cond = check_growth_condition(profile, g["t_list"])
    for t, val in zip(cond.t, cond.values):
        tables["growth_condition"].append({"t": float(t), "g": float(val)})
    verdicts.append(
        _verdict(
            "growth_condition_to_zero",
            cond.to_zero,
            "f^(n-1)(2t) / (t f^(n-1)(t)) -> 0",
            {"first": float(cond.values[0]), "last": float(cond.values[-1])},
        )
    )

    audit = ricci_decay_audit(profile, g["t_list"])
    for t, ric, d2 in zip(audit.t, radial_ricci(profile, audit.t), audit.delta_times_t2):
        tables["ricci"].append({"t": float(t), "ricci": float(ric), "delta_times_t2": float(d2)})

    bishop = bishop_check(profile, g["k0"], [tuple(p) for p in g["bishop_pairs"]], g["bishop_centers"])
    verdicts.append(
        _verdict(
            "bishop_volume_comparison",
            bishop.passed,
            "V(x,R)/V(x,r) <= (R/r)^n * exp(C sqrt(K0) R) with C stable",
            {
                "k0": bishop.k0,
                "fitted_c": bishop.fitted_c,
                "mu_comparison_c": bishop.mu_comparison_c,
                "mu_comparison_cbar": bishop.mu_comparison_cbar,
                "inverse_volume_c": bishop.inverse_volume_c,
            },
        )
    )

    sturm = sturm_integral(
        profile, g["sturm_beta"], g["centers"], t_audit=g["sturm_t0"], doublings=g["sturm_doublings"]
    )
    for t_a, est in zip(sturm.t_audits, sturm.estimates):
        tables["sturm_integral"].append({"t_audit": float(t_a), "estimate": float(est)})
    verdicts.append(
        _verdict(
            "sturm_integral_finite",
            sturm.finite,
            "sup_x int mu(x) mu(s) exp(-beta d) rho ds < inf (stable under doubling)",
            {"beta": sturm.beta, "estimates": list(sturm.estimates)},
        )
    )
    return tables, verdicts


def _run_spectrum_fill(cfg, threads):
    profile = warping_profile(cfg["profile"]["family"], cfg["profile"]["n"],
                              **{k: v for k, v in cfg["profile"].items() if k not in ("family", "n")})
    s = cfg["spectrum"]
    tables = {name: [] for name in CSV_SCHEMAS["spectrum-fill"]}
    verdicts = []
    windows = []
    worst_rel = 0.0
    for t_max in s["t_max_list"]:
        h = t_max / s["h_divisor"]
        window = spectrum_window(profile, t_max, s["lambda_max"], h)
        windows.append(window)
        oracle = (np.arange(1, window.eigenvalues.size + 1) * math.pi / window.t_max) ** 2
        for j, (val, ora) in enumerate(zip(window.eigenvalues, oracle), start=1):
            rel = abs(val - ora) / ora
            if j <= s["oracle_j_max"]:
                worst_rel = max(worst_rel, rel)
            tables["eigenvalues"].append(
                {"t_max": window.t_max, "j": j, "eigenvalue": float(val), "oracle": float(ora),
                 "rel_error": float(rel)}
            )
        tables["gaps"].append(
            {
                "t_max": window.t_max,
                "lambda_max": window.lambda_max,
                "max_gap": window.max_gap,
                "count": int(window.eigenvalues.size),
            }
        )
    verdicts.append(
        _verdict(
            "flat_oracle_match",
            worst_rel <= s["oracle_rtol"],
            "|lambda_j - (j pi / T_max)^2| / (j pi / T_max)^2 <= rtol for j <= j_max",
            {"worst_rel_error": worst_rel, "rtol": s["oracle_rtol"], "j_max": s["oracle_j_max"]},
        )
    )
    lo, hi = s["gap_range"]
    for w_a, w_b in zip(windows, windows[1:]):
        factor = w_a.max_gap / w_b.max_gap
        verdicts.append(
            _verdict(
                f"gap_halving_{w_a.t_max:g}_to_{w_b.t_max:g}",
                lo <= factor <= hi,
                "max_gap(T) / max_gap(2T) within the halving window",
                {"factor": factor, "range": [lo, hi]},
            )
        )
    return tables, verdicts


def _run_weyl_sweep(cfg, threads):
    profile = warping_profile(cfg["profile"]["family"], cfg["profile"]["n"],
                              **{k: v for k, v in cfg["profile"].items() if k not in ("family", "n")})
    w = cfg["weyl"]
    grid = _grid_from_echo(cfg["grid"])
    tables = {name: [] for name in CSV_SCHEMAS["weyl-sweep"]}
    verdicts = []
    p = w["p"]
    if p == float("inf"):
        p = math.inf

    cells = [(lam, T) for lam in w["lambdas"] for T in w["t_list"]]

    def one(cell):
        lam, T = cell
        q, bound = weyl_quotient_p(lam, T, p, grid, profile, sign=w["sign"])
        return lam, T, q, bound

    results = _map_cells(one, cells, threads)

    dominance_ok = True
    worst_margin = -math.inf
    for lam in w["lambdas"]:
        t_arr = [T for lam2, T, _, _ in results if lam2 == lam]
        q_arr = [q for lam2, _, q, _ in results if lam2 == lam]
        slope = _fit_slope(t_arr, q_arr)
        for lam2, T, q, bound in results:
            if lam2 != lam:
                continue
            tables["quotients"].append(
                {"lambda": lam, "T": T, "p": (str(p) if p == math.inf else p),
                 "quotient": q, "paper_bound": bound, "slope": slope}
            )
            if bound is not None:
                dominance_ok &= q <= bound
                worst_margin = max(worst_margin, q - bound)
        lo, hi = w["slope_range"]
        verdicts.append(
            _verdict(
                f"decay_slope_lambda_{lam:g}",
                lo <= slope <= hi,
                "log-log slope of quotient vs T within the decay window",
                {"lambda": lam, "slope": slope, "range": [lo, hi]},
            )
        )
    verdicts.insert(
        0,
        _verdict(
            "quotient_below_bound",
            dominance_ok,
            "quotient <= 7 f^(n-1)(4T) / (T f^(n-1)(2T)) for p = 1",
            {"worst_margin": worst_margin},
        ),
    )
    return tables, verdicts


def _run_region_map(cfg, threads):
    profile = warping_profile(cfg["profile"]["family"], cfg["profile"]["n"],
                              **{k: v for k, v in cfg["profile"].items() if k not in ("family", "n")})
    r = cfg["region"]
    grid = _grid_from_echo(cfg["grid"])
    tables = {name: [] for name in CSV_SCHEMAS["region-map"]}
    z_values = [complex(re, im) for im in r["im_values"] for re in r["re_values"]]

    def one(z):
        return spectral_region_map(
            profile, r["p"], [z], r["t_list"], grid, slope_threshold=r["slope_threshold"]
        )[0]

    cells = _map_cells(one, z_values, threads)
    for cell in cells:
        tables["region"].append(
            {
                "re": cell.z.real,
                "im": cell.z.imag,
                "p": r["p"],
                "slope": cell.slope,
                "classification": cell.classification,
            }
        )
    return tables, []


def _run_heat_audit(cfg, threads):
    profile = warping_profile(cfg["profile"]["family"], cfg["profile"]["n"],
                              **{k: v for k, v in cfg["profile"].items() if k not in ("family", "n")})
    h = cfg["heat"]
    grid = _grid_from_echo(cfg["grid"])
    spec = KernelSampleSpec(sample_dt=h["sample_dt"], noise_floor_rel=h["noise_floor_rel"])
    tables = {name: [] for name in CSV_SCHEMAS["heat-audit"]}
    verdicts = []

    dom = domination_check(profile, grid, h["tau_list"], tol_rel=h["tol_rel"])
    for tau in dom.tau_list:
        tables["domination"].append(
            {"tau": tau, "k1": dom.k1, "max_violation": dom.max_violation,
             "max_normalized_violation": dom.max_normalized_violation}
        )
    verdicts.append(
        _verdict(
            "heat_kernel_domination",
            dom.passed,
            "|H_D2(x,y,tau)| <= exp(K1 tau) h_Delta(x,y,tau) + tol",
            {"k1": dom.k1, "max_normalized_violation": dom.max_normalized_violation},
        )
    )

    op2 = assemble_operator(profile, grid, DIRAC_SQUARED)
    for p in (1, math.inf):
        growth = pnorm_growth_check(op2, h["tau_list"], p, tol=h["tol_rel"])
        for tau, val in zip(growth.tau_list, growth.values):
            tables["pnorm"].append({"p": str(growth.p), "tau": tau, "value": val})
        verdicts.append(
            _verdict(
                f"pnorm_growth_p_{growth.p}",
                growth.passed,
                "||exp(-tau L)||_{p->p,rho} <= exp(K1 tau) (1 + tol)",
                {"p": str(growth.p), "max_value": growth.max_value},
            )
        )

    heatg = gaussian_bound_fit(profile, grid, h["tau_list"], delta=h["delta"], spec=spec)
    for param, value in heatg.constants.items():
        tables["fits"].append({"form": "heatg", "param": param, "value": value})
    verdicts.append(
        _verdict(
            "gaussian_bound_fit",
            heatg.passed,
            "|H| <= C3 V^(-1/2)(x,sqrt(tau)) V^(-1/2)(y,sqrt(tau)) exp(-d^2/(C4 tau) + C5 sqrt(K0 tau) + K1 tau)",
            heatg.constants | {"n_samples": heatg.sample["n_samples"]},
        )
    )

    for beta in h["betas"]:
        fit = mu_form_bound_fit(profile, grid, beta, h["tau_list"], spec=spec)
        for param, value in fit.constants.items():
            tables["fits"].append({"form": f"heat42_beta_{beta:g}", "param": param, "value": value})
        verdicts.append(
            _verdict(
                f"mu_form_bound_fit_beta_{beta:g}",
                fit.passed,
                "|H| <= C mu(x)^2 sup{tau^(-n/2),1} exp(-beta d) exp(-(alpha+1) tau), alpha < 0",
                fit.constants,
            )
        )

    power = h["resolvent_power"] or (profile.n + 3)
    xi = complex(h["resolvent_xi"][0], h["resolvent_xi"][1])
    res = resolvent_power_kernel(op2, xi, power, profile=profile, spec=spec)
    if res.fit is not None:
        for param, value in res.fit.constants.items():
            tables["fits"].append({"form": "res1", "param": param, "value": value})
        verdicts.append(
            _verdict(
                "resolvent_kernel_decay",
                res.fit.passed,
                "|G_xi(x,y)| <= C mu(x) mu(y) exp(-eps d), eps > 0",
                res.fit.constants,
            )
        )

    rel = resolvent_laplace_check(
        op2, h["laplace_alpha"], h["laplace_power"], h["laplace_tau_max"], h["laplace_steps"]
    )
    tables["fits"].append({"form": "laplace_identity", "param": "rel_error", "value": rel})
    verdicts.append(
        _verdict(
            "resolvent_laplace_identity",
            rel <= 1e-6,
            "(L - alpha)^(-m/2) = 1/Gamma(m/2) int exp(-tL) t^(m/2-1) exp(alpha t) dt",
            {"rel_error": rel, "power": h["laplace_power"], "alpha": h["laplace_alpha"]},
        )
    )
    return tables, verdicts


_RUNNERS = {
    "growth-audit": _run_growth_audit,
    "spectrum-fill": _run_spectrum_fill,
    "weyl-sweep": _run_weyl_sweep,
    "region-map": _run_region_map,
    "heat-audit": _run_heat_audit,
}


def _map_cells(fn, cells, threads):
    if threads and threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, cells))
    return [fn(c) for c in cells]


# ---------------------------------------------------------------------------
# report assembly and emission
# ---------------------------------------------------------------------------


class ExperimentRunError(SpeclabError):
    """A sub-operation failed; carries the partial report already written."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def run_experiment(raw_config: dict, out_dir: str = None, threads: int = 1) -> dict:
    """Validate, dispatch, and (when an output directory is known) emit a report.

    On a numerical failure inside a runner the partial report (with a failure
    record) is still written before the error is re-raised.
    """
    cfg = validate_config(raw_config)
    target = out_dir or cfg.get("output", {}).get("dir")
    start = time.perf_counter()
    failure = None
    tables, verdicts = {}, []
    try:
        tables, verdicts = _RUNNERS[cfg["experiment"]](cfg, threads)
    except SpeclabError as exc:
        failure = {"error": type(exc).__name__, "message": str(exc)}
    report = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg["experiment"],
        "config": _jsonable(cfg),
        "tables": _jsonable(tables),
        "verdicts": verdicts,
        "meta": {
            "tool_version": __version__,
            "timestamp_utc": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": time.perf_counter() - start,
        },
    }
    if failure is not None:
        report["failure"] = failure
    if target is not None:
        emit_json(report, os.path.join(target, "report.json"))
        emit_csv(report, target)
    if failure is not None:
        raise ExperimentRunError(failure["message"], report)
    return report


def _atomic_write(path: str, data: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".speclab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_json(report: dict, path: str) -> str:
    """Write the report as sorted-key JSON atomically (temp file + rename)."""
    _atomic_write(path, json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n")
    return path


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def emit_csv(report: dict, out_dir: str) -> list:
    """Write one CSV per table with the fixed schema columns; returns the paths."""
    schemas = CSV_SCHEMAS[report["experiment"]]
    paths = []
    for table, columns in schemas.items():
        rows = report["tables"].get(table, [])
        lines = [",".join(columns)]
        for row in rows:
            lines.append(",".join(_format_cell(row.get(col)) for col in columns))
        path = os.path.join(out_dir, f"{table}.csv")
        _atomic_write(path, "\n".join(lines) + "\n")
        paths.append(path)
    return paths
