"""Command-line front end: calibrate, price and convergence studies, CSV output."""

import argparse
import csv
import json
import math
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import analytic
from .calibration import (CalibrationError, DiscountCurve, calibrate, knot_residuals,
                          write_theta_csv)
from .ctmc import InvalidGeneratorError, build_rate_generator, make_time_grid
from .grid import rate_grid
from .hybrid import ConvertibleSpec, build_two_layer, price_cb
from .models import EquityModel, from_config
from .rates import (BondOptionSpec, BondSpec, EmbeddedOptionSchedule, estimate_convergence_rate,
                    price_bond, price_bond_option, price_callable_putable, price_zcb)

INSTRUMENT_TYPES = ("zcb", "bond", "bond_option", "callable_putable", "cb_european",
                    "cb_american")


class ConfigError(ValueError):
    """Raised for malformed configuration or instrument files."""


class Timer:
    """Wall-clock records per named phase."""

    def __init__(self):
        self.records = []

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        self.records.append({"phase": name, "seconds": time.perf_counter() - t0})
        return out


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def fmt9(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.9f}"


def fmt17(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.17g}"


class Setup:
    """Resolved model, curve and discretisation settings from a config mapping.

    Parameters:
        cfg: parsed configuration.
        curve: DiscountCurve or None.
        m, big_m, dt: command-line overrides.
    """

    def __init__(self, cfg, curve=None, m=None, big_m=None, dt=None):
        if "model" not in cfg:
            raise ConfigError("config needs a 'model' section")
        self.cfg = cfg
        self.model_cfg = dict(cfg["model"])
        self.model = from_config(self.model_cfg)
        eq = cfg.get("equity")
        self.equity = (EquityModel(eq["s0"], eq["sigma_s"], eq.get("dividend", 0.0),
                                   eq.get("rho", 0.0)) if eq else None)
        grid_cfg = cfg.get("grid", {})
        self.m = int(m or grid_cfg.get("m", 160))
        self.alpha = float(grid_cfg.get("alpha", 0.5))
        self.bounds = grid_cfg.get("bounds")
        self.big_m = int(big_m or grid_cfg.get("m_x", 160))
        self.alpha_x = float(grid_cfg.get("alpha_x", 2.0))
        self.dt = float(dt or cfg.get("dt", 1.0 / 252))
        self.scheme = cfg.get("scheme", "central")
        self.equity_scheme = cfg.get("equity_scheme", "upwind")
        self.curve = curve
        theta = self.model_cfg.get("theta")
        self.needs_calibration = (isinstance(theta, str) or
                                  ((self.model.time_dependent or self.model.shifted)
                                   and self.model.theta is None))
        if self.needs_calibration and curve is None:
            raise ConfigError("calibration requires a discount curve (--curve or 'curve')")
        self._cache = {}

    def with_m(self, m=None, big_m=None):
        return Setup(self.cfg, self.curve, m or self.m, big_m or self.big_m, self.dt)

    def resolved(self):
        return {"model": self.model.to_dict(), "m": self.m, "alpha": self.alpha,
                "bounds": self.bounds, "m_x": self.big_m, "alpha_x": self.alpha_x,
                "dt": self.dt, "scheme": self.scheme, "equity_scheme": self.equity_scheme,
                "equity": None if self.equity is None else {
                    "s0": self.equity.s0, "sigma_s": self.equity.sigma_const,
                    "dividend": self.equity.dividend(0.0), "rho": self.equity.rho}}

    def rate_generator(self, horizon, events=()):
        """(calibrated model, grid, generator) on a time grid ending at ``horizon``."""
        knots = [] if self.curve is None else [t for t in self.curve.times if t < horizon]
        events = tuple(sorted(set(float(e) for e in list(events) + knots)))
        key = (round(horizon, 12), events)
        if key in self._cache:
            return self._cache[key]
        grid = rate_grid(self.model, self.m, self.alpha, self.bounds)
        times = make_time_grid(horizon, self.dt, events)
        model = self.model
        if self.needs_calibration:
            model, _ = calibrate(model, grid, self.curve, times, scheme=self.scheme)
        gen = build_rate_generator(model, grid, times, self.scheme)
        self._cache[key] = (model, grid, gen)
        return self._cache[key]


def _bond_from(d):
    return BondSpec(d.get("face", 1.0), d.get("coupon_rate", 0.0), d.get("frequency", 2),
                    d["maturity"])


def _windows(v):
    if v is None or isinstance(v, (int, float)):
        return v
    return [tuple(w) for w in v]


def price_instrument(setup, inst):
    """Price one instrument mapping; returns (value, method)."""
    kind = inst.get("type")
    if kind not in INSTRUMENT_TYPES:
        raise ConfigError(f"unknown instrument type {kind!r}; expected one of {INSTRUMENT_TYPES}")
    t = float(inst.get("t", 0.0))
    if kind == "zcb":
        mat = float(inst["maturity"])
        if mat == t:
            return 1.0, "trivial"
        _, grid, gen = setup.rate_generator(mat)
        method = "homogeneous" if gen.homogeneous else "product"
        return inst.get("face", 1.0) * price_zcb(gen, grid, t, mat), method
    if kind == "bond":
        bond = _bond_from(inst)
        _, grid, gen = setup.rate_generator(bond.maturity, bond.coupon_dates())
        return price_bond(gen, grid, bond, t), "product"
    if kind == "bond_option":
        bond = _bond_from(inst)
        spec = BondOptionSpec(inst["expiry"], inst["strike"], inst.get("flavor", "call"), bond)
        _, grid, gen = setup.rate_generator(bond.maturity, bond.coupon_dates() + [spec.expiry])
        method = "homogeneous" if gen.homogeneous and not bond.coupon_rate else "product"
        return price_bond_option(gen, grid, t, spec), method
    if kind == "callable_putable":
        bond = _bond_from(inst)
        sched = EmbeddedOptionSchedule(_windows(inst.get("call")), _windows(inst.get("put")),
                                       inst.get("accrued", True))
        _, grid, gen = setup.rate_generator(bond.maturity, bond.coupon_dates())
        return price_callable_putable(gen, grid, bond, sched), "backward_induction"
    if setup.equity is None:
        raise ConfigError("convertible bonds need an 'equity' section")
    fields = {k: v for k, v in inst.items() if k not in ("type", "method", "id", "t")}
    fields["style"] = "european" if kind == "cb_european" else "american"
    spec = ConvertibleSpec.from_dict(fields)
    model, _, gen = setup.rate_generator(spec.maturity, spec.coupon_dates())
    chain = build_two_layer(model, setup.equity, gen, m_x=setup.big_m, alpha_x=setup.alpha_x,
                            scheme=setup.equity_scheme)
    method = inst.get("method", "fast")
    value, _, _ = price_cb(chain, spec, method)
    return value, method


def analytic_benchmark(setup, inst):
    """Closed-form value of an instrument, or None when unavailable."""
    kind = inst.get("type")
    curve = setup.curve if setup.needs_calibration else None
    model = setup.model
    try:
        if kind == "zcb":
            if curve is not None:
                return float(curve(inst["maturity"]))
            return analytic.analytic_zcb(model, 0.0, inst["maturity"])
        if kind == "bond_option" and not inst.get("coupon_rate"):
            if curve is None and model.theta is None and (model.time_dependent or model.shifted):
                return None
            return inst.get("face", 1.0) * analytic.analytic_zcb_option(
                model, inst["expiry"], inst["maturity"], inst["strike"] / inst.get("face", 1.0),
                inst.get("flavor", "call"), curve)
        if kind == "cb_european":
            fields = {k: v for k, v in inst.items() if k not in ("type", "method", "id", "t")}
            spec = ConvertibleSpec.from_dict({**fields, "style": "european"})
            return analytic.analytic_european_cb(model, setup.equity, spec, discount_curve=curve)
    except (analytic.UnsupportedModelError, ValueError):
        return None
    return None


def write_manifest(out_dir, command, args, setup, timer, outputs):
    manifest = {
        "command": command,
        "config": os.path.abspath(args.config) if args.config else None,
        "curve": os.path.abspath(args.curve) if getattr(args, "curve", None) else None,
        "output_dir": os.path.abspath(out_dir),
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "resolved": setup.resolved() if setup else None,
        "timings": timer.records,
        "outputs": outputs,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return path


def _load_setup(args, timer):
    cfg = load_json(args.config)
    curve_path = args.curve or cfg.get("curve")
    if curve_path and not os.path.isabs(curve_path) and not args.curve:
        curve_path = os.path.join(os.path.dirname(os.path.abspath(args.config)), curve_path)
    curve = timer.run("load_curve", DiscountCurve.from_csv, curve_path) if curve_path else None
    return cfg, Setup(cfg, curve, args.m, getattr(args, "big_m", None), args.dt)


def cmd_calibrate(args):
    timer = Timer()
    cfg, setup = _load_setup(args, timer)
    if setup.curve is None:
        raise ConfigError("calibrate needs --curve")
    if len(setup.curve.times) < 2:
        raise ConfigError("the curve needs at least two knots")
    horizon = float(cfg.get("horizon", setup.curve.times[-1]))
    setup.needs_calibration = True
    model, grid, gen = timer.run("calibrate", setup.rate_generator, horizon)
    os.makedirs(args.out, exist_ok=True)
    theta_path = os.path.join(args.out, "theta.csv")
    write_theta_csv(model.theta, theta_path)
    res_path = os.path.join(args.out, "residuals.csv")
    rows = timer.run("residuals", knot_residuals, gen, setup.curve)
    with open(res_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "market", "model", "residual"])
        for t, p, q, r in rows:
            w.writerow([fmt17(t), fmt17(p), fmt17(q), fmt17(r)])
    write_manifest(args.out, "calibrate", args, setup, timer, [theta_path, res_path])
    worst = max(abs(r[3]) for r in rows) if rows else 0.0
    print(f"calibrated {len(model.theta.values)} theta values; max |residual| = {worst:.3e}")
    return 0


def _instruments(args, cfg):
    if getattr(args, "instruments", None):
        data = load_json(args.instruments)
        return data["instruments"] if isinstance(data, dict) else data
    if "instruments" not in cfg:
        raise ConfigError("no instruments: pass --instruments or add 'instruments' to the config")
    return cfg["instruments"]


def cmd_price(args):
    timer = Timer()
    cfg, setup = _load_setup(args, timer)
    insts = _instruments(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "prices.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "type", "value", "value_full", "method", "m", "m_x", "dt",
                    "elapsed_sec"])
        for k, inst in enumerate(insts):
            ident = inst.get("id", str(k))
            t0 = time.perf_counter()
            value, method = timer.run(f"price:{ident}", price_instrument, setup, inst)
            elapsed = time.perf_counter() - t0
            cb = inst.get("type", "").startswith("cb_")
            w.writerow([ident, inst["type"], fmt9(value), fmt17(value), method, setup.m,
                        setup.big_m if cb else "", fmt17(setup.dt), f"{elapsed:.3f}"])
            print(f"{ident},{inst['type']},{value:.9f}")
    write_manifest(args.out, "price", args, setup, timer, [path])
    return 0


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def cmd_convergence(args):
    timer = Timer()
    cfg, setup = _load_setup(args, timer)
    insts = _instruments(args, cfg)
    inst = insts[args.instrument] if args.instrument is not None else insts[0]
    vary_x = args.big_m_list is not None
    sizes = _int_list(args.big_m_list if vary_x else args.m_list or "50,100,200,300")

    def at(size):
        s = setup.with_m(big_m=size) if vary_x else setup.with_m(m=size)
        return price_instrument(s, inst)[0]

    bench = None
    source = args.benchmark
    if source in ("auto", "analytic"):
        bench = analytic_benchmark(setup, inst)
        source = "analytic"
        if bench is None and args.benchmark == "analytic":
            raise ConfigError("no analytic benchmark for this instrument")
    if bench is None:
        if args.no_self_benchmark:
            raise ConfigError("benchmark unavailable and self-benchmark disabled")
        source = f"self:{args.bench_m}"
        bench = timer.run("benchmark", at, args.bench_m)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "study.csv")
    rows = []
    for size in sizes:
        t0 = time.perf_counter()
        value = timer.run(f"size:{size}", at, size)
        rows.append((size, value, abs(value - bench), time.perf_counter() - t0))
    rates = [None]
    for (m1, _, e1, _), (m2, _, e2, _) in zip(rows[:-1], rows[1:]):
        rates.append(None if e1 == 0 or e2 == 0 else estimate_convergence_rate([(m1, e1), (m2, e2)])[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m_x" if vary_x else "m", "value", "value_full", "abs_error", "rate",
                    "elapsed_sec", "benchmark", "benchmark_source"])
        for (size, value, err, el), rate in zip(rows, rates):
            w.writerow([size, fmt9(value), fmt17(value), fmt17(err),
                        "" if rate is None else f"{rate:.4f}", f"{el:.3f}", fmt17(bench), source])
            print(f"{size},{value:.9f},{err:.3e},{'' if rate is None else f'{rate:.3f}'}")
    write_manifest(args.out, "convergence", args, setup, timer, [path])
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ctmc-debt",
                                     description="CTMC pricing of debt securities under short-rate models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--curve", help="discount curve CSV with header t,discount")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--m", type=int, help="rate grid size")
        p.add_argument("--big-m", type=int, help="equity grid size")
        p.add_argument("--dt", type=float, help="time step in years")
        p.add_argument("--seed", type=int, default=0, help="seed recorded in the manifest")

    p = sub.add_parser("calibrate", help="fit theta to a discount curve")
    common(p)
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("price", help="price the instruments of a config")
    common(p)
    p.add_argument("--instruments", help="JSON list of instruments (overrides the config)")
    p.set_defaults(func=cmd_price)
    p = sub.add_parser("convergence", help="error and rate versus grid size")
    common(p)
    p.add_argument("--instruments", help="JSON list of instruments")
    p.add_argument("--instrument", type=int, help="index of the instrument to study")
    p.add_argument("--m-list", help="comma-separated rate grid sizes")
    p.add_argument("--big-m-list", help="comma-separated equity grid sizes")
    p.add_argument("--benchmark", choices=("auto", "analytic", "self"), default="auto")
    p.add_argument("--bench-m", type=int, default=350, help="grid size of the self-benchmark")
    p.add_argument("--no-self-benchmark", action="store_true")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CalibrationError, InvalidGeneratorError, KeyError, ValueError,
            OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
