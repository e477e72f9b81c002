"""Command line entry point.

One executable, one subcommand per experiment.  Every run writes a data file
(CSV or JSON, fixed schema) plus a metadata record with the complete
effective configuration, so any output can be reproduced from its metadata
alone.  Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 I/O error.

Configuration comes from a flat key=value file; --set overrides single keys,
--seed overrides the seed key, and the LEVYHEAT_SEED environment variable
overrides everything (its use is recorded in the metadata).
"""

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .kernels import (
    GeneratorDomainError,
    LevyExponent,
    check_exponent_condition,
    field_from_function,
    make_power_exponent,
    verify_kernel_bounds,
)
from .noise import RNG_SCHEME, GridSpec
from .solver import BlowUpError, RunConfig, get_sigma, picard_sequence
from .malliavin import (
    hnorm_samples,
    negative_moment_estimate,
    smallball_probability,
)
from .mcstats import (
    DegenerateSamplesError,
    emit,
    kde,
    run_ensemble,
    smoothness_report,
)

SEED_ENV = "LEVYHEAT_SEED"


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


# every key the config file and --set accept, with type, default, and help;
# a 0 sentinel on beta / probe_t / bandwidth means "derive the default"
SCHEMA = {
    "alpha": (float, 2.0, "lower power of the exponent envelope"),
    "beta": (float, 0.0, "upper power of the envelope; 0 means alpha"),
    "scale": (float, 1.0, "coefficient of re phi(n) = scale |n|^alpha"),
    "drift": (float, 0.0, "imaginary drift: phi(n) += i drift n"),
    "m_space": (int, 64, "spatial grid points"),
    "k_time": (int, 64, "time steps"),
    "horizon": (float, 0.5, "final time"),
    "sigma": (str, "shifted_sine", "noise coefficient: zero|one|two|shifted_sine"),
    "u0": (str, "zero", "initial field shape: zero|sin|cos"),
    "u0_amp": (float, 1.0, "initial field amplitude"),
    "seed": (int, 0, "base RNG seed; replica r uses stream (seed, r)"),
    "replicas": (int, 256, "Monte Carlo replicas"),
    "probe_t": (float, 0.0, "probe time; 0 means horizon"),
    "probe_x": (float, 0.0, "probe point in [0, 2pi)"),
    "t_min": (float, 1e-5, "kernel: smallest time on the scaling grid"),
    "t_max": (float, 1e-3, "kernel: largest time on the scaling grid"),
    "t_points": (int, 9, "kernel: number of grid times"),
    "picard_n": (int, 6, "picard: number of successive differences"),
    "picard_beta": (float, 64.0, "exponential weight of the iteration norm"),
    "moment_p": (float, 2.0, "moment order for picard and negative moments"),
    "stride_k": (int, 1, "derivative source subsampling in time"),
    "stride_i": (int, 1, "derivative source subsampling in space"),
    "levels": (str, "0.02,0.05,0.1,0.2,0.3,0.4,0.5",
               "small-ball quantile levels, comma separated"),
    "deltas": (str, "", "derivative tail windows, comma separated"),
    "bandwidth": (float, 0.0, "density bandwidth; 0 means Silverman rule"),
    "floor": (float, 1e-8, "negative-moment regularization floor"),
    "tol": (float, 1e-10, "series tail tolerance"),
}


def _parse_value(key, raw):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    ctor = SCHEMA[key][0]
    try:
        return ctor(raw)
    except ValueError as err:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from err


def read_config_file(path):
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        values[key.strip()] = _parse_value(key.strip(), raw.strip())
    return values


def effective_config(args):
    """Defaults, then config file, then --set, then --seed, then the
    environment.  Returns (config dict, seed_source)."""
    cfg = {key: default for key, (_, default, _) in SCHEMA.items()}
    seed_source = "default"
    if args.config is not None:
        file_vals = read_config_file(args.config)
        if "seed" in file_vals:
            seed_source = "config"
        cfg.update(file_vals)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        cfg[key.strip()] = _parse_value(key.strip(), raw.strip())
        if key.strip() == "seed":
            seed_source = "set"
    if getattr(args, "alpha", None) is not None:
        cfg["alpha"] = float(args.alpha)
    if getattr(args, "beta_flag", None) is not None:
        cfg["beta"] = float(args.beta_flag)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
        seed_source = "flag"
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as err:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from err
        seed_source = "env"
    return cfg, seed_source


def _float_list(raw, key):
    if not raw.strip():
        return []
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as err:
        raise ConfigError(f"bad float list for {key!r}: {raw!r}") from err


def build_exponent(cfg):
    alpha = cfg["alpha"]
    beta = cfg["beta"] if cfg["beta"] > 0 else alpha
    if cfg["scale"] <= 0:
        raise ConfigError("scale must be positive")
    try:
        exp_ = make_power_exponent(cfg["scale"], alpha, drift=cfg["drift"])
        if beta != alpha:
            exp_ = dataclasses.replace(exp_, beta=beta)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return exp_


def build_run_config(cfg):
    try:
        grid = GridSpec(m_space=cfg["m_space"], k_time=cfg["k_time"],
                        horizon=cfg["horizon"])
        sigma = get_sigma(cfg["sigma"])
    except ValueError as err:
        raise ConfigError(str(err)) from err
    exp_ = build_exponent(cfg)
    amp = cfg["u0_amp"]
    shapes = {
        "zero": lambda x: np.zeros_like(x),
        "sin": lambda x: amp * np.sin(x),
        "cos": lambda x: amp * np.cos(x),
    }
    if cfg["u0"] not in shapes:
        raise ConfigError(f"unknown u0 shape {cfg['u0']!r}")
    u0 = field_from_function(shapes[cfg["u0"]], grid.m_space)
    t = cfg["probe_t"] if cfg["probe_t"] > 0 else grid.horizon
    try:
        run = RunConfig(grid=grid, exponent=exp_, sigma=sigma, u0=u0,
                        seed=cfg["seed"], replicas=cfg["replicas"],
                        observables=((t, cfg["probe_x"]),))
        run.probe_indices()
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return run


def _row(run_id, cfg, quantity, value, stderr=0.0, tail=0.0,
         t=0.0, x=0.0, count=0):
    beta = cfg["beta"] if cfg["beta"] > 0 else cfg["alpha"]
    return {
        "run_id": run_id, "seed": cfg["seed"], "replica_count": count,
        "alpha": cfg["alpha"], "beta": beta, "t": t, "x": x,
        "quantity": quantity, "value": value, "stderr": stderr,
        "tail_bound": tail,
    }


# ---------------------------------------------------------------------------
# subcommands: each returns (rows, extra_metadata, summary line)


def cmd_kernel(cfg, args, run_id):
    exp_ = build_exponent(cfg)
    if not (0 < cfg["t_min"] < cfg["t_max"]):
        raise ConfigError("need 0 < t_min < t_max")
    if cfg["t_points"] < 3:
        raise ConfigError("need t_points >= 3")
    t_grid = np.geomspace(cfg["t_min"], cfg["t_max"], cfg["t_points"])
    report = verify_kernel_bounds(exp_, t_grid, beta_param=cfg["picard_beta"],
                                  tol=cfg["tol"])
    beta = cfg["beta"] if cfg["beta"] > 0 else cfg["alpha"]
    rows = report.to_rows(run_id=run_id, seed=cfg["seed"], alpha=cfg["alpha"],
                          beta=beta)
    summary = (f"kernel: norm slope {report.slope_norm:.6g} "
               f"(r2 {report.r2_norm:.6g}), weighted integral bounded by "
               f"laplace mass: {report.sup_bounded_by_laplace}")
    return rows, {}, summary


def cmd_simulate(cfg, args, run_id):
    run = build_run_config(cfg)
    sets = run_ensemble(run, workers=args.workers)
    rows = []
    extra = {}
    for ss in sets:
        t, x = ss.probe
        if ss.count < 2:
            raise NumericalError(
                f"only {ss.count} usable replicas at probe ({t}, {x})")
        n = ss.count
        var = ss.variance()
        m4 = float(np.mean((ss.values - ss.mean()) ** 4))
        se_var = math.sqrt(max(m4 - var ** 2, 0.0) / n)
        rows.append(_row(run_id, cfg, "u_mean", ss.mean(), ss.stderr(),
                         t=t, x=x, count=n))
        rows.append(_row(run_id, cfg, "u_var", var, se_var, t=t, x=x, count=n))
        rows.append(_row(run_id, cfg, "u_blowups",
                         float(len(ss.metadata["blowups"])), t=t, x=x, count=n))
        extra["blowups"] = ss.metadata["blowups"]
    ss = sets[0]
    summary = (f"simulate: {ss.count} replicas, mean {ss.mean():.6g} "
               f"+- {ss.stderr():.2g}, var {ss.variance():.6g}")
    return rows, extra, summary


def cmd_picard(cfg, args, run_id):
    run = build_run_config(cfg)
    if cfg["picard_n"] < 1:
        raise ConfigError("need picard_n >= 1")
    report = picard_sequence(run, cfg["picard_n"], cfg["picard_beta"],
                             p=cfg["moment_p"], workers=args.workers)
    beta = cfg["beta"] if cfg["beta"] > 0 else cfg["alpha"]
    rows = report.to_rows(run_id=run_id, seed=cfg["seed"], alpha=cfg["alpha"],
                          beta=beta)
    summary = (f"picard: ratios {np.array2string(report.ratios, precision=3)} "
               f"contracting={report.contracting}")
    return rows, {"contracting": report.contracting}, summary


def cmd_malliavin(cfg, args, run_id):
    run = build_run_config(cfg)
    deltas = _float_list(cfg["deltas"], "deltas")
    samples, tails = hnorm_samples(
        run, workers=args.workers, stride_k=cfg["stride_k"],
        stride_i=cfg["stride_i"], deltas=deltas)
    t, x = run.observables[0]
    n = len(samples)
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    rows = [
        _row(run_id, cfg, "hnorm_mean", mean, se, t=t, x=x, count=n),
        _row(run_id, cfg, "hnorm_sd", float(samples.std(ddof=1)),
             t=t, x=x, count=n),
    ]
    for d in deltas:
        rows.append(_row(run_id, cfg, f"hnorm_tail_mean/delta={d:.6e}",
                         float(tails[float(d)].mean()), t=t, x=x, count=n))
    if run.sigma.kappa > 0:
        nm = negative_moment_estimate(run, p=cfg["moment_p"],
                                      floor=cfg["floor"], samples=samples)
        rows += nm.to_rows(run_id=run_id, seed=cfg["seed"], alpha=cfg["alpha"],
                           beta=cfg["beta"] if cfg["beta"] > 0 else cfg["alpha"],
                           probe=(t, x))
        summary = (f"malliavin: hnorm mean {mean:.6g} +- {se:.2g}, "
                   f"negative moment {nm.estimate:.6g} "
                   f"(reliable={nm.reliable})")
    else:
        summary = f"malliavin: hnorm mean {mean:.6g} +- {se:.2g}"
    return rows, {}, summary


def cmd_smallball(cfg, args, run_id):
    run = build_run_config(cfg)
    levels = _float_list(cfg["levels"], "levels")
    if not levels:
        raise ConfigError("levels must name at least one quantile")
    try:
        report = smallball_probability(
            run, levels=levels, workers=args.workers,
            stride_k=cfg["stride_k"], stride_i=cfg["stride_i"])
    except ValueError as err:
        raise ConfigError(str(err)) from err
    beta = cfg["beta"] if cfg["beta"] > 0 else cfg["alpha"]
    rows = report.to_rows(run_id=run_id, seed=cfg["seed"],
                          alpha=cfg["alpha"], beta=beta)
    nm = negative_moment_estimate(run, p=cfg["moment_p"], floor=cfg["floor"],
                                  samples=report.samples)
    rows += nm.to_rows(run_id=run_id, seed=cfg["seed"], alpha=cfg["alpha"],
                       beta=beta, probe=report.probe)
    summary = (f"smallball: {len(report.eps)} eps levels, freq "
               f"{report.freq.min():.3g}..{report.freq.max():.3g}, "
               f"c_fit {report.c_fit:.6g}")
    return rows, {"c_fit": report.c_fit}, summary


def cmd_density(cfg, args, run_id):
    run = build_run_config(cfg)
    sets = run_ensemble(run, workers=args.workers)
    ss = sets[0]
    t, x = ss.probe
    if ss.count < 2:
        raise NumericalError(f"only {ss.count} usable replicas")
    bandwidth = cfg["bandwidth"] if cfg["bandwidth"] > 0 else None
    try:
        est = kde(ss.values, bandwidth=bandwidth)
    except DegenerateSamplesError as err:
        rows = [_row(run_id, cfg, "density_point_mass", err.value,
                     t=t, x=x, count=ss.count)]
        return rows, {"degenerate": True}, \
            f"density: point mass at {err.value:.6g}, no estimate"
    rep = smoothness_report(est)
    rows = [
        _row(run_id, cfg, "density_bandwidth", est.bandwidth, t=t, x=x,
             count=ss.count),
        _row(run_id, cfg, "density_integral", est.integral(), t=t, x=x,
             count=ss.count),
    ]
    rows += rep.to_rows(run_id=run_id, seed=cfg["seed"], alpha=cfg["alpha"],
                        beta=cfg["beta"] if cfg["beta"] > 0 else cfg["alpha"],
                        probe=(t, x), replicas=ss.count)
    summary = (f"density: bandwidth {est.bandwidth:.6g}, max |d1| "
               f"{rep.max_d1:.6g}, max |d2| {rep.max_d2:.6g}, "
               f"under_smoothed={rep.under_smoothed}")
    return rows, {"bandwidth_rule": est.metadata["bandwidth_rule"]}, summary


def cmd_check_exponent(cfg, args, run_id):
    beta = cfg["beta"] if cfg["beta"] > 0 else cfg["alpha"]
    try:
        chk = check_exponent_condition(cfg["alpha"], beta)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    rows = [
        _row(run_id, cfg, "theta", chk.theta),
        _row(run_id, cfg, "admissible", float(chk.admissible)),
    ]
    summary = (f"theta={chk.theta:.12g} "
               f"admissible={'true' if chk.admissible else 'false'}")
    return rows, {"theta": chk.theta, "admissible": chk.admissible}, summary


COMMANDS = {
    "kernel": (cmd_kernel, "kernel norm scaling and envelope diagnostics"),
    "simulate": (cmd_simulate, "Monte Carlo moments of u at the probe"),
    "picard": (cmd_picard, "successive Picard difference norms"),
    "malliavin": (cmd_malliavin, "derivative mass statistics at the probe"),
    "smallball": (cmd_smallball, "small-ball frequencies of the derivative mass"),
    "density": (cmd_density, "density estimate and smoothness diagnostics"),
    "check-exponent": (cmd_check_exponent,
                       "smoothness admissibility of an (alpha, beta) pair"),
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here is 1 for any
    # configuration problem
    def error(self, message):
        print(f"levyheat:error:config: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    schema_lines = "\n".join(
        f"  {key} ({ctor.__name__}, default {default!r}): {help_}"
        for key, (ctor, default, help_) in SCHEMA.items()
    )
    parser = _Parser(
        prog="levyheat",
        description=(
            "Spectral simulator and analysis toolkit for the stochastic heat "
            "equation driven by space-time white noise, with a Levy generator "
            "given through its Fourier multiplier."
        ),
        epilog=(
            "exit codes: 0 success, 1 config error, 2 numerical failure, "
            "3 I/O error.\n"
            f"seed precedence: config file < --set seed= < --seed < "
            f"{SEED_ENV} (recorded in metadata).\n"
            "config file: flat key=value lines, # comments; keys:\n"
            + schema_lines
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                metavar="subcommand")
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the seed key")
        p.add_argument("--out", default=".",
                       help="output directory (default: current)")
        p.add_argument("--workers", type=int, default=1,
                       help="worker threads; never changes output bytes")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="data file format")
        if name == "check-exponent":
            p.add_argument("--alpha", type=float,
                           help="shorthand for --set alpha=...")
            p.add_argument("--beta", dest="beta_flag", type=float,
                           help="shorthand for --set beta=...")
    return parser


def _run_identifier(subcommand, cfg, seed_source):
    payload = json.dumps(
        {"subcommand": subcommand, "config": cfg, "seed_source": seed_source,
         "version": __version__},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def _check_finite(rows):
    for row in rows:
        for col in ("value", "stderr", "tail_bound"):
            v = row[col]
            if v is not None and not math.isfinite(float(v)):
                raise NumericalError(
                    f"non-finite {col} in {row['quantity']!r}: {v!r}")


def _write_outputs(args, subcommand, cfg, seed_source, run_id, rows, extra):
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create output directory {out_dir}: {err}") from err
    stem = subcommand.replace("-", "_")
    data_path = out_dir / f"{stem}.{args.format}"
    emit(rows, args.format, str(data_path))
    meta = {
        "subcommand": subcommand,
        "run_id": run_id,
        "config": cfg,
        "seed": cfg["seed"],
        "seed_source": seed_source,
        "rng_scheme": RNG_SCHEME,
        "version": __version__,
        "format": args.format,
        "outputs": [data_path.name],
    }
    meta.update(extra)
    meta_path = out_dir / f"{stem}.meta.json"
    try:
        with open(meta_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as err:
        raise OSError(f"cannot write {meta_path}: {err}") from err
    return data_path, meta_path


def parse_and_dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, seed_source = effective_config(args)
        run_id = _run_identifier(args.subcommand, cfg, seed_source)
        command = COMMANDS[args.subcommand][0]
        rows, extra, summary = command(cfg, args, run_id)
        _check_finite(rows)
        if extra.get("blowups"):
            print(f"levyheat:warning: {len(extra['blowups'])} replicas blew up "
                  "and were excluded", file=sys.stderr)
        data_path, meta_path = _write_outputs(
            args, args.subcommand, cfg, seed_source, run_id, rows, extra)
        print(summary)
        print(f"wrote {data_path} and {meta_path}")
        return 0
    except (ConfigError, BlowUpError, GeneratorDomainError, NumericalError,
            OSError, ValueError) as exc:
        if isinstance(exc, (BlowUpError, NumericalError)):
            kind, code = "numerical", 2
        elif isinstance(exc, GeneratorDomainError):
            kind, code = "numerical", 2
        elif isinstance(exc, OSError):
            kind, code = "io", 3
        else:
            kind, code = "config", 1
        print(f"levyheat:error:{kind}: {exc}", file=sys.stderr)
        return code


def main():
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
