"""Ensemble driving, kernel density estimation, slope fits, and file output.

Everything here is deterministic in (config, seed): replica r always draws
noise stream (seed, r), chunk boundaries are fixed regardless of worker
count, and scalar reductions use compensated summation, so emitted files are
byte-identical across reruns and across worker counts.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .solver import _evolve_batch, _noise_block
from ._parallel import map_chunks

ENSEMBLE_CHUNK = 256

CSV_SCHEMA = "levyheat csv schema v1"
CSV_COLUMNS = ("run_id", "seed", "replica_count", "alpha", "beta",
               "t", "x", "quantity", "value", "stderr", "tail_bound")
_INT_COLUMNS = {"seed", "replica_count"}
_STR_COLUMNS = {"run_id", "quantity"}


class DegenerateSamplesError(ValueError):
    """Zero-variance samples: the law is a point mass, no density estimate."""

    def __init__(self, value, count):
        self.value = value
        self.count = count
        super().__init__(
            f"samples are a point mass at {value!r} ({count} replicas); "
            "no density estimate"
        )


@dataclass
class SampleSet:
    """Replica values of u(t, x) at one probe, blow-up rows excluded."""

    probe: tuple
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def count(self):
        return len(self.values)

    def mean(self):
        return float(math.fsum(self.values) / self.count)

    def variance(self):
        if self.count < 2:
            raise ValueError("variance needs at least 2 samples")
        mu = self.mean()
        return float(math.fsum((self.values - mu) ** 2) / (self.count - 1))

    def stderr(self):
        return math.sqrt(self.variance() / self.count)


def run_ensemble(config, replicas=None, workers=1):
    """One SampleSet per configured probe, from independent replica paths.

    Replica r uses noise stream (config.seed, r).  Blown-up replicas are
    dropped from the values but reported in metadata['blowups'] as
    (replica, step, magnitude) triples; dropping them silently is not an
    option since they bias every statistic.
    """
    r_total = config.replicas if replicas is None else replicas
    if r_total < 2:
        raise ValueError("need at least 2 replicas")
    probes = config.probe_indices()
    record_ks = {k for k, _ in probes}
    grid = config.grid

    def one_chunk(lo, hi):
        xi = _noise_block(grid, config.seed, range(lo, hi))
        records, _, blowups = _evolve_batch(
            config.u0.values, xi, config.exponent, config.sigma, grid,
            record_ks=record_ks,
        )
        return records, [(lo + r, k, mag) for r, k, mag in blowups]

    parts = map_chunks(one_chunk, r_total, ENSEMBLE_CHUNK, workers)
    blowups = [b for _, chunk_blows in parts for b in chunk_blows]
    blown_rows = np.array(sorted(b[0] for b in blowups), dtype=int)
    out = []
    for (k, i), (t, x) in zip(probes, config.observables):
        vals = np.concatenate([records[k][:, i] for records, _ in parts])
        keep = np.ones(r_total, dtype=bool)
        keep[blown_rows] = False
        meta = {
            "seed": config.seed,
            "sigma": config.sigma.name,
            "alpha": config.exponent.alpha,
            "beta": config.exponent.beta,
            "m_space": grid.m_space,
            "k_time": grid.k_time,
            "horizon": grid.horizon,
            "replicas_requested": r_total,
            "blowups": [(int(r), int(k_), float(m)) for r, k_, m in blowups],
        }
        out.append(SampleSet(probe=(t, x), values=vals[keep], metadata=meta))
    return out


@dataclass
class DensityEstimate:
    """Gaussian-kernel density on a fixed grid with finite-difference tables."""

    points: np.ndarray
    density: np.ndarray
    bandwidth: float
    d1: np.ndarray
    d2: np.ndarray
    metadata: dict = field(default_factory=dict)

    def integral(self):
        dx = np.diff(self.points)
        return float(np.sum(0.5 * dx * (self.density[1:] + self.density[:-1])))

    def cdf(self):
        """Cumulative trapezoid of the density along the grid."""
        dx = np.diff(self.points)
        inc = 0.5 * dx * (self.density[1:] + self.density[:-1])
        return np.concatenate([[0.0], np.cumsum(inc)])


def silverman_bandwidth(samples):
    """0.9 min(sd, iqr/1.34) n^(-1/5), the standard rule of thumb."""
    n = len(samples)
    sd = float(np.std(samples, ddof=1))
    q75, q25 = np.percentile(samples, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def kde(samples, bandwidth=None, eval_points=None):
    """Gaussian kernel density estimate with derivative tables.

    bandwidth defaults to the Silverman rule (recorded in metadata either
    way).  Zero-variance samples have no density; they raise
    DegenerateSamplesError carrying the point-mass location.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or len(samples) < 2:
        raise ValueError("need a 1-d array of at least 2 samples")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    if np.all(samples == samples[0]):
        raise DegenerateSamplesError(float(samples[0]), len(samples))
    if bandwidth is None:
        rule = "silverman"
        bandwidth = silverman_bandwidth(samples)
    else:
        rule = "explicit"
    if bandwidth <= 0:
        raise ValueError("need bandwidth > 0")
    if eval_points is None:
        lo = samples.min() - 4.0 * bandwidth
        hi = samples.max() + 4.0 * bandwidth
        eval_points = np.linspace(lo, hi, 512)
    else:
        eval_points = np.asarray(eval_points, dtype=float)
        if len(eval_points) < 8:
            raise ValueError("need at least 8 evaluation points")
    z = (eval_points[:, None] - samples[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z).mean(axis=1) / (bandwidth * math.sqrt(2 * math.pi))
    d1 = np.gradient(dens, eval_points)
    d2 = np.gradient(d1, eval_points)
    return DensityEstimate(
        points=eval_points, density=dens, bandwidth=float(bandwidth),
        d1=d1, d2=d2,
        metadata={"bandwidth_rule": rule, "samples": len(samples)},
    )


@dataclass
class SmoothnessReport:
    """Derivative magnitudes of the density over its central 95% mass."""

    bulk: tuple
    max_d1: float
    max_d2: float
    d2_sign_changes: int
    under_smoothed: bool

    def to_rows(self, run_id="density", seed=0, alpha=None, beta=None,
                probe=(0.0, 0.0), replicas=0):
        rows = []
        for quantity, value in (
            ("density_max_d1", self.max_d1),
            ("density_max_d2", self.max_d2),
            ("density_d2_sign_changes", float(self.d2_sign_changes)),
            ("density_under_smoothed", float(self.under_smoothed)),
        ):
            rows.append({
                "run_id": run_id, "seed": seed, "replica_count": replicas,
                "alpha": alpha, "beta": beta, "t": probe[0], "x": probe[1],
                "quantity": quantity, "value": value, "stderr": 0.0,
                "tail_bound": 0.0,
            })
        return rows


def smoothness_report(estimate):
    """Max |d1| and |d2| over the bulk, plus an oscillation flag.

    The bulk is the central 95% mass window.  A smooth unimodal density has
    exactly two sign changes of d2 (inflection points); more than two, after
    masking |d2| below 1e-3 of its peak to keep flat tails from flickering,
    means the bandwidth is too small for the sample size.
    """
    cdf = estimate.cdf()
    total = cdf[-1]
    if total <= 0:
        raise ValueError("estimate carries no mass")
    lo = float(np.interp(0.025 * total, cdf, estimate.points))
    hi = float(np.interp(0.975 * total, cdf, estimate.points))
    mask = (estimate.points >= lo) & (estimate.points <= hi)
    d1 = estimate.d1[mask]
    d2 = estimate.d2[mask]
    max_d2 = float(np.max(np.abs(d2)))
    sig = d2[np.abs(d2) > 1e-3 * max_d2]
    signs = np.sign(sig)
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    return SmoothnessReport(
        bulk=(lo, hi),
        max_d1=float(np.max(np.abs(d1))),
        max_d2=max_d2,
        d2_sign_changes=changes,
        under_smoothed=bool(changes > 2),
    )


class SlopeFit(tuple):
    """(slope, intercept, r2) of least squares on (log x, log y)."""

    __slots__ = ()

    def __new__(cls, slope, intercept, r2):
        return super().__new__(cls, (slope, intercept, r2))

    @property
    def slope(self):
        return self[0]

    @property
    def intercept(self):
        return self[1]

    @property
    def r2(self):
        return self[2]


def fit_slope(xs, ys):
    """Power-law fit: least squares of log y against log x."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 3 or len(xs) != len(ys):
        raise ValueError("need at least 3 (x, y) pairs")
    if len(np.unique(xs)) != len(xs):
        raise ValueError("x values must be distinct")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive data")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return SlopeFit(float(slope), float(intercept), float(r2))


# ---------------------------------------------------------------------------
# serialization


def _format_cell(column, value):
    if value is None:
        return ""
    if column in _STR_COLUMNS:
        return str(value)
    if column in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


def _coerce(column, value):
    if value is None:
        return None
    if column in _STR_COLUMNS:
        return str(value)
    if column in _INT_COLUMNS:
        return int(value)
    return float(value)


def _normalize_rows(rows):
    out = []
    for row in rows:
        extra = set(row) - set(CSV_COLUMNS)
        missing = set(CSV_COLUMNS) - set(row)
        if extra:
            raise ValueError(f"unknown row fields: {sorted(extra)}")
        if missing:
            raise ValueError(f"missing row fields: {sorted(missing)}")
        out.append({c: _coerce(c, row[c]) for c in CSV_COLUMNS})
    out.sort(key=lambda r: (r["quantity"], r["t"], r["x"]))
    return out


def emit(rows, fmt, path):
    """Write rows to path as CSV or JSON, deterministically.

    Fixed column set, rows sorted by (quantity, t, x), UTF-8, LF line ends,
    17-significant-digit floats; reruns of the same rows are byte-identical.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    rows = _normalize_rows(rows)
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"# {CSV_SCHEMA}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(c, row[c]) for c in CSV_COLUMNS])
        payload = buf.getvalue()
    else:
        payload = json.dumps({"schema": CSV_SCHEMA, "rows": rows},
                             sort_keys=True, indent=2) + "\n"
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err
    return path


def load_rows(path):
    """Read back a file written by emit, as a list of row dicts."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)["rows"]
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    rows = []
    for raw in reader:
        row = {}
        for col in CSV_COLUMNS:
            cell = raw[col]
            if cell == "":
                row[col] = None
            elif col in _STR_COLUMNS:
                row[col] = cell
            elif col in _INT_COLUMNS:
                row[col] = int(cell)
            else:
                row[col] = float(cell)
        rows.append(row)
    return rows
