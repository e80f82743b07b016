"""Coincidence analysis: counting, Δt histograms, comb contrast, envelope and
HOM-dip fits, visibilities and scan bookkeeping."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, signal

from .detection import TimeTagStream
from .params import SPEED_OF_LIGHT, ConfigError, SourceConfig, derive_quantities
from .simulation import simulate_stream
from .source import MeasurementBasis, triangle


class VisibilityError(ValueError):
    pass


class ScanFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# coincidences


def window_ticks(window: float, resolution: float) -> tuple[int, int]:
    """Half-open tick interval [lo, hi) of total width ``window``, centred on 0."""
    if window < resolution:
        raise ConfigError("coincidence_window", "must be >= stream resolution")
    width = int(round(window / resolution))
    return -(width // 2), width - width // 2


def count_coincidences(stream: TimeTagStream, window: float) -> tuple[int, np.ndarray]:
    """All A-B pairs with Δt = t_B - t_A inside the window.

    Every pair is counted (not first match).  The window is the total width
    τ, taken half-open as [-τ/2, τ/2), so uncorrelated streams give exactly
    R_A R_B τ.  Returns the pair count and signed Δt in tagger ticks.
    """
    lo_off, hi_off = window_ticks(window, stream.resolution)
    a, b = stream.a, stream.b
    if len(a) == 0 or len(b) == 0:
        return 0, np.empty(0, dtype=np.int64)
    lo = np.searchsorted(b, a + lo_off, side="left")
    hi = np.searchsorted(b, a + hi_off, side="left")
    per_a = hi - lo
    total = int(per_a.sum())
    starts = np.repeat(lo, per_a)
    offsets = np.arange(total) - np.repeat(np.cumsum(per_a) - per_a, per_a)
    dt = b[starts + offsets] - np.repeat(a, per_a)
    return total, dt


def accidental_rate(r1: float, r2: float, window: float) -> float:
    if r1 < 0 or r2 < 0 or window < 0:
        raise ConfigError("rate", "rates and window must be nonnegative")
    return r1 * r2 * window


def accidental_rate_sigma(r1: float, r2: float, window: float, duration: float) -> float:
    """Standard deviation of the measured accidental rate over ``duration``.

    Pair counts of two Poisson streams have variance μ (1 + (R1 + R2) τ).
    """
    mu = accidental_rate(r1, r2, window) * duration
    return math.sqrt(mu * (1 + (r1 + r2) * window)) / duration


# ---------------------------------------------------------------------------
# histograms


@dataclass
class Histogram:
    bin_width: float
    origin: float
    counts: np.ndarray
    total_events: int

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(len(self.counts) + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.origin + self.bin_width * (np.arange(len(self.counts)) + 0.5)

    def zero_index(self) -> int:
        """Index of the bin whose lower edge is Δt = 0."""
        k = -self.origin / self.bin_width
        if abs(k - round(k)) > 1e-6:
            raise ValueError("Δt = 0 is not a bin edge")
        return int(round(k))

    def rebin(self, factor: int) -> "Histogram":
        factor = int(factor)
        if factor <= 1:
            return self
        z = self.zero_index()
        # keep Δt = 0 on an edge: trim so both sides are whole multiples
        left = (z // factor) * factor
        right = ((len(self.counts) - z) // factor) * factor
        c = self.counts[z - left: z + right].reshape(-1, factor).sum(axis=1)
        return Histogram(self.bin_width * factor, -left * self.bin_width, c, self.total_events)

    def write_csv(self, path, header_lines: list[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_start_ns", "bin_center_ns", "counts"])
            for lo, mid, c in zip(self.edges[:-1], self.centers, self.counts.tolist()):
                w.writerow([f"{lo * 1e9:.6f}", f"{mid * 1e9:.6f}", c])


def build_histogram(dt, bin_width: float, range_: float, resolution: float | None = None) -> Histogram:
    """Histogram of Δt over [-range_, range_) with floor binning.

    ``dt`` is in seconds, or in tagger ticks when ``resolution`` is given.
    """
    if not bin_width > 0:
        raise ConfigError("bin_width", "must be > 0")
    dt = np.asarray(dt)
    n_bins = int(round(2 * range_ / bin_width))
    scale = (resolution if resolution is not None else 1.0) / bin_width
    # rounding guards tick multiples that land exactly on bin edges
    idx = np.floor(np.round(dt * scale + range_ / bin_width, 9)).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < n_bins)]
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return Histogram(bin_width, -n_bins / 2 * bin_width, counts, int(dt.size))


# ---------------------------------------------------------------------------
# envelope


@dataclass
class EnvelopeFit:
    decay: float
    amplitude: float
    background: float
    decay_err: float
    converged: bool


def _two_sided_exp_integral(a, b, tau):
    def prim(t):
        return np.sign(t) * tau * (1.0 - np.exp(-np.abs(t) / tau))
    return prim(b) - prim(a)


def fit_envelope(hist: Histogram, rebin_width: float = 4e-9, guess_decay: float = 20e-9) -> EnvelopeFit:
    """Fit A exp(-|Δt|/τ) + B, integrated over each bin, to a Δt histogram.

    Rebinning to a few ns averages the round-trip comb into its envelope.
    """
    h = hist.rebin(max(1, int(round(rebin_width / hist.bin_width))))
    lo, hi = h.edges[:-1], h.edges[1:]
    y = h.counts.astype(float)
    sigma = np.sqrt(np.maximum(y, 1.0))
    scale_t = 1e-9

    def model(_, amp, tau_ns, bg):
        return amp * _two_sided_exp_integral(lo / scale_t, hi / scale_t, tau_ns) + bg * (hi - lo) / scale_t

    bg0 = float(np.median(np.concatenate([y[:3], y[-3:]]))) / (h.bin_width / scale_t)
    peak = max(float(y.max()) - bg0 * h.bin_width / scale_t, 1.0)
    amp0 = peak / (h.bin_width / scale_t)
    try:
        popt, pcov = optimize.curve_fit(model, None, y, p0=[amp0, guess_decay / scale_t, bg0],
                                        sigma=sigma, absolute_sigma=True, maxfev=20000)
        ok = bool(np.all(np.isfinite(pcov)))
    except RuntimeError:
        return EnvelopeFit(math.nan, math.nan, math.nan, math.nan, False)
    err = math.sqrt(pcov[1, 1]) if ok else math.nan
    return EnvelopeFit(popt[1] * scale_t, popt[0], popt[2], err * scale_t, ok)


# ---------------------------------------------------------------------------
# comb


@dataclass
class CombSpacing:
    spacing: float
    peak_positions: np.ndarray
    peak_indices: np.ndarray


def comb_peak_spacing(hist: Histogram, min_separation: float = 1e-9, threshold_sigma: float = 5.0) -> CombSpacing:
    """Locate comb peaks in a finely binned Δt histogram and fit their spacing.

    Peaks are local maxima standing ``threshold_sigma`` above the median
    background; positions are count-weighted centroids over ±3 bins, peak
    numbers come from rounding to the median gap, and the spacing is the
    least-squares slope of position against peak number.
    """
    c = hist.counts.astype(float)
    base = float(np.median(c))
    height = base + threshold_sigma * math.sqrt(max(base, 1.0))
    dist = max(1, int(round(min_separation / hist.bin_width)))
    peaks, _ = signal.find_peaks(c, height=height, distance=dist)
    if len(peaks) < 3:
        return CombSpacing(math.nan, np.empty(0), np.empty(0, dtype=np.int64))
    pos = []
    for p in peaks:
        lo, hi = max(0, p - 3), min(len(c), p + 4)
        w = np.maximum(c[lo:hi] - base, 0.0)
        pos.append(np.sum(w * hist.centers[lo:hi]) / np.sum(w))
    pos = np.array(pos)
    gap = float(np.median(np.diff(pos)))
    idx = np.round((pos - pos[np.argmin(np.abs(pos))]) / gap).astype(np.int64)
    slope = float(np.polyfit(idx, pos, 1)[0])
    return CombSpacing(slope, pos, idx)


@dataclass
class CombContrast:
    contrast: np.ndarray        # |c2k - c2k+1| / (c2k + c2k+1), NaN where flagged
    signed: np.ndarray          # smoothed signed alternation
    period: float               # 2 x first vanishing index
    crossings: np.ndarray       # all vanishing indices found
    minima_spacing: float       # mean spacing of successive vanishing points
    flagged: np.ndarray


def _nan_moving_average(x: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return x.copy()
    valid = np.isfinite(x)
    k = np.ones(window)
    num = np.convolve(np.where(valid, x, 0.0), k, mode="same")
    den = np.convolve(valid.astype(float), k, mode="same")
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, np.nan)


def _refine_root(x: np.ndarray, k: int, half: int) -> float:
    lo, hi = max(0, k - half), min(len(x), k + half + 2)
    idx = np.arange(lo, hi)
    ok = np.isfinite(x[lo:hi])
    if ok.sum() >= 2:
        slope, icept = np.polyfit(idx[ok], x[lo:hi][ok], 1)
        if slope != 0:
            root = -icept / slope
            if lo - 1 <= root <= hi:
                return float(root)
    return k + 0.5


def comb_contrast(hist: Histogram, smooth: int = 3, min_pair_counts: int = 25, fold: bool = True,
                  min_separation: int = 5) -> CombContrast:
    """Alternating-bin contrast of a tagger-resolution Δt histogram.

    With ``fold`` the Δt < 0 side is mirrored onto Δt >= 0 (the comb is
    symmetric under signal/idler exchange).  Bin pairs (2k, 2k+1) with fewer
    than ``min_pair_counts`` counts are flagged and skipped.  Zero-delay
    photons always share a bin, so contrast is maximal at k = 0 and first
    vanishes half a moiré period later; ``period`` is twice that index.
    """
    z = hist.zero_index()
    c = hist.counts.astype(float)
    n = min(len(c) - z, z + 1) if fold else len(c) - z
    pos = c[z: z + n]
    if fold:
        neg = c[z - np.arange(n)]
        f = pos + neg
    else:
        f = pos
    m = len(f) // 2
    even, odd = f[0: 2 * m: 2], f[1: 2 * m: 2]
    total = even + odd
    flagged = total < min_pair_counts
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(flagged, np.nan, (even - odd) / total)
    sm = _nan_moving_average(s, smooth)

    crossings = []
    last = -np.inf
    sign = np.sign(sm)
    for k in range(len(sm) - 1):
        if not (np.isfinite(sm[k]) and np.isfinite(sm[k + 1])):
            continue
        if sign[k] != 0 and sign[k] != sign[k + 1] and k - last >= min_separation:
            crossings.append(_refine_root(s, k, max(smooth, 3)))
            last = k
    crossings = np.array(crossings)
    period = 2 * crossings[0] if len(crossings) else math.nan
    spacing = float(np.mean(np.diff(crossings))) if len(crossings) > 1 else math.nan
    return CombContrast(np.abs(s), sm, period, crossings, spacing, flagged)


# ---------------------------------------------------------------------------
# visibility and triangular dip fit


def visibility(c_max: float, c_min: float) -> float:
    """(C_max - C_min) / (C_max + C_min)."""
    if c_max == 0 and c_min == 0:
        raise VisibilityError("visibility undefined for C_max = C_min = 0")
    if c_min < 0 or c_max < c_min:
        raise VisibilityError(f"need C_max >= C_min >= 0, got {c_max!r}, {c_min!r}")
    return (c_max - c_min) / (c_max + c_min)


def hom_model(path_difference, r_avg: float, zeta: float, center: float, vis: float = 1.0):
    """R_avg (1 - V Λ((Δl - center) ζ / 2c))."""
    x = (np.asarray(path_difference, dtype=float) - center) * zeta / (2 * SPEED_OF_LIGHT)
    return r_avg * (1.0 - vis * triangle(x))


@dataclass
class TriangleFit:
    r_avg: float
    zeta: float
    center: float
    vis_param: float            # dip depth V in the model
    visibility: float           # (C_max - C_min)/(C_max + C_min) of the fitted curve
    width: float                # base-to-base width 4c/ζ, m
    residual_norm: float
    converged: bool
    n_evals: int
    visibility_err: float = math.nan
    width_err: float = math.nan
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def fit_triangle(path_difference, rates, variances=None, exclude=None, fix_visibility: float | None = None,
                 max_evals: int = 10_000, rtol: float = 1e-10) -> TriangleFit:
    """Least-squares fit of the triangular dip model.

    Derivative-free bounded Nelder-Mead from several starts (the kink defeats
    gradient methods).  Data are normalised by their maximum first so the
    fitted centre, width and visibility are invariant under count scaling.
    ``exclude`` is an optional boolean mask of points to ignore;
    ``fix_visibility=1`` recovers the pure two-parameter-shape model.
    """
    x_all = np.asarray(path_difference, dtype=float)
    y_all = np.asarray(rates, dtype=float)
    keep = np.ones(len(x_all), dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    x, y = x_all[keep], y_all[keep]
    var = None if variances is None else np.asarray(variances, dtype=float)[keep]
    if len(x) < 5:
        raise ConfigError("scan", "need at least 5 grid points to fit the dip")
    order = np.argsort(x)
    x, y = x[order], y[order]
    if var is not None:
        var = var[order]

    scale = float(np.max(np.abs(y)))
    if scale == 0 or np.ptp(y) <= 1e-12 * scale:
        r = float(np.mean(y)) if len(y) else 0.0
        return TriangleFit(r, math.nan, math.nan, 0.0, 0.0, math.nan, float(np.linalg.norm(y - r)),
                           True, 0, message="flat data: zero visibility")

    xm = x * 1e3  # mm
    yn = y / scale
    span = float(xm[-1] - xm[0])
    step = float(np.min(np.diff(xm))) if len(xm) > 1 else 1.0

    def model(p, xx):
        r, w, c, v = p
        return r * (1.0 - v * triangle(2.0 * (xx - c) / w))

    def cost(p):
        if fix_visibility is not None:
            p = (p[0], p[1], p[2], fix_visibility)
        return float(np.sum((model(p, xm) - yn) ** 2))

    bounds = [(0.0, 10.0), (step * 0.05, 2.0 * span), (xm[0], xm[-1]), (0.0, 1.0)]
    if fix_visibility is not None:
        bounds = bounds[:3]

    top = float(np.median(np.sort(yn)[-max(3, len(yn) // 4):]))
    i_min = int(np.argmin(yn))
    depth0 = min(1.0, max(0.05, 1.0 - yn[i_min] / max(top, 1e-12)))
    centers = sorted({xm[i_min], *(xm[max(0, i_min - 1): i_min + 2]), xm[i_min] - step / 2, xm[i_min] + step / 2})
    widths = [max(4 * step, 1e-3), span / 8, span / 4, span / 2]

    best, n_evals, converged = None, 0, False
    for c0 in centers:
        for w0 in widths:
            p0 = [top, w0, min(max(c0, xm[0]), xm[-1]), depth0]
            if fix_visibility is not None:
                p0 = p0[:3]
            res = optimize.minimize(cost, p0, method="Nelder-Mead", bounds=bounds,
                                    options={"maxfev": max_evals, "xatol": 1e-12, "fatol": 1e-16})
            n_evals += res.nfev
            if best is None or res.fun < best.fun:
                best = res
    # polish from the best start until the relative cost change is below rtol
    prev = best.fun
    for _ in range(50):
        res = optimize.minimize(cost, best.x, method="Nelder-Mead", bounds=bounds,
                                options={"maxfev": max_evals, "xatol": 1e-13, "fatol": 1e-18})
        n_evals += res.nfev
        if res.fun <= best.fun:
            best = res
        if abs(prev - best.fun) <= rtol * max(prev, 1e-300):
            converged = True
            break
        prev = best.fun
        if n_evals > 20 * max_evals:
            break

    p = list(best.x) + ([fix_visibility] if fix_visibility is not None else [])
    r, w, c, v = p
    r_avg = r * scale
    width = w * 1e-3
    zeta = 4 * SPEED_OF_LIGHT / width
    c_min = r_avg * (1 - v)
    vis = visibility(r_avg, c_min) if r_avg > 0 else 0.0
    resid = float(np.linalg.norm(model(p, xm) * scale - y))

    vis_err = width_err = math.nan
    if var is not None:
        vis_err, width_err = _fit_errors(model, p, xm, scale, var, fix_visibility is not None)

    return TriangleFit(r_avg, zeta, c * 1e-3, v, vis, width, resid, converged, n_evals,
                       vis_err, width_err, "" if converged else "fit did not converge")


def _fit_errors(model, p, xm, scale, var, fixed_v):
    """Linearised (Gauss-Newton) standard errors of visibility and width."""
    p = np.array(p, dtype=float)
    n_free = 3 if fixed_v else 4
    jac = np.empty((len(xm), n_free))
    for j in range(n_free):
        h = 1e-6 * max(abs(p[j]), 1e-3)
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (model(up, xm) - model(dn, xm)) * scale / (2 * h)
    wts = 1.0 / np.maximum(var, 1e-300)
    try:
        cov = np.linalg.inv(jac.T @ (jac * wts[:, None]))
    except np.linalg.LinAlgError:
        return math.nan, math.nan
    width_err = math.sqrt(max(cov[1, 1], 0.0)) * 1e-3
    if fixed_v:
        return 0.0, width_err
    v = p[3]
    dvis = 2.0 / (2.0 - v) ** 2  # d/dV of V/(2-V)
    return dvis * math.sqrt(max(cov[3, 3], 0.0)), width_err


# ---------------------------------------------------------------------------
# HOM scan


@dataclass
class HomFit:
    r_avg: float
    zeta_fit: float
    center: float
    visibility_raw: float
    visibility_corrected: float
    residual_norm: float
    width: float
    visibility_raw_err: float
    visibility_corrected_err: float
    width_err: float
    converged: bool
    raw: TriangleFit
    corrected: TriangleFit

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HomScanResult:
    path_difference: np.ndarray
    coincidences: np.ndarray
    singles_a: np.ndarray
    singles_b: np.ndarray
    live_time: np.ndarray
    accidentals: np.ndarray
    window: float
    accidental_window: float
    fit: HomFit | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        order = np.argsort(self.path_difference, kind="stable")
        for name in ("path_difference", "coincidences", "singles_a", "singles_b", "live_time", "accidentals"):
            setattr(self, name, np.asarray(getattr(self, name))[order])

    @property
    def rates(self) -> np.ndarray:
        return _safe_div(self.coincidences, self.live_time)

    @property
    def corrected_rates(self) -> np.ndarray:
        return _safe_div(self.coincidences - self.accidentals, self.live_time)

    @property
    def rate_variances(self) -> np.ndarray:
        return _safe_div(np.maximum(self.coincidences, 1.0), self.live_time**2)

    def write_csv(self, path, header_lines: list[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCAN_COLUMNS)
            for row in zip(self.path_difference, self.coincidences, self.singles_a, self.singles_b,
                           self.live_time, self.accidentals):
                w.writerow([f"{row[0] * 1e3:.6f}", int(row[1]), int(row[2]), int(row[3]),
                            f"{row[4]:.9g}", f"{row[5]:.6f}"])

    @classmethod
    def read_csv(cls, path, window: float = 256e-9) -> "HomScanResult":
        """Read a scan CSV.  Only path_difference_mm and coincidences are required."""
        cols: dict[str, list[float]] = {}
        with open(path, newline="") as fh:
            lines = [(i, ln) for i, ln in enumerate(fh, start=1) if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines:
            raise ScanFormatError("empty scan file")
        header_no, header_line = lines[0]
        header = [h.strip() for h in next(csv.reader([header_line]))]
        for req in ("path_difference_mm", "coincidences"):
            if req not in header:
                raise ScanFormatError(f"row {header_no}: missing required column {req!r}")
        for lineno, line in lines[1:]:
            row = next(csv.reader([line]))
            if len(row) != len(header):
                raise ScanFormatError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            for name, val in zip(header, row):
                try:
                    cols.setdefault(name, []).append(float(val))
                except ValueError:
                    raise ScanFormatError(f"row {lineno}: column {name!r} is not a number: {val!r}") from None
        n = len(cols.get("coincidences", []))
        if n == 0:
            raise ScanFormatError("scan file has no data rows")

        def col(name, default):
            return np.asarray(cols[name], dtype=float) if name in cols else np.full(n, default, dtype=float)

        return cls(
            path_difference=col("path_difference_mm", 0.0) * 1e-3,
            coincidences=col("coincidences", 0.0),
            singles_a=col("singles_a", 0.0),
            singles_b=col("singles_b", 0.0),
            live_time=col("live_time_s", 1.0),
            accidentals=col("accidentals", 0.0),
            window=window,
            accidental_window=window,
        )


SCAN_COLUMNS = ["path_difference_mm", "coincidences", "singles_a", "singles_b", "live_time_s", "accidentals"]


def _safe_div(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(b > 0, a / np.where(b > 0, b, 1.0), 0.0)


def _scan_point(args):
    config, dl, duration, seed, index, window, acc_window, n_chunks = args
    stream = simulate_stream(config, MeasurementBasis.DIAG, duration, [*np.atleast_1d(seed).tolist(), index], dl,
                             n_chunks=n_chunks)
    n_coin, _ = count_coincidences(stream, window)
    s_a, s_b, live = len(stream.a), len(stream.b), stream.live_time
    acc = accidental_rate(s_a / live, s_b / live, acc_window) * live if live > 0 else 0.0
    return n_coin, s_a, s_b, live, acc


def run_hom_scan(config: SourceConfig, grid, duration: float, seed, window: float | None = None,
                 accidental_window: float | None = None, workers: int = 1, n_chunks: int = 1,
                 fit: bool = True, exclude=None) -> HomScanResult:
    """Coincidences in the diagonal basis for each compensator setting.

    Each point draws from its own stream derived from (seed, point index).
    Accidentals per point are R_A R_B τ_acc x live time from that point's
    singles.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("grid", "scan grid is empty")
    if not duration > 0:
        raise ConfigError("duration", "must be > 0 for a scan")
    window = config.coincidence_window if window is None else window
    acc_window = window if accidental_window is None else accidental_window
    jobs = [(config, float(dl), duration, seed, i, window, acc_window, n_chunks) for i, dl in enumerate(grid)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_scan_point, jobs))
    else:
        rows = [_scan_point(j) for j in jobs]
    arr = np.array(rows, dtype=float).reshape(len(grid), 5)
    result = HomScanResult(grid, arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64),
                           arr[:, 3], arr[:, 4], window, acc_window,
                           meta={"duration_per_point": duration, "seed": seed})
    if fit and len(grid) >= 5:
        result.fit = fit_scan(result, exclude=exclude)
    return result


def fit_scan(scan: HomScanResult, exclude=None) -> HomFit:
    """Fit raw and accidental-subtracted rates; width and centre from the latter."""
    var = scan.rate_variances
    raw = fit_triangle(scan.path_difference, scan.rates, var, exclude=exclude)
    corr = fit_triangle(scan.path_difference, scan.corrected_rates, var, exclude=exclude)
    return HomFit(
        r_avg=corr.r_avg,
        zeta_fit=corr.zeta,
        center=corr.center,
        visibility_raw=raw.visibility,
        visibility_corrected=corr.visibility,
        residual_norm=corr.residual_norm,
        width=corr.width,
        visibility_raw_err=raw.visibility_err,
        visibility_corrected_err=corr.visibility_err,
        width_err=corr.width_err,
        converged=raw.converged and corr.converged,
        raw=raw,
        corrected=corr,
    )


def standard_scan_grid(config: SourceConfig, span: float = 8e-3, step: float = 0.2e-3) -> np.ndarray:
    n = int(round(span / step)) + 1
    return config.path_difference_center + (np.arange(n) - (n - 1) / 2) * step


def expected_hom_width(config: SourceConfig) -> float:
    return derive_quantities(config).hom_base_width
