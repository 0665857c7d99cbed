"""Per-angle shock-front extraction.

Pipeline for one propagation angle: pick two reference points on the d-t
ridge, grow a band below the line through them, keep the events inside it,
then run the slope-iterative search seeded by the two densest candidates.

Geometry in (t, d) space uses ``kappa`` (px per us) to put time on a pixel
scale; all slopes and distances below are in that scaled space.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, SeedingError, ValidationError
from .evcore import AngleSegment, PolarEvents, dt_histogram, partition_by_angle, sort_segment


@dataclass(frozen=True)
class FrontConfig:
    kappa: float = 0.01  # px per us
    rho: float = 0.15
    dist_threshold: float = 20.0
    density_q: float = 3.0
    min_separation_frac: float = 0.10
    T: float = 3.0
    epsilon0: float = 0.0
    t_bin: float = 100.0  # us
    d_bin: float = 2.0  # px
    window_fracs: tuple[float, float] = (0.3, 0.8)
    q_start: float = 2.0
    q_step: float = 1.0
    q_cap: float = 40.0
    plateau: float = 0.02
    plateau_min_count: int = 50
    burst_factor: float = 5.0
    product_rate: float = 50.0  # events / px / s
    ridge_min_bins: int = 5

    def __post_init__(self):
        checks = {
            "kappa": self.kappa > 0, "rho": self.rho > 0, "dist_threshold": self.dist_threshold > 0,
            "density_q": self.density_q > 0, "T": self.T >= 0, "t_bin": self.t_bin > 0,
            "d_bin": self.d_bin > 0, "q_start": self.q_start > 0, "q_step": self.q_step > 0,
            "q_cap": self.q_cap >= self.q_start, "plateau": 0 < self.plateau < 1,
            "min_separation_frac": 0 < self.min_separation_frac < 1,
            "burst_factor": self.burst_factor > 1,
            "product_rate": self.product_rate > 0,
            "ridge_min_bins": self.ridge_min_bins >= 1,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(f"invalid front-extraction parameters: {', '.join(bad)}")
        f1, f2 = self.window_fracs
        if not 0 <= f1 < f2 <= 1:
            raise ConfigError("window fractions must satisfy 0 <= f1 < f2 <= 1")


DEFAULT_FRONT_CONFIG = FrontConfig()


@dataclass(frozen=True)
class RoiBand:
    t1: float
    d1: float
    t2: float
    d2: float
    q_prime: float
    epsilon: float = 0.0
    T: float = 3.0
    kappa: float = 0.01

    def __post_init__(self):
        if not self.t1 < self.t2:
            raise ValidationError(f"band needs t1 < t2 (got {self.t1}, {self.t2})")
        if not self.d1 <= self.d2:
            raise ValidationError(f"band needs d1 <= d2 (got {self.d1}, {self.d2})")
        if not self.q_prime > 0 or self.T < 0 or not self.kappa > 0:
            raise ValidationError("band needs q_prime > 0, T >= 0, kappa > 0")

    @property
    def slope(self) -> float:
        """Slope of the line in kappa-scaled units."""
        return (self.d2 - self.d1) / (self.kappa * (self.t2 - self.t1))

    @property
    def cos_phi(self) -> float:
        return math.cos(math.atan(self.slope))

    def line(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.d1 + (t - self.t1) * (self.d2 - self.d1) / (self.t2 - self.t1)

    def signed_distance(self, t, d):
        """Perpendicular distance to the line, positive below it."""
        return (self.line(t) - np.asarray(d, dtype=np.float64)) * self.cos_phi

    def contains(self, t, d):
        t = np.asarray(t)
        d = np.asarray(d, dtype=np.float64)
        ln = self.line(t)
        return ((t >= self.t1) & (t <= self.t2) & (d >= self.d1) & (d <= self.d2)
                & (d >= ln - self.q_prime + self.epsilon) & (d <= ln + self.epsilon))


@dataclass(frozen=True, eq=False)
class CandidateSet:
    events: PolarEvents
    band: RoiBand

    def __len__(self):
        return len(self.events)


@dataclass(frozen=True)
class SeedPair:
    m: int  # candidate index of the densest event
    n: int
    sigma_m: int
    sigma_n: int
    t_prime: int
    t_second: int
    first: int  # candidate index of e' (earlier seed)
    second: int  # candidate index of e''


@dataclass(frozen=True)
class TraceEntry:
    stage: str  # S1 or S3
    position: int  # candidate index of the event that triggered the update
    reference: int
    benchmark: int
    k_tau: float


@dataclass(frozen=True, eq=False)
class FrontExtraction:
    s_prime: PolarEvents
    members: np.ndarray  # candidate indices, time-sorted
    slopes: np.ndarray  # k_s at acceptance
    k_tau: np.ndarray  # reference slope at acceptance
    trace: tuple[TraceEntry, ...] = ()
    k_tau0: float = float("nan")

    def __len__(self):
        return len(self.members)


# -- reference points -------------------------------------------------------

def _burst_bins(marginal, factor):
    nz = marginal[marginal > 0]
    if len(nz) == 0:
        return np.zeros(len(marginal), dtype=bool)
    med = float(np.median(marginal))
    spike = marginal > factor * max(med, 1.0)
    dil = spike.copy()
    dil[1:] |= spike[:-1]
    dil[:-1] |= spike[1:]
    return dil


def _pixel_rate(counts, d_bin, t_bin, width, trim=3):
    """Per-pixel event rate (events/px/s) of each distance bin of a sector
    ``width`` radians wide, ignoring the ``trim`` busiest time bins so a
    front crossing does not count."""
    n_t = counts.shape[0]
    kept = np.sort(counts, axis=0)[:max(n_t - trim, 1)]
    d_mid = (np.arange(counts.shape[1]) + 0.5) * d_bin
    npix = np.maximum(d_mid * d_bin * width, 1.0)
    return kept.mean(axis=0) / npix / (t_bin * 1e-6)


def _ridge_extent(counts, start_bin, min_bins):
    """Longest run of d bins (from ``start_bin``) whose peak time bin stands out."""
    peak = counts.max(axis=0)
    n_t = counts.shape[0]
    bg = (counts.sum(axis=0) - peak) / max(n_t - 1, 1)
    coherent = (peak >= 4) & (peak >= bg + 5.0 * np.sqrt(bg) + 3.0)
    coherent[:start_bin] = False
    best, run_start, best_run = 0, None, None
    gap = 0
    for j, ok in enumerate(np.append(coherent, False)):
        if ok:
            if run_start is None:
                run_start = j
            last = j
            gap = 0
        elif run_start is not None:
            gap += 1
            if gap > 2 or j == len(coherent):
                length = last - run_start + 1
                if length > best:
                    best, best_run = length, (run_start, last)
                run_start, gap = None, 0
    if best_run is None or best < min_bins:
        raise SeedingError("no coherent front ridge in the d-t diagram")
    return best_run


def select_reference_points(segment, config: FrontConfig = DEFAULT_FRONT_CONFIG):
    """Two anchors ``((t1, d1), (t2, d2))`` on the front ridge.

    Clutter is suppressed from the histogram marginals first: time bins
    that spike above ``burst_factor`` times the median are the firelight
    burst, and the outermost distance bin whose per-pixel event rate
    exceeds ``product_rate`` bounds the product cloud. The
    coherent ridge beyond it gives the radial extent; annular windows at
    ``window_fracs`` of that extent each yield one anchor: the event with
    the median time among the events in the window's median distance band.
    """
    ev = segment.events if isinstance(segment, AngleSegment) else segment
    if len(ev) == 0:
        raise SeedingError("empty segment")
    hist = dt_histogram(ev, config.t_bin, config.d_bin)
    counts = hist.counts.copy()
    burst = _burst_bins(counts.sum(axis=1), config.burst_factor)
    counts[burst] = 0
    quiet_rows = ~burst
    if not quiet_rows.any():
        raise SeedingError("segment consists only of a burst")
    if isinstance(segment, AngleSegment):
        width = math.radians(segment.alpha_hi - segment.alpha_lo)
    else:
        spread = float(np.ptp(ev.alpha))
        width = math.radians(spread) if spread > 0 else 2.0 * math.pi
    rate = _pixel_rate(counts[quiet_rows], config.d_bin, config.t_bin, width)
    busy = np.flatnonzero(rate > config.product_rate)
    start_bin = int(busy.max()) + 1 if len(busy) else 0
    j_in, j_out = _ridge_extent(counts, start_bin, config.ridge_min_bins)
    d_in = hist.origin[1] + j_in * config.d_bin
    d_out = hist.origin[1] + (j_out + 1) * config.d_bin
    extent = d_out - d_in

    ti = np.floor((ev.t - hist.origin[0]) / config.t_bin).astype(np.int64)
    keep = ~burst[ti]
    half = max(2.0 * config.d_bin, 0.05 * extent)
    anchors = []
    for frac in config.window_fracs:
        center = d_in + frac * extent
        inwin = keep & (np.abs(ev.d - center) <= half)
        if not inwin.any():
            raise SeedingError(f"monitoring window at d={center:.1f} px is empty")
        j0 = max(int((center - half - hist.origin[1]) // config.d_bin), 0)
        j1 = min(int((center + half - hist.origin[1]) // config.d_bin) + 1, counts.shape[1])
        ridge_t = int(np.argmax(counts[:, j0:j1].sum(axis=1)))
        gated = inwin & (np.abs(ti - ridge_t) <= 2)
        if np.count_nonzero(gated) < 3:
            raise SeedingError(f"monitoring window at d={center:.1f} px is under-populated")
        gd = ev.d[gated]
        band = gated & (np.abs(ev.d - np.median(gd)) <= 0.5 * config.d_bin)
        idx = np.flatnonzero(band)
        order = idx[np.argsort(ev.t[idx], kind="stable")]
        pick = order[(len(order) - 1) // 2]
        anchors.append((int(ev.t[pick]), float(ev.d[pick])))
    (t1, d1), (t2, d2) = anchors
    if not (t1 < t2 and d1 <= d2):
        raise SeedingError("reference points are not ordered along the front")
    return (t1, d1), (t2, d2)


# -- ROI --------------------------------------------------------------------

def _band_count(t, d, band):
    return int(np.count_nonzero(band.contains(t, d)))


def expand_search_radius(segment, band: RoiBand,
                         config: FrontConfig = DEFAULT_FRONT_CONFIG) -> float:
    """Grow the band width from ``q_start`` until the member count plateaus.

    A plateau is a step that adds less than ``plateau`` (relative) members
    once the band holds at least ``plateau_min_count`` events, so a few
    stray events ahead of the front cannot stop the growth. Returns
    ``q_start`` if nothing is ever found and ``q_cap`` if no plateau is
    reached.
    """
    ev = segment.events if isinstance(segment, AngleSegment) else segment
    box = (ev.t >= band.t1) & (ev.t <= band.t2) & (ev.d >= band.d1) & (ev.d <= band.d2)
    t, d = ev.t[box], ev.d[box]
    # depth below the shifted upper bound; members of width q are 0 <= depth <= q
    depth = band.line(t) + band.epsilon - d
    depth = np.sort(depth[depth >= 0])
    q = config.q_start
    count = int(np.searchsorted(depth, q, side="right"))
    while q < config.q_cap:
        q_next = min(q + config.q_step, config.q_cap)
        nxt = int(np.searchsorted(depth, q_next, side="right"))
        if count >= config.plateau_min_count and nxt - count < config.plateau * count:
            return q
        q, count = q_next, nxt
    return q if count > 0 else config.q_start


def _roi_mask(t, d, band):
    return band.contains(t, d)


def extract_roi(segment, band: RoiBand, workers: int = 1, chunk: int = 1 << 18) -> CandidateSet:
    """Events satisfying every inequality of the band, in time order."""
    ev = segment.events if isinstance(segment, AngleSegment) else segment
    n = len(ev)
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _roi_mask(ev.t[b[0]:b[1]], ev.d[b[0]:b[1]], band), bounds))
    else:
        parts = [_roi_mask(ev.t[a:b], ev.d[a:b], band) for a, b in bounds]
    mask = np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
    return CandidateSet(sort_segment(ev.take(np.flatnonzero(mask))), band)


def update_epsilon(s_prime, band: RoiBand, epsilon: float | None = None) -> float:
    """Offset for the next angle; unchanged unless both guards hold."""
    prev = band.epsilon if epsilon is None else epsilon
    ev = s_prime.events if isinstance(s_prime, CandidateSet) else s_prime
    if isinstance(ev, FrontExtraction):
        ev = ev.s_prime
    if len(ev) == 0:
        return prev
    dist = band.signed_distance(ev.t, ev.d)
    lo, hi = float(dist.min()), float(dist.max())
    c = band.cos_phi
    if lo <= band.T and band.T <= band.q_prime * c - hi:
        return (band.T - lo) / c
    return prev


# -- seeding and slope iteration -------------------------------------------

def event_density(candidates, e=None, q: float = 3.0, kappa: float = 0.01):
    """Events inside the (2q+1) box around ``e`` in scaled (t, d); counts ``e`` itself.

    With ``e=None`` the density of every candidate is returned.
    """
    ev = candidates.events if isinstance(candidates, CandidateSet) else candidates
    t = np.asarray(ev.t, dtype=np.int64)
    d = np.asarray(ev.d, dtype=np.float64)
    if e is not None:
        te, de = (int(ev.t[e]), float(ev.d[e])) if np.isscalar(e) else (int(e[0]), float(e[1]))
        return int(np.count_nonzero((np.abs((t - te) * kappa) <= q) & (np.abs(d - de) <= q)))
    n = len(t)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(t, kind="stable")
    ts, ds = t[order], d[order]
    reach = int(math.floor(q / kappa)) + 1
    lo = np.searchsorted(ts, ts - reach, side="left")
    hi = np.searchsorted(ts, ts + reach, side="right")
    sizes = hi - lo
    out = np.empty(n, dtype=np.int64)
    # bounded memory: process rows in blocks
    block = max(1, int(4_000_000 // max(int(sizes.max()), 1)))
    for s in range(0, n, block):
        e_ = min(s + block, n)
        sz = sizes[s:e_]
        rows = np.repeat(np.arange(s, e_), sz)
        cols = np.repeat(lo[s:e_] - np.cumsum(sz) + sz, sz) + np.arange(sz.sum())
        ok = (np.abs((ts[cols] - ts[rows]) * kappa) <= q) & (np.abs(ds[cols] - ds[rows]) <= q)
        out[s:e_] = np.bincount(rows - s, weights=ok, minlength=e_ - s).astype(np.int64)
    res = np.empty(n, dtype=np.int64)
    res[order] = out
    return res


def seed_pair(candidates, q: float = 3.0, min_separation: float = 0.0,
              kappa: float = 0.01, density=None) -> SeedPair:
    """Densest event, then the densest one at least ``min_separation`` us away.

    Ties go to the earlier time, then the smaller distance.
    """
    ev = candidates.events if isinstance(candidates, CandidateSet) else candidates
    if len(ev) < 2:
        raise SeedingError("need at least two candidates to seed")
    sigma = event_density(ev, None, q, kappa) if density is None else np.asarray(density)
    rank = np.lexsort((ev.index, ev.d, ev.t, -sigma))
    m = int(rank[0])
    far = np.abs(ev.t[rank] - ev.t[m]) >= min_separation
    if not far.any():
        raise SeedingError(f"no candidate lies {min_separation} us from the densest event")
    n = int(rank[np.argmax(far)])
    first, second = (m, n) if (ev.t[m], ev.d[m]) <= (ev.t[n], ev.d[n]) else (n, m)
    return SeedPair(m, n, int(sigma[m]), int(sigma[n]), int(ev.t[first]), int(ev.t[second]),
                    first, second)


def partition_sets(candidates, t_prime, t_second):
    """Index arrays of S1 (t < t'), S2 (t' <= t <= t'') and S3 (t > t'')."""
    if t_prime > t_second:
        raise ValidationError("partition needs t' <= t''")
    ev = candidates.events if isinstance(candidates, CandidateSet) else candidates
    t = np.asarray(ev.t)
    s1 = np.flatnonzero(t < t_prime)
    s2 = np.flatnonzero((t >= t_prime) & (t <= t_second))
    s3 = np.flatnonzero(t > t_second)
    return s1, s2, s3


def slope(e, e_ref, kappa: float = 0.01) -> float:
    """Scaled slope between two ``(t, d)`` points."""
    dt = e[0] - e_ref[0]
    if dt == 0:
        raise ValidationError("slope undefined for equal timestamps")
    return (e[1] - e_ref[1]) / (kappa * dt)


def extract_front(candidates, seeds: SeedPair, rho: float = 0.15, dist_threshold: float = 20.0,
                  kappa: float = 0.01) -> FrontExtraction:
    """Slope-iterative search over the candidates."""
    ev = candidates.events if isinstance(candidates, CandidateSet) else candidates
    if not rho > 0:
        raise ConfigError("rho must be > 0")
    n = len(ev)
    if n == 0:
        empty = np.zeros(0)
        return FrontExtraction(ev, np.zeros(0, dtype=np.int64), empty, empty)
    t = ev.t.astype(np.float64) * kappa
    d = ev.d
    T = ev.t

    def k(i, j):
        return (d[i] - d[j]) / (t[i] - t[j])

    def dist(i, j):
        return math.hypot(t[i] - t[j], d[i] - d[j])

    def along(i, j, k_ref):
        # shortest chord over the events' time gap among slopes within rho of
        # k_ref; a lower bound on their distance that ignores the offset in d
        k_low = max(abs(k_ref) - rho, 0.0)
        return abs(t[i] - t[j]) * math.sqrt(1.0 + k_low * k_low)

    a, b = seeds.first, seeds.second
    k0 = k(b, a)
    accepted, ks, kt = [], [], []
    trace = []
    s1, s2, s3 = partition_sets(ev, seeds.t_prime, seeds.t_second)

    for i in s2:
        ref = a if dist(i, a) >= dist(i, b) else b
        if T[i] == T[ref]:
            continue
        ki = k(i, ref)
        if abs(ki - k0) <= rho:
            accepted.append(i)
            ks.append(ki)
            kt.append(k0)

    for stage, order, ref, bench in (("S1", s1[::-1], b, a), ("S3", s3, a, b)):
        k_tau = k0
        for i in order:
            if T[i] == T[ref]:
                continue
            ki = k(i, ref)
            if abs(ki - k_tau) > rho:
                continue
            accepted.append(i)
            ks.append(ki)
            kt.append(k_tau)
            # the distance test is driven by the time gap alone, so an event
            # lying off the front gains no head start toward the threshold;
            # the slope gate below keeps the true distance above it
            if along(i, bench, k_tau) > dist_threshold:
                k_new = k(i, bench)
                # the reference slope only moves in small steps; a chord that
                # jumps by more than rho defers the update to a later event
                if abs(k_new - k_tau) > rho:
                    continue
                k_tau = k_new
                ref, bench = bench, i
                trace.append(TraceEntry(stage, int(i), int(ref), int(bench), float(k_tau)))

    members = np.asarray(accepted, dtype=np.int64)
    order = np.argsort(members, kind="stable")
    members = members[order]
    return FrontExtraction(ev.take(members), members, np.asarray(ks)[order], np.asarray(kt)[order],
                           tuple(trace), float(k0))


# -- per-view driver ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AngleResult:
    alpha_lo: float
    alpha_hi: float
    band: RoiBand | None = None
    candidates: CandidateSet | None = None
    seeds: SeedPair | None = None
    extraction: FrontExtraction | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.extraction is not None

    @property
    def center(self) -> float:
        return 0.5 * (self.alpha_lo + self.alpha_hi)


def parse_angles(spec: str) -> tuple[float, float, float]:
    """``start:stop:step`` in degrees."""
    try:
        start, stop, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ConfigError(f"angles must be start:stop:step, got {spec!r}") from None
    if not (0 <= start < stop <= 360 and step > 0):
        raise ConfigError(f"bad angle range {spec!r}")
    return start, stop, step


def extract_angle(segment, epsilon: float, config: FrontConfig = DEFAULT_FRONT_CONFIG,
                  workers: int = 1) -> AngleResult:
    """Run the full chain for one angle with the incoming offset ``epsilon``."""
    lo, hi = (segment.alpha_lo, segment.alpha_hi) if isinstance(segment, AngleSegment) else (0.0, 360.0)
    try:
        (t1, d1), (t2, d2) = select_reference_points(segment, config)
        probe = RoiBand(t1, d1, t2, d2, config.q_cap, epsilon, config.T, config.kappa)
        q_plateau = expand_search_radius(segment, probe, config)
        # keep a tolerance margin below the front so the offset update can act
        q_prime = q_plateau + config.T / probe.cos_phi
        band = replace(probe, q_prime=q_prime)
        cands = extract_roi(segment, band, workers)
        seeds = seed_pair(cands, config.density_q, config.min_separation_frac * (t2 - t1),
                          config.kappa)
        front = extract_front(cands, seeds, config.rho, config.dist_threshold, config.kappa)
    except (SeedingError, ValidationError) as exc:
        return AngleResult(lo, hi, error=str(exc))
    return AngleResult(lo, hi, band, cands, seeds, front)


def extract_view(events: PolarEvents, angles=(0.0, 360.0, 5.0),
                 config: FrontConfig = DEFAULT_FRONT_CONFIG, t_start: float | None = None,
                 workers: int = 1) -> list[AngleResult]:
    """Extract every angle of one view in ascending order, carrying the offset."""
    start, stop, step = angles
    if t_start is not None:
        events = events.take(np.flatnonzero(events.t >= t_start))
    width = float(step)
    segments = None
    if 360.0 / width == round(360.0 / width):
        segments = {s.alpha_lo: s for s in partition_by_angle(events, width)}
    results = []
    eps = config.epsilon0
    a = start
    while a < stop - 1e-9:
        b = min(a + width, stop)
        if segments is not None and abs(b - a - width) < 1e-9 and a in segments:
            seg = segments[a]
        else:
            mask = (events.alpha >= a) & (events.alpha < b)
            seg = AngleSegment(a, b, sort_segment(events.take(np.flatnonzero(mask))))
        res = extract_angle(seg, eps, config, workers)
        if res.ok:
            eps = update_epsilon(res.extraction.s_prime, res.band, eps)
        results.append(res)
        a += width
    return results
