"""Parametric GEDI-like waveform generator with exact relative-height truth.

Scenes are mixtures of Gaussian modes on a height-above-ground axis: one
ground return plus one or more canopy layers. Waveforms are the mode masses
integrated over 0.15 m bins, scaled to a total energy in counts, plus
white noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .waveform import (BIN_SPACING_M, Dataset, RawWaveform, TargetKind,
                       TargetSpec)

MAX_TRAINING_HEIGHT_M = 70.0

# (lat_min, lat_max, lon_min, lon_max)
REGION_BOXES = {
    "NA": (30.0, 60.0, -125.0, -65.0),
    "EU": (40.0, 65.0, -10.0, 30.0),
    "AF": (-30.0, 10.0, 10.0, 40.0),
    "AU": (-40.0, -15.0, 115.0, 150.0),
    "TR": (-23.5, 23.5, -75.0, -45.0),
}


@dataclass(frozen=True)
class Mode:
    center_m: float
    width_m: float
    weight: float


@dataclass(frozen=True)
class SceneParams:
    ground_elev_m: float
    canopy_height_m: float
    canopy_modes: tuple = ()
    ground_width_m: float = 0.7
    ground_weight: float = 1.0
    cover_fraction: float = 0.0
    noise_sigma: float = 0.0
    beam_power: str = "power"
    region: str = "NA"
    lat: float = 0.0
    lon: float = 0.0
    top_margin_m: float = 5.0
    bottom_margin_m: float = 5.0
    energy_counts: float = 1000.0
    extra_metadata: tuple = ()

    def __post_init__(self):
        modes = tuple(m if isinstance(m, Mode) else Mode(*m) for m in self.canopy_modes)
        object.__setattr__(self, "canopy_modes", modes)
        total = self.ground_weight + sum(m.weight for m in modes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mode energy weights sum to {total}, expected 1")
        if self.canopy_height_m < 0:
            raise ValueError("canopy height must be >= 0")
        for m in modes:
            if not 0.0 <= m.center_m <= self.canopy_height_m + 1e-9:
                raise ValueError(f"mode center {m.center_m} outside [0, {self.canopy_height_m}]")
            if m.width_m < 0 or m.weight < 0:
                raise ValueError("mode widths and weights must be non-negative")
        if not 0.0 <= self.cover_fraction <= 1.0:
            raise ValueError("cover fraction must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.beam_power not in ("power", "coverage"):
            raise ValueError("beam_power must be 'power' or 'coverage'")

    def all_modes(self):
        return (Mode(0.0, self.ground_width_m, self.ground_weight),) + self.canopy_modes


@dataclass(frozen=True, eq=False)
class SynthRecord:
    raw: RawWaveform
    target: TargetSpec
    rh70: float
    rh98: float
    ground_offset: float
    params: SceneParams


def bin_masses(heights, modes) -> np.ndarray:
    """Energy of each mode integrated over bins centred at ``heights``."""
    lo = heights - BIN_SPACING_M / 2
    hi = heights + BIN_SPACING_M / 2
    out = np.zeros(heights.shape, dtype=np.float64)
    for m in modes:
        if m.weight == 0:
            continue
        if m.width_m == 0:
            out += m.weight * ((lo <= m.center_m) & (m.center_m < hi))
        else:
            out += m.weight * (ndtr((hi - m.center_m) / m.width_m) - ndtr((lo - m.center_m) / m.width_m))
    return out


def relative_height(profile, heights, q) -> float:
    """Smallest bin height whose cumulative energy from below reaches q %.

    ``heights`` are bin centres above ground, ordered top to bottom as in
    the waveform. The result is clamped at zero.
    """
    cum = np.cumsum(profile[::-1])
    cum /= cum[-1]
    k = int(np.searchsorted(cum, q / 100.0 - 1e-12, side="left"))
    h = float(heights[::-1][min(k, len(heights) - 1)])
    return max(0.0, h)


def render_waveform(p: SceneParams, n_bins: int, seed, id: int = 0,
                    target_kind=TargetKind.RH98, coverage_noise_factor: float = 2.0,
                    metadata: dict | None = None) -> SynthRecord:
    """Sample a scene onto the bin grid and add noise.

    The ground sits exactly on a bin centre. If the requested margins do not
    fit in ``n_bins`` the top margin is shortened first.
    """
    n_below = int(round(p.bottom_margin_m / BIN_SPACING_M))
    g = int(round((p.canopy_height_m + p.top_margin_m) / BIN_SPACING_M))
    if g + n_below + 1 > n_bins:
        g = n_bins - n_below - 1
        if g * BIN_SPACING_M < p.canopy_height_m:
            raise ValueError(f"canopy of {p.canopy_height_m} m does not fit in {n_bins} bins")
    length = g + n_below + 1
    heights = (g - np.arange(length)) * BIN_SPACING_M
    profile = bin_masses(heights, p.all_modes())
    profile /= profile.sum()

    rh70 = relative_height(profile, heights, 70)
    rh98 = relative_height(profile, heights, 98)
    ground_offset = float(heights[0])

    rng = np.random.default_rng(seed)
    sigma = p.noise_sigma * (coverage_noise_factor if p.beam_power == "coverage" else 1.0)
    amps = p.energy_counts * profile
    if sigma > 0:
        amps = amps + rng.normal(0.0, sigma, size=length)

    meta = {
        "region": p.region,
        "beam_power": p.beam_power,
        "canopy_cover": f"{p.cover_fraction:.4f}",
    }
    meta.update(dict(p.extra_metadata))
    if metadata:
        meta.update(metadata)
    raw = RawWaveform(id, amps.astype(np.float32), 0.0, p.lat, p.lon,
                      p.ground_elev_m + ground_offset, meta)
    kind = TargetKind.parse(target_kind)
    value = {TargetKind.RH98: rh98, TargetKind.RH70: rh70,
             TargetKind.GROUND_OFFSET: ground_offset}[kind]
    return SynthRecord(raw, TargetSpec(kind, value), rh70, rh98, ground_offset, p)


# --------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class SynthConfig:
    n_bins: int = 1420
    height_dist: str = "lognormal"
    height_median_m: float = 14.0
    height_log_sigma: float = 0.65
    height_min_m: float = 0.0
    height_max_m: float = MAX_TRAINING_HEIGHT_M
    allow_out_of_range: bool = False
    regions: str = "NA,EU,AF,AU"
    coverage_prob: float = 0.5
    coverage_noise_factor: float = 2.0
    noise_min: float = 0.1
    noise_max: float = 1.5
    solar_prob: float = 0.3
    solar_noise_factor: float = 1.5
    energy_counts: float = 1000.0
    top_margin_min_m: float = 2.0
    top_margin_max_m: float = 10.0
    bottom_margin_min_m: float = 3.0
    bottom_margin_max_m: float = 6.0
    target: str = "RH98"
    id_offset: int = 0
    # relative canopy mismatch between the footprint and the reference patch;
    # its std is footprint_mismatch * 2 * (1 - cover), so open canopies disagree most
    footprint_mismatch: float = 0.08

    def __post_init__(self):
        if self.height_max_m > MAX_TRAINING_HEIGHT_M and not self.allow_out_of_range:
            raise ValueError(f"height_max_m > {MAX_TRAINING_HEIGHT_M} needs allow_out_of_range")
        if self.height_min_m > self.height_max_m:
            raise ValueError("height_min_m > height_max_m")
        if self.footprint_mismatch < 0:
            raise ValueError("footprint_mismatch must be >= 0")
        if self.height_dist not in ("lognormal", "uniform"):
            raise ValueError(f"unknown height_dist {self.height_dist!r}")
        for r in self.region_list():
            if r not in REGION_BOXES:
                raise ValueError(f"unknown region {r!r}")

    def region_list(self):
        return [r.strip() for r in self.regions.split(",") if r.strip()]

    @classmethod
    def from_text(cls, text: str) -> "SynthConfig":
        return cls(**parse_key_values(text, cls))

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def parse_key_values(text: str, cls) -> dict:
    """Parse ``key=value`` lines into keyword arguments typed after ``cls``."""
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in types:
            raise ValueError(f"line {lineno}: unknown or malformed entry {line!r}")
        out[key] = coerce(value, types[key])
    return out


def coerce(value: str, type_name):
    t = type_name if isinstance(type_name, str) else getattr(type_name, "__name__", str(type_name))
    if t == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if t == "int":
        return int(value)
    if t == "float":
        return float(value)
    if t.startswith("tuple"):
        return tuple(int(v) for v in value.replace("(", "").replace(")", "").split(",") if v.strip())
    if t.startswith("int | None") or t.startswith("Optional[int]"):
        return None if value.lower() == "none" else int(value)
    return value


def draw_height(cfg: SynthConfig, rng) -> float:
    lo, hi = cfg.height_min_m, cfg.height_max_m
    if cfg.height_dist == "uniform":
        return float(rng.uniform(lo, hi))
    mu = math.log(cfg.height_median_m)
    for _ in range(1000):
        h = float(rng.lognormal(mu, cfg.height_log_sigma))
        if lo <= h <= hi:
            return h
    return float(np.clip(h, lo, hi))


def draw_scene(cfg: SynthConfig, rng) -> SceneParams:
    """Random scene: canopy top layer, optional mid layer, ground return."""
    H = draw_height(cfg, rng)
    region = cfg.region_list()[int(rng.integers(len(cfg.region_list())))]
    la0, la1, lo0, lo1 = REGION_BOXES[region]
    lat, lon = float(rng.uniform(la0, la1)), float(rng.uniform(lo0, lo1))

    ground_w = float(rng.uniform(0.5, 1.0))
    modes = []
    if H < 1.0:
        cover = 0.0
    else:
        cover = float(rng.uniform(0.25, 0.95))
        w_top = min(float(rng.uniform(0.4, 1.0)) + 0.06 * H, H / 2.5)
        top = Mode(max(0.0, H - 2.5 * w_top), w_top, 1.0)
        if H > 5.0 and rng.random() < 0.6:
            share = float(rng.uniform(0.4, 0.8))
            mid = Mode(float(rng.uniform(0.25, 0.6)) * H, float(rng.uniform(0.08, 0.2)) * H, 1.0 - share)
            modes = [replace(top, weight=share), mid]
        else:
            modes = [top]
    reflect = float(rng.uniform(0.6, 1.2))
    raw_ground = (1.0 - cover) * reflect
    total = cover + raw_ground
    modes = [replace(m, weight=m.weight * cover / total) for m in modes]
    ground_weight = 1.0 - sum(m.weight for m in modes)

    solar = bool(rng.random() < cfg.solar_prob)
    noise = float(np.exp(rng.uniform(math.log(cfg.noise_min), math.log(cfg.noise_max))))
    if solar:
        noise *= cfg.solar_noise_factor
    beam = "coverage" if rng.random() < cfg.coverage_prob else "power"
    extra = (
        ("solar_background", "1" if solar else "0"),
        ("slope_deg", f"{float(rng.uniform(0.0, 15.0)):.2f}"),
        ("pft", ("ENF", "EBF", "DBF", "GRS")[int(rng.integers(4))]),
    )
    return SceneParams(
        ground_elev_m=float(rng.uniform(0.0, 1500.0)),
        canopy_height_m=H,
        canopy_modes=tuple(modes),
        ground_width_m=ground_w,
        ground_weight=ground_weight,
        cover_fraction=cover,
        noise_sigma=noise,
        beam_power=beam,
        region=region,
        lat=lat,
        lon=lon,
        top_margin_m=float(rng.uniform(cfg.top_margin_min_m, cfg.top_margin_max_m)),
        bottom_margin_m=float(rng.uniform(cfg.bottom_margin_min_m, cfg.bottom_margin_max_m)),
        energy_counts=cfg.energy_counts,
        extra_metadata=extra,
    )


def record_seed(seed: int, index: int):
    """Per-record seed material: the pair (global seed, record index)."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def generate_records(n: int, cfg: SynthConfig = SynthConfig(), seed: int = 0) -> list:
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        scene_ss, noise_ss, mismatch_ss = record_seed(seed, i).spawn(3)
        p = draw_scene(cfg, np.random.default_rng(scene_ss))
        kw = dict(id=cfg.id_offset + i, target_kind=cfg.target,
                  coverage_noise_factor=cfg.coverage_noise_factor)
        rec = render_waveform(p, cfg.n_bins, noise_ss, **kw)
        seen = footprint_scene(p, cfg, np.random.default_rng(mismatch_ss))
        if seen is not p:
            # waveform from the footprint, targets from the reference patch
            rec = replace(rec, raw=render_waveform(seen, cfg.n_bins, noise_ss, **kw).raw)
        out.append(rec)
    return out


def footprint_scene(p: SceneParams, cfg: SynthConfig, rng) -> SceneParams:
    """The patch the sensor actually sees: the canopy scaled by ``1 + delta``.

    Stands in for the footprint/reference mismatch of geolocated matched
    data, which grows with canopy height. The scaled canopy never exceeds
    the landscape maximum ``height_max_m`` nor what the window can hold.
    """
    if cfg.footprint_mismatch == 0 or not p.canopy_modes \
            or TargetKind.parse(cfg.target) is TargetKind.GROUND_OFFSET:
        return p
    sd = cfg.footprint_mismatch * 2.0 * (1.0 - p.cover_fraction)
    delta = sd * float(np.clip(rng.standard_normal(), -2.5, 2.5))
    # the window is placed on the return itself, so the ground moves with the canopy
    room = (cfg.n_bins - 1 - round(p.bottom_margin_m / BIN_SPACING_M)) * BIN_SPACING_M - p.top_margin_m
    h = min(p.canopy_height_m * (1.0 + delta), max(cfg.height_max_m, p.canopy_height_m), room)
    f = h / p.canopy_height_m
    modes = tuple(Mode(m.center_m * f, m.width_m * f, m.weight) for m in p.canopy_modes)
    return replace(p, canopy_height_m=h, canopy_modes=modes)


def generate_dataset(n: int, cfg: SynthConfig = SynthConfig(), seed: int = 0) -> Dataset:
    recs = generate_records(n, cfg, seed)
    return Dataset(tuple((r.raw, r.target) for r in recs), cfg.n_bins)


# --------------------------------------------------------------------------
# along-track simulation for geolocation matching


def interpolate_scene(p_list: Sequence[SceneParams], spacing_m: float, x: float) -> SceneParams:
    """Piecewise-linear blend of control scenes placed every ``spacing_m``."""
    pos = np.clip(x / spacing_m, 0.0, len(p_list) - 1.0)
    i = min(int(pos), len(p_list) - 2) if len(p_list) > 1 else 0
    t = pos - i if len(p_list) > 1 else 0.0
    a, b = p_list[i], p_list[min(i + 1, len(p_list) - 1)]

    def lerp(u, v):
        return (1.0 - t) * u + t * v

    modes = tuple(Mode(lerp(ma.center_m, mb.center_m), lerp(ma.width_m, mb.width_m),
                       lerp(ma.weight, mb.weight))
                  for ma, mb in zip(a.canopy_modes, b.canopy_modes))
    gw = 1.0 - sum(m.weight for m in modes)
    return replace(a, ground_elev_m=lerp(a.ground_elev_m, b.ground_elev_m),
                   canopy_height_m=lerp(a.canopy_height_m, b.canopy_height_m),
                   canopy_modes=modes, ground_width_m=lerp(a.ground_width_m, b.ground_width_m),
                   ground_weight=gw, cover_fraction=lerp(a.cover_fraction, b.cover_fraction),
                   noise_sigma=lerp(a.noise_sigma, b.noise_sigma))


def smooth_track_params(n_controls: int, seed, noise_sigma: float = 0.1,
                        height_range=(8.0, 30.0), relief_m: float = 6.0) -> list:
    """Control scenes with independently drawn canopies over rolling terrain."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    out = []
    for i in range(n_controls):
        u = i / max(n_controls - 1, 1)
        ground = 500.0 + relief_m * (np.sin(2 * np.pi * 3 * u + phase[0])
                                     + 0.5 * np.sin(2 * np.pi * 7 * u + phase[1]))
        H = float(rng.uniform(*height_range))
        cover = float(rng.uniform(0.4, 0.9))
        w_top = 0.4 + 0.06 * H
        top = Mode(H - 2.5 * w_top, w_top, 0.6 * cover)
        mid = Mode(0.45 * H, 0.15 * H, 0.4 * cover)
        out.append(SceneParams(ground_elev_m=float(ground), canopy_height_m=H,
                               canopy_modes=(top, mid), ground_width_m=0.7,
                               ground_weight=1.0 - cover, cover_fraction=cover,
                               noise_sigma=noise_sigma))
    return out


def draw_geolocation_offset(rng, mean_m: float = 19.7, sd_m: float = 10.7,
                            max_m: float | None = None) -> float:
    """Signed along-track offset whose magnitude follows the reported error scale."""
    mag = abs(float(rng.normal(mean_m, sd_m)))
    if max_m is not None:
        mag = min(mag, max_m)
    return mag if rng.random() < 0.5 else -mag


@dataclass(frozen=True, eq=False)
class TrackTruth:
    offset_dx_m: float
    offset_dz_m: float
    true_x_m: np.ndarray = field(repr=False)


def _render_absolute(p: SceneParams, window_top: float, n_bins: int, dz: float = 0.0):
    """Noise-free profile on a fixed elevation window, scene lowered by ``dz``."""
    elev = window_top - np.arange(n_bins) * BIN_SPACING_M
    heights = elev - (p.ground_elev_m - dz)
    return bin_masses(heights, p.all_modes()) * p.energy_counts, heights


def simulate_track(p_list: Sequence[SceneParams], offset=(0.0, 0.0), grid_step_m: float = 5.0,
                   n_bins: int = 512, shot_spacing_m: float = 60.0,
                   control_spacing_m: float = 100.0, margin_m: float = 60.0,
                   noise_scale: float = 1.0, seed=0, block: int = 0):
    """On-orbit track plus a dense reference grid along the same line.

    Shots sit at nominal positions ``margin_m + i * shot_spacing_m``; their
    waveforms are rendered at ``nominal + dx`` with the scene lowered by
    ``dz`` metres (so the content appears ``dz / 0.15`` bins later in the
    window) and with per-shot noise. Reference nodes are noise-free.
    Returns ``(TrackBlock, TrackTruth)``.
    """
    from .match import TrackBlock

    if grid_step_m <= 0:
        raise ValueError("grid_step_m must be > 0")
    dx, dz = float(offset[0]), float(offset[1])
    span = (len(p_list) - 1) * control_spacing_m
    shot_x = np.arange(margin_m, span - margin_m + 1e-9, shot_spacing_m)
    if shot_x.size < 1:
        raise ValueError("track too short for a single shot")
    node_x = np.arange(0.0, span + 1e-9, grid_step_m)
    scenes = [interpolate_scene(p_list, control_spacing_m, x) for x in node_x]
    top = max(s.ground_elev_m + s.canopy_height_m for s in scenes) + 3.0 + abs(dz)
    bottom = top - (n_bins - 1) * BIN_SPACING_M
    if min(s.ground_elev_m for s in scenes) - 3.0 - abs(dz) < bottom:
        raise ValueError("terrain relief does not fit in the waveform window")

    refs = np.empty((node_x.size, n_bins))
    rh98 = np.empty(node_x.size)
    for j, s in enumerate(scenes):
        prof, heights = _render_absolute(s, top, n_bins)
        refs[j] = prof
        rh98[j] = relative_height(prof, heights, 98)

    rng = np.random.default_rng(seed)
    true_x = shot_x + dx
    shots = []
    for i, (xn, xt) in enumerate(zip(shot_x, true_x)):
        s = interpolate_scene(p_list, control_spacing_m, xt)
        prof, _ = _render_absolute(s, top, n_bins, dz=dz)
        amps = prof + rng.normal(0.0, s.noise_sigma * noise_scale, size=n_bins)
        shots.append(RawWaveform(block * 100000 + i, amps.astype(np.float32), 0.0,
                                 0.0, 0.0, top, {"block": str(block), "track_x_m": f"{xn:.3f}"}))
    blk = TrackBlock(shots=tuple(shots), shot_x_m=shot_x, node_x_m=node_x,
                     reference=refs, reference_targets=rh98, block=block)
    return blk, TrackTruth(dx, dz, true_x)
