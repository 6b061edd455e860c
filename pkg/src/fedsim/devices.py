"""Device profiles and per-round capability draws.

A profile carries a device's base compute speed (seconds per training
batch on the full model) and the list of bandwidth observations measured
for it. Each round the device gets a fresh capability draw: a clamped
Gaussian disturbance that slows compute by up to 1.3x, and one bandwidth
value resampled uniformly from its observation list. Draws are keyed by
(seed, client, round), never by event order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .rng import SERVER, stream

DISTURBANCE_SIGMA = 0.3
DISTURBANCE_CAP = 1.3

# Spreads measured on public device benchmarks: roughly 13.3x between the
# fastest and slowest phone for on-device training, and about 200x across
# measured uplink bandwidths.
COMPUTE_SPREAD = 13.3
BANDWIDTH_SPREAD = 200.0


@dataclass(frozen=True)
class DeviceProfile:
    client_id: int
    base_compute_s_per_batch: float
    bandwidth_samples: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.client_id < 0:
            raise ValidationError("client_id must be non-negative")
        if not self.base_compute_s_per_batch > 0:
            raise ValidationError("base compute time must be positive")
        if not self.bandwidth_samples:
            raise ValidationError("profile needs at least one bandwidth sample")
        if any(not b > 0 or not math.isfinite(b) for b in self.bandwidth_samples):
            raise ValidationError("bandwidth samples must be positive and finite")


@dataclass(frozen=True)
class RoundCapability:
    """One round's realized device state: disturbance and bandwidth."""

    client_id: int
    round_index: int
    disturbance_w: float
    bandwidth_bps: float


def clamp_disturbance(x: float) -> float:
    """Map a raw draw onto the disturbance coefficient w in [1, 1.3]."""
    if x <= 1.0:
        return 1.0
    return min(x, DISTURBANCE_CAP)


def sample_disturbance(rng: np.random.Generator) -> float:
    # Raw draw is N(1, 0.3); about half the mass clamps to exactly 1 and
    # the top tail (P about 0.159) clamps to exactly 1.3.
    return clamp_disturbance(1.0 + DISTURBANCE_SIGMA * rng.standard_normal())


def sample_bandwidth(profile: DeviceProfile, rng: np.random.Generator) -> float:
    return profile.bandwidth_samples[rng.integers(len(profile.bandwidth_samples))]


def effective_compute_time(profile: DeviceProfile, w: float) -> float:
    """Seconds per full-model batch this round: disturbance times base."""
    if not 1.0 <= w <= DISTURBANCE_CAP:
        raise ValidationError(f"disturbance w={w} outside [1, {DISTURBANCE_CAP}]")
    return w * profile.base_compute_s_per_batch


def round_capability(master_seed: int, profile: DeviceProfile, round_index: int) -> RoundCapability:
    """The (w, bandwidth) pair for one (client, round) cell.

    Pure function of its arguments, so every protocol run sharing a seed
    sees the same capability stream for the same cell.
    """
    w = sample_disturbance(
        stream(master_seed, profile.client_id, round_index, "disturbance")
    )
    bw = sample_bandwidth(
        profile, stream(master_seed, profile.client_id, round_index, "bandwidth")
    )
    return RoundCapability(profile.client_id, round_index, w, bw)


def compute_noise(master_seed: int, client_id: int, round_index: int, eta: float) -> float:
    """Multiplicative execution-noise factor in [1 - eta, 1 + eta].

    At eta = 0 this is exactly 1.0 and draws nothing, so estimates built
    from the clean capability are exact.
    """
    if not 0.0 <= eta < 1.0:
        raise ValidationError("noise eta must lie in [0, 1)")
    if eta == 0.0:
        return 1.0
    g = stream(master_seed, client_id, round_index, "noise")
    return float(g.uniform(1.0 - eta, 1.0 + eta))


def synth_population(
    client_count: int,
    seed: int,
    compute_spread: float = COMPUTE_SPREAD,
    bandwidth_spread: float = BANDWIDTH_SPREAD,
    base_compute_min_s: float = 0.05,
    bandwidth_min_bps: float = 2e4,
    bandwidth_pool_size: int = 32,
) -> list[DeviceProfile]:
    """Generate a synthetic device population.

    Base compute times are log-uniform over [min, min * compute_spread],
    so the slowest-to-fastest ratio never exceeds the spread. All profiles
    share one log-uniform bandwidth observation pool spanning
    bandwidth_spread; per-round draws then resample from that pool.
    """
    if client_count < 1:
        raise ValidationError("client_count must be >= 1")
    if compute_spread < 1 or bandwidth_spread < 1:
        raise ValidationError("spreads must be >= 1")
    g = stream(seed, client=SERVER, rnd=0, purpose="population")
    base = np.exp(
        g.uniform(
            math.log(base_compute_min_s),
            math.log(base_compute_min_s * compute_spread),
            size=client_count,
        )
    )
    pool = np.exp(
        g.uniform(
            math.log(bandwidth_min_bps),
            math.log(bandwidth_min_bps * bandwidth_spread),
            size=bandwidth_pool_size,
        )
    )
    pool = tuple(sorted(float(b) for b in pool))
    return [DeviceProfile(c, float(base[c]), pool) for c in range(client_count)]


def dump_traces(profiles: list[DeviceProfile], path: str) -> None:
    """Write a trace CSV: client_id, base compute, then bandwidth columns."""
    width = max(len(p.bandwidth_samples) for p in profiles)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["client_id", "base_compute_s_per_batch"] + [f"bw_{i}" for i in range(width)]
        )
        for p in profiles:
            writer.writerow(
                [p.client_id, repr(float(p.base_compute_s_per_batch))]
                + [repr(float(b)) for b in p.bandwidth_samples]
            )


def _parse_traces(fh, name: str) -> list[DeviceProfile]:
    profiles = []
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{name}:1: empty file") from None
    if header[:2] != ["client_id", "base_compute_s_per_batch"]:
        raise ParseError(
            f"{name}:1: header must start with client_id, base_compute_s_per_batch"
        )
    for lineno, row in enumerate(reader, start=2):
        cells = [c for c in row if c != ""]
        if len(cells) < 3:
            raise ParseError(
                f"{name}:{lineno}: need client_id, base compute, and >= 1 bandwidth"
            )
        try:
            profile = DeviceProfile(
                int(cells[0]), float(cells[1]), tuple(float(c) for c in cells[2:])
            )
        except (ValueError, ValidationError) as exc:
            raise ParseError(f"{name}:{lineno}: {exc}") from None
        profiles.append(profile)
    if not profiles:
        raise ParseError(f"{name}: no device rows")
    ids = [p.client_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{name}: duplicate client ids")
    return profiles


def load_traces(path: str) -> list[DeviceProfile]:
    """Read a trace CSV written by dump_traces (or hand-authored).

    Rows may carry different bandwidth column counts; trailing empty cells
    are ignored. Round-trips dump_traces output to identical profiles.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _parse_traces(fh, path)


def default_population() -> list[DeviceProfile]:
    """The 64-device population shipped with the package."""
    from importlib.resources import files

    resource = files("fedsim").joinpath("traces/default_population.csv")
    with resource.open("r", encoding="utf-8") as fh:
        return _parse_traces(fh, "default_population.csv")
