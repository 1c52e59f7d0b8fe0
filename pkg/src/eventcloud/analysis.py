"""Complexity reports and preprocessing-cost benchmarks for event representations."""

from __future__ import annotations

import csv
import enum
import io
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .events import EventStream, sample_event_cloud
from .spectral import macs_single_op

VOXEL_BINS = 9


class ReprKind(str, enum.Enum):
    EVENT_FRAME = "event_frame"
    TIME_SURFACE = "time_surface"
    VOXEL_GRID = "voxel_grid"
    EVENT_CLOUD = "event_cloud"


def _pixel_index(stream: EventStream) -> np.ndarray:
    return stream.y * stream.width + stream.x


def _normalized_time(stream: EventStream) -> np.ndarray:
    if len(stream) == 0:
        return np.zeros(0)
    span = int(stream.t[-1] - stream.t[0])
    if span == 0:
        return np.zeros(len(stream))
    return (stream.t - stream.t[0]) / span


def event_frame(stream: EventStream) -> np.ndarray:
    """H x W sum of signed polarities (+1 ON, -1 OFF)."""
    H, W = stream.height, stream.width
    frame = np.bincount(_pixel_index(stream), weights=2.0 * stream.p - 1.0, minlength=H * W)
    return frame.reshape(H, W)


def time_surface(stream: EventStream) -> np.ndarray:
    """H x W normalized timestamp of each pixel's most recent event (0 where none)."""
    H, W = stream.height, stream.width
    surface = np.zeros(H * W)
    # timestamps are sorted, so the running maximum is the latest event
    np.maximum.at(surface, _pixel_index(stream), _normalized_time(stream))
    return surface.reshape(H, W)


def voxel_grid(stream: EventStream, bins: int = VOXEL_BINS) -> np.ndarray:
    """B x H x W grid; each event spreads unit mass over its two nearest time bins."""
    if bins < 1:
        raise ValueError("voxel grid needs at least one bin")
    H, W = stream.height, stream.width
    pos = _normalized_time(stream) * (bins - 1)
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    hi = np.minimum(lo + 1, bins - 1)
    pix = _pixel_index(stream)
    size = bins * H * W
    grid = np.bincount(lo * H * W + pix, weights=1.0 - frac, minlength=size)
    grid += np.bincount(hi * H * W + pix, weights=frac, minlength=size)
    return grid.reshape(bins, H, W)


def build_representation(stream: EventStream, kind, *, bins: int = VOXEL_BINS, points: int = 1024):
    """Dense array for frame/surface/voxel kinds; an EventCloud (or None if empty) for event_cloud."""
    kind = ReprKind(kind)
    if kind is ReprKind.EVENT_FRAME:
        return event_frame(stream)
    if kind is ReprKind.TIME_SURFACE:
        return time_surface(stream)
    if kind is ReprKind.VOXEL_GRID:
        return voxel_grid(stream, bins)
    if len(stream) == 0:
        return None
    return sample_event_cloud(stream, points)


# --------------------------------------------------------------------------
# benchmark

@dataclass
class BenchReport:
    medians_ms: dict
    repetitions: int
    events: int
    checks: dict = field(default_factory=dict)

    def ordering(self) -> list[str]:
        return sorted(self.medians_ms, key=self.medians_ms.get)

    def to_text(self) -> str:
        lines = [f"{'representation':<14} {'median_ms':>10}"]
        for kind in self.ordering():
            lines.append(f"{kind:<14} {self.medians_ms[kind]:>10.4f}")
        lines.append("")
        lines.append(f"events={self.events}")
        lines.append(f"repetitions={self.repetitions}")
        for kind, ms in self.medians_ms.items():
            lines.append(f"median_ms.{kind}={ms:.6f}")
        for name, ok in self.checks.items():
            lines.append(f"check.{name}={'pass' if ok else 'fail'}")
        return "\n".join(lines)


def bench_preprocessing(stream: EventStream, kinds=None, repetitions: int = 7, *,
                        bins: int = VOXEL_BINS, points: int = 1024) -> BenchReport:
    """Median wall time (monotonic clock) per representation on the same stream.

    One untimed warm-up call per kind precedes the timed repetitions.
    """
    if repetitions < 5:
        raise ValueError("repetitions must be >= 5")
    kinds = [ReprKind(k) for k in (kinds or list(ReprKind))]
    medians = {}
    for kind in kinds:
        build_representation(stream, kind, bins=bins, points=points)
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            build_representation(stream, kind, bins=bins, points=points)
            times.append(time.perf_counter() - t0)
        medians[kind.value] = 1e3 * statistics.median(times)

    checks = {}
    ec = ReprKind.EVENT_CLOUD.value
    if ec in medians:
        others = [k for k in medians if k != ec]
        checks["event_cloud_fastest"] = all(medians[ec] < medians[k] for k in others)
        for k in others:
            checks[f"event_cloud_lt_{k}"] = medians[ec] < medians[k]
    if ReprKind.EVENT_FRAME.value in medians and ReprKind.VOXEL_GRID.value in medians:
        checks["event_frame_lt_voxel_grid"] = medians["event_frame"] < medians["voxel_grid"]
    return BenchReport(medians, repetitions, len(stream), checks)


# --------------------------------------------------------------------------
# MACs

@dataclass
class MacsTable:
    frequency: M.MacsReport
    conv: M.MacsReport
    per_op: tuple  # (C, conv MACs, frequency MACs, ratio) at the widest stage

    @property
    def network_ratio(self) -> float:
        return self.conv.total / self.frequency.total

    def rows(self):
        conv = dict(self.conv.layers)
        for name, macs in self.frequency.layers:
            yield name, macs, conv[name]

    def to_text(self) -> str:
        lines = [f"{'layer':<16} {'frequency':>14} {'conv_baseline':>14}"]
        for name, f, c in self.rows():
            lines.append(f"{name:<16} {f:>14d} {c:>14d}")
        lines.append(f"{'total':<16} {self.frequency.total:>14d} {self.conv.total:>14d}")
        lines.append(f"total GMACs: frequency={self.frequency.gmacs:.4f} conv_baseline={self.conv.gmacs:.4f}")
        lines.append("")
        lines.append(self.to_kv())
        return "\n".join(lines)

    def to_kv(self) -> str:
        C, conv, freq, ratio = self.per_op
        return "\n".join([
            f"total_macs.frequency={self.frequency.total}",
            f"total_macs.conv_baseline={self.conv.total}",
            f"gmacs.frequency={self.frequency.gmacs:.6f}",
            f"gmacs.conv_baseline={self.conv.gmacs:.6f}",
            f"network_ratio={self.network_ratio:.4f}",
            f"per_op.C={C}",
            f"per_op.conv={conv}",
            f"per_op.frequency={freq:.4f}",
            f"per_op.ratio={ratio:.4f}",
        ])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "frequency", "conv_baseline"])
        for row in self.rows():
            w.writerow(row)
        w.writerow(["total", self.frequency.total, self.conv.total])
        return buf.getvalue()


def macs_report(cfg: M.NetworkConfig, C: int | None = None) -> MacsTable:
    """Network totals for both variants plus the single-op ratio at width C (default: final width)."""
    C = cfg.widths()[-1] if C is None else C
    return MacsTable(M.count_macs(cfg, "frequency"), M.count_macs(cfg, "conv_baseline"),
                     (C,) + macs_single_op(C))
