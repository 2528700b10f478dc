"""Event-camera streams: parsing, voxelization, and visual augmentation.

File formats: a little-endian binary container (16-byte header: magic,
version, width, height, count; then 13-byte records of u64 timestamp_us,
u16 x, u16 y, u8 polarity) and a plain-text CSV fallback with the header
``timestamp_us,x,y,polarity``.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .. import errors

EVENT_MAGIC = b"EVTB"
EVENT_VERSION = 1
_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])


@dataclass
class EventStream:
    """Sensor events ordered by time, with polarity 1 = brighter."""

    timestamps: np.ndarray   # microseconds, non-decreasing
    xs: np.ndarray
    ys: np.ndarray
    polarities: np.ndarray   # values in {0, 1}
    width: int
    height: int

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.xs = np.asarray(self.xs, dtype=np.int64)
        self.ys = np.asarray(self.ys, dtype=np.int64)
        self.polarities = np.asarray(self.polarities, dtype=np.int64)
        n = len(self.timestamps)
        if not (len(self.xs) == len(self.ys) == len(self.polarities) == n):
            raise errors.DimensionError("event field lengths disagree")
        if n and np.any(np.diff(self.timestamps) < 0):
            raise errors.ContractError("event timestamps must be non-decreasing")
        if n and (self.xs.min() < 0 or self.xs.max() >= self.width
                  or self.ys.min() < 0 or self.ys.max() >= self.height):
            raise errors.ContractError("event coordinates out of sensor bounds")
        if n and not np.all((self.polarities == 0) | (self.polarities == 1)):
            raise errors.ContractError("event polarity must be 0 or 1")

    def __len__(self):
        return len(self.timestamps)


def voxelize(ev, t_bins, height, width):
    """Bin a stream into a binary [T, 2, H, W] occupancy grid.

    The time axis is split into ``t_bins`` equal bins spanning
    [t_first, t_last] (the final instant maps into the last bin). Spatial
    reduction center-crops to a multiple of the target and max-pools, so a
    cell is 1 when any event fell inside it.
    """
    if len(ev) == 0:
        raise errors.EmptyInputError("cannot voxelize an empty event stream")
    fy, fx = ev.height // height, ev.width // width
    if fy == 0 or fx == 0:
        raise errors.DimensionError(
            f"target {height}x{width} larger than sensor "
            f"{ev.height}x{ev.width}")
    crop_h, crop_w = height * fy, width * fx
    oy, ox = (ev.height - crop_h) // 2, (ev.width - crop_w) // 2

    t0, t1 = int(ev.timestamps[0]), int(ev.timestamps[-1])
    span = t1 - t0
    if span > 0:
        bins = ((ev.timestamps - t0) * t_bins // span).astype(np.int64)
        np.minimum(bins, t_bins - 1, out=bins)
    else:
        bins = np.zeros(len(ev), dtype=np.int64)

    ys = ev.ys - oy
    xs = ev.xs - ox
    keep = (ys >= 0) & (ys < crop_h) & (xs >= 0) & (xs < crop_w)
    grid = np.zeros((t_bins, 2, height, width))
    grid[bins[keep], ev.polarities[keep], ys[keep] // fy, xs[keep] // fx] = 1.0
    return grid


def _or_pool(grid, factor):
    t, c, h, w = grid.shape
    r = grid.reshape(t, c, h // factor, factor, w // factor, factor)
    return r.max(axis=(3, 5))


def augment_visual(grid, rng, train, crop=88, out_hw=44):
    """Crop, optionally flip, and downsample a voxel grid.

    Training draws a random crop origin and flips horizontally with
    probability 0.5; evaluation center-crops. The cropped grid is then
    OR-pooled down to ``out_hw``.
    """
    t, c, h, w = grid.shape
    if h < crop or w < crop:
        raise errors.DimensionError(
            f"grid {h}x{w} smaller than crop size {crop}")
    if train:
        oy = int(rng.integers(0, h - crop + 1))
        ox = int(rng.integers(0, w - crop + 1))
        out = grid[:, :, oy:oy + crop, ox:ox + crop]
        if rng.random() < 0.5:
            out = out[:, :, :, ::-1]
    else:
        oy, ox = (h - crop) // 2, (w - crop) // 2
        out = grid[:, :, oy:oy + crop, ox:ox + crop]
    factor = crop // out_hw
    if factor * out_hw != crop:
        raise errors.DimensionError(
            f"crop {crop} not divisible by output size {out_hw}")
    return np.ascontiguousarray(_or_pool(out, factor))


def write_events(path, ev):
    """Write a stream in the binary container (or CSV if path ends .csv)."""
    path = str(path)
    if path.endswith(".csv"):
        with open(path, "w") as f:
            f.write(f"# width={ev.width} height={ev.height}\n")
            f.write("timestamp_us,x,y,polarity\n")
            for t, x, y, p in zip(ev.timestamps, ev.xs, ev.ys, ev.polarities):
                f.write(f"{t},{x},{y},{p}\n")
        return
    rec = np.empty(len(ev), dtype=_RECORD)
    rec["t"], rec["x"], rec["y"], rec["p"] = (
        ev.timestamps, ev.xs, ev.ys, ev.polarities)
    with open(path, "wb") as f:
        f.write(EVENT_MAGIC)
        f.write(struct.pack("<HHHIH", EVENT_VERSION, ev.width, ev.height,
                            len(ev), 0))
        f.write(rec.tobytes())


def read_events(path):
    """Inverse of write_events; format chosen by extension."""
    path = str(path)
    if path.endswith(".csv"):
        with open(path) as f:
            first = f.readline().strip()
        dims = dict(tok.split("=") for tok in first.lstrip("# ").split())
        data = np.genfromtxt(path, delimiter=",", skip_header=2,
                             dtype=np.int64, ndmin=2)
        if data.size == 0:
            raise errors.EmptyInputError(f"{path}: no events")
        return EventStream(data[:, 0], data[:, 1], data[:, 2], data[:, 3],
                           width=int(dims["width"]), height=int(dims["height"]))
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != EVENT_MAGIC:
            raise errors.ContractError(f"{path}: not an event file")
        version, width, height, count, _ = struct.unpack("<HHHIH", f.read(12))
        if version != EVENT_VERSION:
            raise errors.ContractError(
                f"{path}: unsupported event file version {version}")
        rec = np.frombuffer(f.read(count * _RECORD.itemsize), dtype=_RECORD)
    return EventStream(rec["t"].astype(np.int64), rec["x"].astype(np.int64),
                       rec["y"].astype(np.int64), rec["p"].astype(np.int64),
                       width=width, height=height)
