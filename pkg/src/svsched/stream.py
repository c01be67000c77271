"""Scalable video stream model.

A stream is organised into intra periods of ``f_intra`` frames, each split
into dyadic GOPs of ``f_gop`` frames.  Key pictures (I at the start of an
intra period, P at the other GOP boundaries) form temporal layer 0; the
remaining frames are hierarchical B frames.  Every frame carries a base
layer plus ``num_layers`` quality enhancement layers, with per-frame-type
layer sizes and a shared per-layer distortion ladder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

FrameType = str  # "I", "P", "B1", "B2", ... ("B<tau>" = temporal layer tau)


def _v2(n: int) -> int:
    """2-adic valuation of n > 0."""
    return (n & -n).bit_length() - 1


@dataclass(frozen=True)
class StreamProfile:
    """Immutable stream description; sizes are stored in bits.

    layer_sizes maps frame type -> tuple of layer sizes (bits), index 0 is
    the base layer.  layer_distortions[m] is the MSE when layers 0..m are
    received; conceal_distortion applies when the base layer misses its
    decode deadline.
    """

    name: str
    f_intra: int
    f_gop: int
    num_layers: int                      # enhancement layers L (quality layers = L + 1)
    frame_rate: float
    layer_sizes: Dict[FrameType, Tuple[int, ...]]
    layer_distortions: Tuple[float, ...]
    conceal_distortion: float

    def __post_init__(self) -> None:
        if self.f_gop < 2 or self.f_gop & (self.f_gop - 1):
            raise ValueError(f"f_gop must be a power of two >= 2, got {self.f_gop}")
        if self.f_intra % self.f_gop:
            raise ValueError(f"f_gop={self.f_gop} must divide f_intra={self.f_intra}")
        expected = {"I", "P"} | {f"B{t}" for t in range(1, self.temporal_depth + 1)}
        if set(self.layer_sizes) != expected:
            raise ValueError(f"layer_sizes keys {set(self.layer_sizes)} != {expected}")
        for k, sizes in self.layer_sizes.items():
            if len(sizes) != self.num_layers + 1:
                raise ValueError(f"{k}: need {self.num_layers + 1} layer sizes")
            if any(s <= 0 for s in sizes):
                raise ValueError(f"{k}: layer sizes must be positive")
        d = self.layer_distortions
        if len(d) != self.num_layers + 1:
            raise ValueError("one distortion per quality layer required")
        if any(d[i] <= d[i + 1] for i in range(len(d) - 1)) or d[-1] <= 0:
            raise ValueError("layer distortions must be strictly decreasing and positive")
        if self.conceal_distortion < d[0]:
            raise ValueError("conceal_distortion must be >= d_0")
        types = tuple(frame_type_at(self, p) for p in range(self.f_intra))
        unit_bits = tuple(self.layer_sizes[k] for k in types)
        prefix = []
        for row in unit_bits:
            acc, pre = 0, [0]
            for s in row:
                acc += s
                pre.append(acc)
            prefix.append(tuple(pre))
        object.__setattr__(self, "_types", types)
        object.__setattr__(self, "_unit_bits", unit_bits)
        object.__setattr__(self, "_prefix_bits", tuple(prefix))

    @property
    def temporal_depth(self) -> int:
        return int(math.log2(self.f_gop))

    @property
    def num_quality(self) -> int:
        """Quality layers per frame (base + enhancements)."""
        return self.num_layers + 1

    @property
    def types_by_position(self) -> Tuple[FrameType, ...]:
        return self._types  # type: ignore[attr-defined]

    @property
    def unit_bits_by_position(self) -> Tuple[Tuple[int, ...], ...]:
        """unit_bits_by_position[pos][layer] -> bits."""
        return self._unit_bits  # type: ignore[attr-defined]

    @property
    def prefix_bits_by_position(self) -> Tuple[Tuple[int, ...], ...]:
        """prefix_bits_by_position[pos][count] -> bits in the first count layers."""
        return self._prefix_bits  # type: ignore[attr-defined]

    def digest(self) -> str:
        import hashlib
        import json

        blob = json.dumps(
            {
                "name": self.name,
                "f_intra": self.f_intra,
                "f_gop": self.f_gop,
                "num_layers": self.num_layers,
                "frame_rate": self.frame_rate,
                "layer_sizes": {k: list(v) for k, v in sorted(self.layer_sizes.items())},
                "layer_distortions": list(self.layer_distortions),
                "conceal_distortion": self.conceal_distortion,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def slot_seconds(self) -> float:
        return 1.0 / self.frame_rate

    @property
    def d_full(self) -> float:
        """Distortion with every quality layer received (d_L)."""
        return self.layer_distortions[-1]

    def cumulative_sizes(self, k: FrameType) -> Tuple[int, ...]:
        sizes = self.layer_sizes[k]
        out, acc = [], 0
        for s in sizes:
            acc += s
            out.append(acc)
        return tuple(out)

    def unit_size(self, k: FrameType, layer: int) -> int:
        return self.layer_sizes[k][layer]

    def frame_bits(self, k: FrameType) -> int:
        return sum(self.layer_sizes[k])

    def count_to_bits(self, k: FrameType, count: int) -> int:
        """Bits received for a frame holding its first `count` quality layers."""
        return sum(self.layer_sizes[k][:count])

    def frames_per_type(self) -> Dict[FrameType, int]:
        """Number of frames of each type in one intra period."""
        gops = self.f_intra // self.f_gop
        out = {"I": 1, "P": gops - 1}
        for tau in range(1, self.temporal_depth + 1):
            out[f"B{tau}"] = gops * (1 << (tau - 1))
        return out


def frame_type_at(profile: StreamProfile, position: int) -> FrameType:
    """Frame type at a display position within the intra period.

    Position 0 is the I frame, other multiples of f_gop are P frames, and
    the rest are B frames whose temporal layer follows the dyadic
    hierarchy: tau = depth - v2(position mod f_gop).
    """
    if not 0 <= position < profile.f_intra:
        raise ValueError(f"position {position} outside [0, {profile.f_intra})")
    g = position % profile.f_gop
    if g == 0:
        return "I" if position == 0 else "P"
    return f"B{profile.temporal_depth - _v2(g)}"


def temporal_layer_at(profile: StreamProfile, position: int) -> int:
    k = frame_type_at(profile, position)
    return 0 if k in ("I", "P") else int(k[1:])


def reference_offsets(profile: StreamProfile, position: int) -> Tuple[int, int]:
    """Display-position offsets of the two reference frames of a B frame.

    A B frame at temporal layer tau is predicted from the nearest frames of
    lower temporal layers, one step of 2^(depth - tau) positions on each
    side.  Raises for key pictures, which have no bidirectional references.
    """
    tau = temporal_layer_at(profile, position)
    if tau == 0:
        raise ValueError(f"position {position} is a key picture")
    step = 1 << (profile.temporal_depth - tau)
    return (-step, step)


def rd_distortion(profile: StreamProfile, k: FrameType, z: float) -> float:
    """Stepwise rate-distortion value for a type-k frame given z received bits.

    Right-continuous with jumps exactly at the cumulative layer sizes; below
    the base-layer size the frame cannot be decoded and the concealment
    distortion applies.
    """
    if z < 0:
        raise ValueError("z must be nonnegative")
    cum = profile.cumulative_sizes(k)
    if z < cum[0]:
        return profile.conceal_distortion
    m = 0
    for i, c in enumerate(cum):
        if z >= c:
            m = i
    return profile.layer_distortions[m]


@dataclass(frozen=True)
class PiecewiseLinearEnvelope:
    """Convex, non-increasing piecewise-linear function given by its knots.

    Knots are (z, d) pairs sorted by z; evaluation interpolates linearly and
    is constant beyond the last knot.
    """

    knots: Tuple[Tuple[float, float], ...]

    def __post_init__(self) -> None:
        zs = [z for z, _ in self.knots]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ValueError("knot abscissae must be strictly increasing")

    def __call__(self, z: float) -> float:
        if z < 0:
            raise ValueError("z must be nonnegative")
        ks = self.knots
        if z >= ks[-1][0]:
            return ks[-1][1]
        for (z0, d0), (z1, d1) in zip(ks, ks[1:]):
            if z0 <= z <= z1:
                t = (z - z0) / (z1 - z0)
                return d0 + t * (d1 - d0)
        return ks[0][1]

    def segments(self) -> List[Tuple[float, float, float]]:
        """(width_bits, slope, z_start) per linear piece, left to right."""
        out = []
        for (z0, d0), (z1, d1) in zip(self.knots, self.knots[1:]):
            out.append((z1 - z0, (d1 - d0) / (z1 - z0), z0))
        return out


def convex_envelope(profile: StreamProfile, k: FrameType) -> PiecewiseLinearEnvelope:
    """Lower convex hull of the stepwise rate-distortion points of type k.

    The hull is built over (0, conceal) and the step corners
    (sum of layer sizes up to m, d_m); it lower-bounds rd_distortion
    everywhere.
    """
    pts = [(0.0, profile.conceal_distortion)]
    cum = profile.cumulative_sizes(k)
    pts += [(float(c), profile.layer_distortions[m]) for m, c in enumerate(cum)]
    hull: List[Tuple[float, float]] = []
    for p in pts:  # Andrew monotone chain, lower hull (points already x-sorted)
        while len(hull) >= 2:
            (x0, y0), (x1, y1) = hull[-2], hull[-1]
            if (x1 - x0) * (p[1] - y0) - (p[0] - x0) * (y1 - y0) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return PiecewiseLinearEnvelope(tuple(hull))


# Rate-distortion model parameters of the five bundled test sequences.
# Layer sizes are bytes per frame type (I, P, B1, B2), one row per quality
# layer; distortions are MSE at each cumulative layer.
_BUNDLED_BYTES: Dict[str, dict] = {
    "foreman": {
        "sizes": {
            "I": (6712, 8302, 5844),
            "P": (2499, 8293, 5773),
            "B1": (928, 3373, 2177),
            "B2": (520, 2775, 1893),
        },
        "distortions": (16.27, 5.491, 4.124),
    },
    "bus": {
        "sizes": {
            "I": (5920, 7837, 4636),
            "P": (2417, 8003, 4412),
            "B1": (889, 3390, 1577),
            "B2": (568, 2925, 1339),
        },
        "distortions": (100.8, 41.35, 21.65),
    },
    "flower": {
        "sizes": {
            "I": (8261, 6786, 6633),
            "P": (2076, 6900, 6610),
            "B1": (548, 1951, 2008),
            "B2": (324, 1611, 1545),
        },
        "distortions": (172.1, 96.66, 30.85),
    },
    "mobile": {
        "sizes": {
            "I": (9648, 9090, 7627),
            "P": (1556, 9193, 6894),
            "B1": (510, 2541, 1973),
            "B2": (262, 2171, 1701),
        },
        "distortions": (186.0, 89.90, 37.35),
    },
    "paris": {
        "sizes": {
            "I": (12353, 9850, 8091),
            "P": (2640, 9457, 7987),
            "B1": (865, 2103, 2024),
            "B2": (463, 1571, 1555),
        },
        "distortions": (32.33, 18.59, 5.420),
    },
}

BUNDLED_PROFILE_NAMES = tuple(sorted(_BUNDLED_BYTES))


def make_profile(
    name: str,
    f_intra: int,
    f_gop: int,
    frame_rate: float,
    sizes_bytes: Dict[str, Sequence[int]],
    distortions: Sequence[float],
    d_loss: float | None = None,
) -> StreamProfile:
    """Build a profile from per-type layer sizes given in bytes.

    ``sizes_bytes[k][m]`` is the size of quality layer m of frame type k.
    When d_loss is omitted it defaults to 4 * d_0 (frame-copy concealment
    is far worse than a base-layer-only decode).
    """
    num_layers = len(distortions) - 1
    depth = int(math.log2(f_gop))
    wanted = {"I", "P"} | {f"B{t}" for t in range(1, depth + 1)}
    missing = wanted - set(sizes_bytes)
    if missing:
        raise ValueError(f"missing size rows for frame types {sorted(missing)}")
    layer_sizes = {
        k: tuple(int(b) * 8 for b in sizes_bytes[k]) for k in wanted
    }
    if d_loss is None:
        d_loss = 4.0 * float(distortions[0])
    return StreamProfile(
        name=name,
        f_intra=f_intra,
        f_gop=f_gop,
        num_layers=num_layers,
        frame_rate=frame_rate,
        layer_sizes=layer_sizes,
        layer_distortions=tuple(float(d) for d in distortions),
        conceal_distortion=float(d_loss),
    )


def bundled_profile(
    name: str,
    f_intra: int = 16,
    f_gop: int = 4,
    frame_rate: float = 30.0,
    d_loss: float | None = None,
) -> StreamProfile:
    """One of the five bundled sequences at the reference GOP settings."""
    key = name.lower()
    if key not in _BUNDLED_BYTES:
        raise KeyError(f"unknown profile {name!r}; have {BUNDLED_PROFILE_NAMES}")
    entry = _BUNDLED_BYTES[key]
    return make_profile(
        key, f_intra, f_gop, frame_rate, entry["sizes"], entry["distortions"], d_loss
    )
