"""Finite-state Markov channel for Rayleigh fading with adaptive PSK.

The received SNR is partitioned into equal-stationary-probability regions;
each region becomes a chain state with a representative SNR (conditional
mean), the throughput-maximizing PSK order, and the induced transmission
rate / packet error rate.  Neighbouring-state transition probabilities
follow the level-crossing rate of the shared threshold.  A first-order
AR(1) throughput model supplies the online scheduler's capacity forecast.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Sequence, Tuple

import numpy as np

SYMBOLS_PER_PACKET = 2048
PACKET_SECONDS = 1.5e-3


class SlowFadingError(ValueError):
    """The Doppler rate is too high for a per-slot Markov chain."""


@dataclass(frozen=True)
class ChannelState:
    x_bits: float        # transmission rate, bits per slot
    y_per: float         # packet error probability
    snr_linear: float    # representative SNR of the region
    mod_bits: int        # PSK order (1=BPSK, 2=QPSK, 3=8PSK)

    @property
    def packet_bits(self) -> int:
        return SYMBOLS_PER_PACKET * self.mod_bits

    @property
    def packets_per_slot(self) -> int:
        return math.ceil(self.x_bits / self.packet_bits)

    @property
    def throughput(self) -> float:
        return self.x_bits * (1.0 - self.y_per)


@dataclass(frozen=True)
class ChannelModel:
    states: Tuple[ChannelState, ...]
    transition: Tuple[Tuple[float, ...], ...]   # row-stochastic, tridiagonal
    thresholds: Tuple[float, ...]               # linear SNR, length n+1, [0, inf)
    slot_seconds: float
    damping: float                              # 1.0 unless rates were rescaled

    def __post_init__(self) -> None:
        p = np.asarray(self.transition)
        if p.shape != (len(self.states),) * 2:
            raise ValueError("transition matrix shape mismatch")
        if (p < 0).any():
            raise ValueError("transition probabilities must be nonnegative")
        if np.abs(p.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("transition rows must sum to 1")

    @property
    def num_states(self) -> int:
        return len(self.states)

    def matrix(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)

    def stationary(self) -> np.ndarray:
        """Stationary distribution of the transition matrix (direct solve)."""
        p = self.matrix()
        n = p.shape[0]
        a = np.vstack([p.T - np.eye(n), np.ones(n)])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        return pi

    def mean_throughput(self) -> float:
        pi = self.stationary()
        return float(sum(p * s.throughput for p, s in zip(pi, self.states)))

    def digest(self) -> str:
        import hashlib

        blob = json.dumps(
            {
                "states": [asdict(s) for s in self.states],
                "transition": self.transition,
                "thresholds": self.thresholds,
                "slot_seconds": self.slot_seconds,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def symbol_error_rate(mod_bits: int, snr_linear: float) -> float:
    """PSK symbol error probability 2*Q(sqrt(2*snr) * sin(pi / 2^M))."""
    if mod_bits not in (1, 2, 3):
        raise ValueError(f"unsupported modulation order {mod_bits}")
    if snr_linear < 0:
        raise ValueError("snr must be nonnegative")
    arg = math.sqrt(2.0 * snr_linear) * math.sin(math.pi / (1 << mod_bits))
    # 2*Q(x) = erfc(x / sqrt(2))
    return min(1.0, math.erfc(arg / math.sqrt(2.0)))


def packetize(mod_bits: int, frame_rate: float, p_sym: float) -> Tuple[int, int, float, float]:
    """Physical-layer figures for one slot: (packet_bits, packets, x, y)."""
    if mod_bits not in (1, 2, 3):
        raise ValueError(f"unsupported modulation order {mod_bits}")
    packet_bits = SYMBOLS_PER_PACKET * mod_bits
    slot = 1.0 / frame_rate
    x = (slot / PACKET_SECONDS) * packet_bits
    n = math.ceil(x / packet_bits)
    y = 1.0 - (1.0 - p_sym) ** SYMBOLS_PER_PACKET
    return packet_bits, n, x, y


def level_crossing_rate(snr_linear: float, snr_avg_linear: float, f_d: float) -> float:
    """Rayleigh-envelope crossing rate (one direction) of an SNR threshold."""
    if snr_linear <= 0:
        return 0.0
    ratio = snr_linear / snr_avg_linear
    return math.sqrt(2.0 * math.pi * ratio) * f_d * math.exp(-ratio)


def _region_means(thresholds: Sequence[float], snr_avg: float) -> list:
    """Conditional mean SNR of each [lo, hi) region under Exp(snr_avg)."""

    def antideriv(a: float) -> float:  # integral of t*pdf from a to inf
        return (a + snr_avg) * math.exp(-a / snr_avg)

    out = []
    for lo, hi in zip(thresholds, thresholds[1:]):
        mass = math.exp(-lo / snr_avg) - (0.0 if math.isinf(hi) else math.exp(-hi / snr_avg))
        num = antideriv(lo) - (0.0 if math.isinf(hi) else antideriv(hi))
        out.append(num / mass)
    return out


def best_modulation(snr_linear: float, frame_rate: float, max_mod_bits: int = 3) -> int:
    """PSK order maximizing expected throughput x*(1-y) at this SNR."""
    best, best_tp = 1, -1.0
    for m in range(1, max_mod_bits + 1):
        ps = symbol_error_rate(m, snr_linear)
        _, _, x, y = packetize(m, frame_rate, ps)
        tp = x * (1.0 - y)
        if tp > best_tp:
            best, best_tp = m, tp
    return best


def build_fsmc(
    f_d: float,
    snr_avg_db: float,
    num_states: int,
    frame_rate: float,
    max_mod_bits: int = 3,
) -> ChannelModel:
    """Construct the finite-state Markov channel.

    Thresholds split the exponential SNR law into ``num_states`` regions of
    equal stationary probability.  Up/down transition probabilities are
    K(threshold)*slot/pi; if a middle row would turn negative because both
    crossing terms are large, every off-diagonal rate is damped by a common
    factor, which keeps the chain reversible with the same (uniform)
    stationary distribution.
    """
    if num_states < 1:
        raise ValueError("num_states must be >= 1")
    snr_avg = 10.0 ** (snr_avg_db / 10.0)
    slot = 1.0 / frame_rate
    n = num_states

    thresholds = [-snr_avg * math.log(1.0 - i / n) if i < n else math.inf for i in range(n + 1)]
    pi = 1.0 / n
    means = _region_means(thresholds, snr_avg)

    states = []
    for snr in means:
        m = best_modulation(snr, frame_rate, max_mod_bits)
        ps = symbol_error_rate(m, snr)
        _, _, x, y = packetize(m, frame_rate, ps)
        states.append(ChannelState(x_bits=x, y_per=y, snr_linear=snr, mod_bits=m))

    # Crossing probability per slot for each interior threshold.
    cross = [level_crossing_rate(thresholds[i], snr_avg, f_d) * slot / pi for i in range(1, n)]
    bad = [c for c in cross if c >= 1.0]
    if bad:
        raise SlowFadingError(
            f"threshold crossing probability {max(bad):.3f} >= 1 at f_d={f_d} Hz, "
            f"{frame_rate} fps, |C|={n}; the slot is too long for a Markov chain "
            "at this Doppler rate (reduce f_d or num_states)"
        )

    damping = 1.0
    if n > 1:
        worst = max(
            (cross[i - 1] if i > 0 else 0.0) + (cross[i] if i < n - 1 else 0.0)
            for i in range(n)
        )
        if worst >= 1.0:
            damping = 0.999 / worst
            cross = [c * damping for c in cross]

    p = np.zeros((n, n))
    for i in range(n):
        up = cross[i] if i < n - 1 else 0.0
        down = cross[i - 1] if i > 0 else 0.0
        p[i, i] = 1.0 - up - down
        if i < n - 1:
            p[i, i + 1] = up
        if i > 0:
            p[i, i - 1] = down

    return ChannelModel(
        states=tuple(states),
        transition=tuple(tuple(row) for row in p),
        thresholds=tuple(thresholds),
        slot_seconds=slot,
        damping=damping,
    )


def sample_trace(model: ChannelModel, length: int, seed: int) -> np.ndarray:
    """Sample a state-index path; the initial state is stationary."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    pi = model.stationary()
    cum_rows = np.cumsum(model.matrix(), axis=1)
    out = np.empty(length, dtype=np.int64)
    state = int(np.searchsorted(np.cumsum(pi), rng.random()))
    state = min(state, model.num_states - 1)
    out[0] = state
    draws = rng.random(length - 1)
    for t in range(1, length):
        state = int(np.searchsorted(cum_rows[state], draws[t - 1]))
        state = min(state, model.num_states - 1)
        out[t] = state
    return out


def throughput_series(model: ChannelModel, trace: np.ndarray) -> np.ndarray:
    tp = np.array([s.throughput for s in model.states])
    return tp[np.asarray(trace)]


@dataclass(frozen=True)
class Ar1Model:
    """First-order autoregressive throughput model R_t = rho*R_{t-1} + c + N_t."""

    r_avg: float
    rho: float
    constant_series: bool = False

    @property
    def zeta(self) -> int:
        """Forecast horizon: the channel relaxation time in slots."""
        return max(1, math.ceil(-1.0 / math.log(self.rho)))


RHO_FLOOR = 1e-6
RHO_CEIL = 1.0 - 1e-6


def estimate_ar1(series: Sequence[float]) -> Ar1Model:
    """Fit the AR(1) model: sample mean and clamped lag-1 autocorrelation."""
    x = np.asarray(series, dtype=float)
    if x.size < 100:
        raise ValueError(f"need at least 100 samples to estimate AR(1), got {x.size}")
    mean = float(x.mean())
    centered = x - mean
    denom = float(np.dot(centered, centered))
    constant = denom == 0.0
    if constant:
        rho = RHO_FLOOR
    else:
        rho = float(np.dot(centered[:-1], centered[1:]) / denom)
        rho = min(max(rho, RHO_FLOOR), RHO_CEIL)
    return Ar1Model(r_avg=mean, rho=rho, constant_series=constant)


def forecast_capacity(ar1: Ar1Model, r_now: float) -> float:
    """Expected bits delivered over the next zeta slots given R_t = r_now."""
    if r_now < 0:
        raise ValueError("r_now must be nonnegative")
    total = 0.0
    for a in range(ar1.zeta):
        w = ar1.rho ** a
        total += r_now * w + ar1.r_avg * (1.0 - w)
    return total


def save_channel(model: ChannelModel, path: str) -> None:
    doc = {
        "schema_version": 1,
        "digest": model.digest(),
        "slot_seconds": model.slot_seconds,
        "damping": model.damping,
        "thresholds": [t if math.isfinite(t) else None for t in model.thresholds],
        "states": [asdict(s) for s in model.states],
        "transition": [list(row) for row in model.transition],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_channel(path: str) -> ChannelModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != 1:
        raise ValueError(f"unsupported channel file schema {doc.get('schema_version')}")
    model = ChannelModel(
        states=tuple(ChannelState(**s) for s in doc["states"]),
        transition=tuple(tuple(row) for row in doc["transition"]),
        thresholds=tuple(math.inf if t is None else t for t in doc["thresholds"]),
        slot_seconds=doc["slot_seconds"],
        damping=doc.get("damping", 1.0),
    )
    if model.digest() != doc["digest"]:
        raise ValueError("channel file digest mismatch")
    return model
