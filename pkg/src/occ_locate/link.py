"""LED-ID framing, OOK-Manchester and S2-PSK modulation, frame sampling and decoding.

Wire format (bit-exact, MSB first)::

    preamble 0xA6 (8 raw symbols)
    Manchester-coded: tag(2) id(16) payload(32 | 40 | 24) crc8(8)

Tags are 00 indoor, 01 street light, 10 vehicle.  The CRC-8 uses polynomial
0x07 with zero init over tag + id + payload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from numpy.typing import NDArray

from .errors import DecodeFailure, DomainError, SyncLost

HIGH, LOW = 1, 0
PREAMBLE = 0xA6
PREAMBLE_BITS = tuple((PREAMBLE >> (7 - i)) & 1 for i in range(8))
DEFAULT_CLOCK_HZ = 125.0


class PacketKind(IntEnum):
    INDOOR = 0b00
    STREET_LIGHT = 0b01
    VEHICLE = 0b10


# (field name, bit width) per packet class
PAYLOAD_LAYOUT: dict[PacketKind, tuple[tuple[str, int], ...]] = {
    PacketKind.INDOOR: (("x_mm", 16), ("y_mm", 16)),
    PacketKind.STREET_LIGHT: (("height_mm", 16), ("spacing_mm", 16), ("side", 8)),
    PacketKind.VEHICLE: (("area_mm2", 16), ("flags", 8)),
}


def crc8(bits) -> int:
    """Bitwise CRC-8, polynomial x^8 + x^2 + x + 1, zero init, no reflection."""
    crc = 0
    for bit in bits:
        fb = ((crc >> 7) & 1) ^ (int(bit) & 1)
        crc = (crc << 1) & 0xFF
        if fb:
            crc ^= 0x07
    return crc


def _to_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def _from_bits(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


@dataclass(frozen=True)
class LedIdPacket:
    kind: PacketKind
    id: int
    payload: tuple[int, ...]
    checksum: int | None = None

    def __post_init__(self) -> None:
        kind = PacketKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not 0 <= self.id < 1 << 16:
            raise ValueError("id must fit in 16 bits")
        layout = PAYLOAD_LAYOUT[kind]
        payload = tuple(int(v) for v in self.payload)
        if len(payload) != len(layout):
            raise ValueError(f"{kind.name} payload needs {len(layout)} fields")
        for (name, width), value in zip(layout, payload):
            if not 0 <= value < 1 << width:
                raise ValueError(f"{name}={value} does not fit in {width} bits")
        object.__setattr__(self, "payload", payload)
        expected = crc8(self.body_bits())
        if self.checksum is None:
            object.__setattr__(self, "checksum", expected)

    @classmethod
    def indoor(cls, id: int, x_mm: int, y_mm: int) -> LedIdPacket:
        return cls(PacketKind.INDOOR, id, (x_mm, y_mm))

    @classmethod
    def street_light(cls, id: int, height_mm: int, spacing_mm: int, side: int) -> LedIdPacket:
        return cls(PacketKind.STREET_LIGHT, id, (height_mm, spacing_mm, side))

    @classmethod
    def vehicle(cls, id: int, area_mm2: int, flags: int = 0) -> LedIdPacket:
        return cls(PacketKind.VEHICLE, id, (area_mm2, flags))

    @property
    def fields(self) -> dict[str, int]:
        return {name: v for (name, _), v in zip(PAYLOAD_LAYOUT[self.kind], self.payload)}

    @property
    def valid(self) -> bool:
        return self.checksum == crc8(self.body_bits())

    def body_bits(self) -> list[int]:
        bits = _to_bits(int(self.kind), 2) + _to_bits(self.id, 16)
        for (_, width), value in zip(PAYLOAD_LAYOUT[self.kind], self.payload):
            bits += _to_bits(value, width)
        return bits

    def to_bits(self) -> list[int]:
        return self.body_bits() + _to_bits(self.checksum, 8)

    @staticmethod
    def bit_length(kind: PacketKind) -> int:
        return 2 + 16 + sum(w for _, w in PAYLOAD_LAYOUT[kind]) + 8

    @classmethod
    def from_bits(cls, bits) -> LedIdPacket:
        bits = [int(b) for b in bits]
        if len(bits) < 2:
            raise DecodeFailure("truncated packet")
        try:
            kind = PacketKind(_from_bits(bits[:2]))
        except ValueError:
            raise DecodeFailure("unknown packet tag") from None
        if len(bits) != cls.bit_length(kind):
            raise DecodeFailure("packet length mismatch")
        pos = 18
        values = []
        for _, width in PAYLOAD_LAYOUT[kind]:
            values.append(_from_bits(bits[pos : pos + width]))
            pos += width
        checksum = _from_bits(bits[pos : pos + 8])
        if crc8(bits[:pos]) != checksum:
            raise DecodeFailure("CRC mismatch")
        return cls(kind, _from_bits(bits[2:18]), tuple(values), checksum)


def manchester(bits) -> list[int]:
    out: list[int] = []
    for b in bits:
        out += [HIGH, LOW] if b else [LOW, HIGH]
    return out


def manchester_decode(chips) -> list[int]:
    chips = list(chips)
    if len(chips) % 2:
        raise DecodeFailure("odd Manchester chip count")
    bits = []
    for a, b in zip(chips[::2], chips[1::2]):
        if a == b:
            raise DecodeFailure("Manchester violation")
        bits.append(1 if a == HIGH else 0)
    return bits


def packet_symbols(kind: PacketKind) -> int:
    """Raw symbols per transmitted packet, preamble included."""
    return len(PREAMBLE_BITS) + 2 * LedIdPacket.bit_length(kind)


# ── Modulation ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class SymbolStream:
    """A packet repeated back to back at ``clock`` symbols per second.

    For OOK the symbols are the LED on/off states.  For S2-PSK they are the
    data chips; each chip rides on a square carrier of ``carrier_period`` and
    the pair of LEDs emits (s1, s1 XOR chip).
    """

    symbols: tuple[int, ...]
    clock: float = DEFAULT_CLOCK_HZ
    scheme: str = "ook"
    carrier_period: float | None = None
    leds: int = field(init=False)

    def __post_init__(self) -> None:
        if self.scheme not in ("ook", "s2psk"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.clock > 0:
            raise ValueError("clock must be positive")
        if self.scheme == "s2psk" and self.carrier_period is None:
            object.__setattr__(self, "carrier_period", 1.0 / self.clock)
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))
        object.__setattr__(self, "leds", 1 if self.scheme == "ook" else 2)

    def __len__(self) -> int:
        return len(self.symbols)

    def symbol_at(self, t: float) -> int:
        return self.symbols[int(math.floor(t * self.clock + 1e-9)) % len(self.symbols)]

    def states_at(self, t: float) -> tuple[int, ...]:
        chip = self.symbol_at(t)
        if self.scheme == "ook":
            return (chip,)
        return s2psk_states(chip, t, self.carrier_period)


def encode_ook_manchester(packet: LedIdPacket, clock: float = DEFAULT_CLOCK_HZ) -> SymbolStream:
    if not packet.valid:
        raise ValueError("packet checksum does not verify")
    return SymbolStream(PREAMBLE_BITS + tuple(manchester(packet.to_bits())), clock, "ook")


def encode_s2psk(
    packet: LedIdPacket, clock: float = DEFAULT_CLOCK_HZ, carrier_period: float | None = None
) -> SymbolStream:
    if not packet.valid:
        raise ValueError("packet checksum does not verify")
    return SymbolStream(
        PREAMBLE_BITS + tuple(manchester(packet.to_bits())), clock, "s2psk", carrier_period
    )


def s2psk_states(bit: int, t: float, period: float) -> tuple[int, int]:
    """LED pair states: s1 is HIGH in the first half of each period, s2 = s1 XOR bit."""
    if t < 0:
        raise DomainError("time must be non-negative")
    s1 = HIGH if math.fmod(t, period) < period / 2 else LOW
    return s1, s1 ^ (int(bit) & 1)


def s2psk_demod(s1_sample: int, s2_sample: int) -> int:
    return int(s1_sample) ^ int(s2_sample)


def s2psk_ber(delta: float, p_e: float) -> float:
    q = delta * p_e
    if not 0.0 <= q <= 1.0:
        raise DomainError("delta * p_e must lie in [0, 1]")
    return 2.0 * q * (1.0 - q)


# ── Sampling and decoding ────────────────────────────────────────────────────


def effective_bit_rate(fps: float) -> float:
    """One state per frame and two chips per Manchester bit."""
    return fps / 2.0


@dataclass(frozen=True)
class FrameSamples:
    states: NDArray[np.int8]  # (n_frames, leds)
    times: NDArray[np.float64]
    low_confidence: NDArray[np.bool_]
    scheme: str = "ook"

    def chips(self) -> NDArray[np.int8]:
        if self.scheme == "ook":
            return self.states[:, 0]
        return self.states[:, 0] ^ self.states[:, 1]


def find_preamble(chips, start: int = 0, stop: int | None = None) -> int:
    """Index of the first preamble occurrence beginning in [start, stop), or -1."""
    arr = np.asarray(chips, dtype=np.int8)
    n = len(PREAMBLE_BITS)
    stop = len(arr) - n + 1 if stop is None else min(stop, len(arr) - n + 1)
    if stop <= start:
        return -1
    windows = np.lib.stride_tricks.sliding_window_view(arr, n)[start:stop]
    hits = np.flatnonzero(np.all(windows == np.array(PREAMBLE_BITS, dtype=np.int8), axis=1))
    return int(start + hits[0]) if hits.size else -1


def sample_frames(
    stream: SymbolStream,
    fps: float,
    exposure: float,
    n_frames: int,
    start_time: float = 0.0,
    blur_rate_px: float = 0.0,
    blur_threshold_px: float = math.inf,
    sync_window: int | None = None,
) -> FrameSamples:
    """Sample one state per LED at each frame midpoint ``start + (k + 1/2) / fps``.

    A frame is flagged low-confidence when the image smear accumulated over the
    exposure (``blur_rate_px * exposure``) exceeds ``blur_threshold_px``.
    Raises SyncLost if no preamble starts within the first ``sync_window`` frames.
    """
    if not fps > 0 or not exposure > 0:
        raise DomainError("fps and exposure must be positive")
    if stream.clock < fps:
        raise DomainError("stream clock must be at least the frame rate")
    k = np.arange(int(n_frames))
    times = start_time + (k + 0.5) / fps
    states = np.array([stream.states_at(t) for t in times], dtype=np.int8).reshape(len(k), stream.leds)
    blurred = blur_rate_px * exposure > blur_threshold_px
    samples = FrameSamples(states, times, np.full(len(k), blurred), stream.scheme)
    window = len(k) if sync_window is None else sync_window
    if find_preamble(samples.chips(), 0, window) < 0:
        raise SyncLost(f"no preamble within {window} frames")
    return samples


def flip_states(states: NDArray, p_e: float, rng: np.random.Generator) -> NDArray[np.int8]:
    flips = rng.random(states.shape) < p_e
    return (np.asarray(states, dtype=np.int8) ^ flips).astype(np.int8)


def decode_chips(chips) -> LedIdPacket:
    """Parse the first complete packet after a preamble."""
    chips = np.asarray(chips, dtype=np.int8)
    start = find_preamble(chips)
    if start < 0:
        raise DecodeFailure("preamble not found")
    pos = start + len(PREAMBLE_BITS)
    tag = manchester_decode(chips[pos : pos + 4])
    try:
        kind = PacketKind(_from_bits(tag))
    except ValueError:
        raise DecodeFailure("unknown packet tag") from None
    n_chips = 2 * LedIdPacket.bit_length(kind)
    if pos + n_chips > len(chips):
        raise DecodeFailure("packet truncated")
    return LedIdPacket.from_bits(manchester_decode(chips[pos : pos + n_chips]))


def corrupt_and_decode(
    frames: FrameSamples, p_e: float, rng: np.random.Generator, delta: float = 1.0
) -> LedIdPacket:
    """Flip each sampled LED state with probability ``delta * p_e`` and decode."""
    if not 0.0 <= p_e <= 0.5:
        raise DomainError("p_e must lie in [0, 0.5]")
    q = delta * p_e
    if not 0.0 <= q <= 1.0:
        raise DomainError("delta * p_e must lie in [0, 1]")
    noisy = FrameSamples(flip_states(frames.states, q, rng), frames.times, frames.low_confidence, frames.scheme)
    return decode_chips(noisy.chips())
