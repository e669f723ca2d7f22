import numpy as np
import pytest

from occ_locate import link
from occ_locate.errors import DecodeFailure, DomainError, SyncLost
from occ_locate.link import LedIdPacket, PacketKind

# ── Helpers ──────────────────────────────────────────────────────────────────


def ascii_bits(text):
    return [(byte >> (7 - i)) & 1 for byte in text.encode() for i in range(8)]


def one_packet(stream):
    """Chips of a single transmitted packet."""
    return list(stream.symbols)


# ── Framing ──────────────────────────────────────────────────────────────────


def test_crc8_check_value():
    assert link.crc8(ascii_bits("123456789")) == 0xF4


def test_crc8_empty():
    assert link.crc8([]) == 0


def test_preamble_bits():
    assert link.PREAMBLE_BITS == (1, 0, 1, 0, 0, 1, 1, 0)


@pytest.mark.parametrize("kind, bits, symbols", [(PacketKind.INDOOR, 58, 124), (PacketKind.STREET_LIGHT, 66, 140), (PacketKind.VEHICLE, 50, 108)])
def test_packet_sizes(kind, bits, symbols):
    assert LedIdPacket.bit_length(kind) == bits
    assert link.packet_symbols(kind) == symbols


@pytest.mark.parametrize(
    "packet",
    [LedIdPacket.indoor(7, 1200, 65535), LedIdPacket.street_light(513, 8000, 40000, 1), LedIdPacket.vehicle(42, 1800, 3)],
)
def test_packet_bit_roundtrip(packet):
    bits = packet.to_bits()
    assert bits[:2] == [(int(packet.kind) >> 1) & 1, int(packet.kind) & 1]
    assert LedIdPacket.from_bits(bits) == packet


def test_packet_fields():
    assert LedIdPacket.street_light(1, 8000, 30000, 0).fields == {"height_mm": 8000, "spacing_mm": 30000, "side": 0}


@pytest.mark.parametrize("args", [(70000, 0, 0), (1, -1, 0), (1, 0, 1 << 16)])
def test_packet_field_widths(args):
    with pytest.raises(ValueError):
        LedIdPacket.indoor(*args)


def test_crc_detects_corruption():
    bits = LedIdPacket.indoor(3, 100, 200).to_bits()
    bits[20] ^= 1
    with pytest.raises(DecodeFailure, match="CRC"):
        LedIdPacket.from_bits(bits)


def test_unknown_tag_and_length():
    bits = LedIdPacket.indoor(3, 100, 200).to_bits()
    with pytest.raises(DecodeFailure):
        LedIdPacket.from_bits([1, 1] + bits[2:])
    with pytest.raises(DecodeFailure):
        LedIdPacket.from_bits(bits[:-1])


def test_invalid_checksum_rejected_by_encoder():
    bad = LedIdPacket(PacketKind.INDOOR, 1, (2, 3), checksum=0)
    assert not bad.valid
    with pytest.raises(ValueError):
        link.encode_ook_manchester(bad)


# ── Manchester ───────────────────────────────────────────────────────────────


def test_manchester_mapping():
    assert link.manchester([1, 0]) == [1, 0, 0, 1]
    assert link.manchester_decode([1, 0, 0, 1]) == [1, 0]


def test_manchester_violation():
    with pytest.raises(DecodeFailure, match="violation"):
        link.manchester_decode([1, 1, 0, 1])
    with pytest.raises(DecodeFailure):
        link.manchester_decode([1, 0, 1])


# ── S2-PSK ───────────────────────────────────────────────────────────────────


def test_s2psk_states_and_demod():
    period = 0.01
    for t in (0.001, 0.006):
        for bit in (0, 1):
            s1, s2 = link.s2psk_states(bit, t, period)
            assert link.s2psk_demod(s1, s2) == bit
    assert link.s2psk_states(0, 0.001, period) == (1, 1)
    assert link.s2psk_states(1, 0.006, period) == (0, 1)
    with pytest.raises(DomainError):
        link.s2psk_states(0, -1.0, period)


def test_s2psk_ber_formula():
    assert link.s2psk_ber(1.0, 0.1) == pytest.approx(0.18)
    assert link.s2psk_ber(0.5, 0.2) == pytest.approx(0.18)
    assert link.s2psk_ber(1.0, 0.0) == 0.0
    with pytest.raises(DomainError):
        link.s2psk_ber(3.0, 0.5)


def test_effective_bit_rate():
    assert link.effective_bit_rate(30) == 15


# ── Sampling and decoding ────────────────────────────────────────────────────


@pytest.mark.parametrize("encoder", [link.encode_ook_manchester, link.encode_s2psk])
def test_sample_and_decode_clean(encoder):
    packet = LedIdPacket.street_light(9, 8000, 30000, 1)
    stream = encoder(packet, clock=30.0)
    n = 2 * len(stream)
    frames = link.sample_frames(stream, fps=30.0, exposure=1 / 500, n_frames=n)
    assert frames.states.shape == (n, stream.leds)
    assert link.decode_chips(frames.chips()) == packet


def test_decode_with_offset_start():
    packet = LedIdPacket.vehicle(5, 1800)
    stream = link.encode_ook_manchester(packet, clock=30.0)
    frames = link.sample_frames(stream, 30.0, 1 / 500, 2 * len(stream), start_time=37 / 30.0)
    assert link.decode_chips(frames.chips()) == packet


def test_sync_lost_without_preamble():
    stream = link.encode_ook_manchester(LedIdPacket.indoor(1, 2, 3), clock=30.0)
    with pytest.raises(SyncLost):
        link.sample_frames(stream, 30.0, 1 / 500, 5, start_time=1.0)


def test_low_confidence_flag():
    stream = link.encode_ook_manchester(LedIdPacket.indoor(1, 2, 3), clock=30.0)
    sharp = link.sample_frames(stream, 30.0, 1 / 500, 200, blur_rate_px=100.0, blur_threshold_px=1.0)
    smeared = link.sample_frames(stream, 30.0, 1 / 50, 200, blur_rate_px=100.0, blur_threshold_px=1.0)
    assert not sharp.low_confidence.any()
    assert smeared.low_confidence.all()


def test_sampling_domain():
    stream = link.encode_ook_manchester(LedIdPacket.indoor(1, 2, 3), clock=30.0)
    with pytest.raises(DomainError):
        link.sample_frames(stream, 60.0, 1 / 500, 10)
    with pytest.raises(DomainError):
        link.sample_frames(stream, 30.0, 0.0, 10)


def test_decode_truncated_and_missing():
    chips = one_packet(link.encode_ook_manchester(LedIdPacket.indoor(1, 2, 3)))
    with pytest.raises(DecodeFailure, match="truncated"):
        link.decode_chips(chips[:60])
    with pytest.raises(DecodeFailure, match="preamble"):
        link.decode_chips([0] * 40)


def test_corrupt_and_decode_noiseless_and_noisy():
    packet = LedIdPacket.indoor(11, 500, 600)
    stream = link.encode_ook_manchester(packet, clock=30.0)
    frames = link.sample_frames(stream, 30.0, 1 / 500, 2 * len(stream))
    rng = np.random.default_rng(0)
    assert link.corrupt_and_decode(frames, 0.0, rng) == packet
    failures = 0
    for _ in range(50):
        try:
            link.corrupt_and_decode(frames, 0.2, rng)
        except DecodeFailure:
            failures += 1
    assert failures > 40
    with pytest.raises(DomainError):
        link.corrupt_and_decode(frames, 0.7, rng)


def test_flip_rate_matches_probability():
    states = np.zeros((200000, 1), dtype=np.int8)
    flipped = link.flip_states(states, 0.1, np.random.default_rng(1))
    assert flipped.mean() == pytest.approx(0.1, abs=0.003)
