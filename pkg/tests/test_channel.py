import numpy as np
import pytest

from qtrack import channel, codec
from qtrack.channel import (BadMagic, BandwidthLedger, Closed, CorruptFrame,
                            RoiMessage, Truncated, deserialize, frame_payload,
                            inproc_pair, pack_bits, serialize, tcp_pair,
                            unframe_payload, unpack_bits)

from conftest import random_tree


def random_message(rng):
    if rng.random() < 0.5:
        qt = random_tree(rng, int(rng.integers(1, 4)))
        return codec.message_from_tree(int(rng.integers(0, 1 << 16)), qt)
    boxes = tuple(
        tuple(int(v) for v in rng.integers(0, 512, size=4)) + ()
        for _ in range(int(rng.integers(0, 4))))
    boxes = tuple((x, y, max(1, w), max(1, h)) for x, y, w, h in boxes)
    return RoiMessage(frame_index=int(rng.integers(0, 1 << 16)), boxes=boxes)


class TestBitPacking:
    def test_msb_first_with_zero_padding(self):
        assert pack_bits("1") == b"\x80"
        assert pack_bits("00000001") == b"\x01"
        assert pack_bits("111111110") == b"\xff\x00"
        assert pack_bits("") == b""

    def test_unpack_inverts_pack(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 64))
            bits = "".join(str(b) for b in rng.integers(0, 2, size=n))
            assert unpack_bits(pack_bits(bits), n) == bits

    def test_unpack_rejects_short_buffer(self):
        with pytest.raises(Truncated):
            unpack_bits(b"\x00", 9)


class TestByteLayout:
    def test_root_skip_acquisition_layout(self):
        # magic, frame_index u32, depth_max u8, bit count u32, one padded
        # byte of tree bits, value count u16 -> 13 bytes total
        msg = codec.AcquisitionMessage(frame_index=0, depth_max=9,
                                       tree_bits="00", values=b"")
        wire = serialize(msg)
        assert wire.hex() == "a1" "00000000" "09" "00000002" "00" "0000"
        assert len(wire) == 13

    def test_roi_layout(self):
        msg = RoiMessage(frame_index=3, boxes=((10, 20, 30, 40),))
        wire = serialize(msg)
        assert wire.hex() == "b2" "00000003" "0001" "000a" "0014" "001e" "0028"
        assert len(wire) == 15

    def test_round_trip_property(self):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            msg = random_message(rng)
            assert deserialize(serialize(msg)) == msg

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            deserialize(b"\xff\x00\x00\x00\x00")

    def test_truncated_after_frame_index(self):
        with pytest.raises(Truncated):
            deserialize(b"\xa1\x00\x00\x00\x00")

    def test_trailing_garbage_rejected(self):
        msg = RoiMessage(frame_index=0, boxes=())
        with pytest.raises(Truncated):
            deserialize(serialize(msg) + b"\x00")

    def test_inconsistent_tree_rejected(self):
        msg = codec.AcquisitionMessage(frame_index=0, depth_max=9,
                                       tree_bits="01", values=b"")
        with pytest.raises(channel.CountMismatch):
            deserialize(serialize(msg))

    def test_overflowing_box_coordinate(self):
        msg = RoiMessage(frame_index=0, boxes=((70000, 0, 1, 1),))
        with pytest.raises(channel.Overflow):
            serialize(msg)


class TestFraming:
    def test_round_trip(self):
        payload = b"hello frame"
        assert unframe_payload(frame_payload(payload)) == payload

    def test_single_bit_corruption_detected(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            framed = bytearray(frame_payload(serialize(random_message(rng))))
            pos = int(rng.integers(0, len(framed) * 8))
            framed[pos // 8] ^= 1 << (pos % 8)
            with pytest.raises(channel.ChannelError):
                deserialize(unframe_payload(bytes(framed)))

    def test_truncated_frame(self):
        framed = frame_payload(b"abc")
        with pytest.raises(Truncated):
            unframe_payload(framed[:-1])

    def test_crc_mismatch(self):
        framed = bytearray(frame_payload(b"abc"))
        framed[5] ^= 0x01
        with pytest.raises(CorruptFrame):
            unframe_payload(bytes(framed))


class TestTransports:
    def test_inproc_preserves_order(self):
        rng = np.random.default_rng(1)
        host, chip = inproc_pair()
        sent = [random_message(rng) for _ in range(100)]
        for msg in sent:
            host.send(msg)
        received = [chip.recv(timeout=1) for _ in sent]
        assert received == sent

    def test_inproc_close_signals_peer(self):
        host, chip = inproc_pair()
        host.close()
        with pytest.raises(Closed):
            chip.recv(timeout=1)

    def test_tcp_round_trip(self):
        rng = np.random.default_rng(2)
        host, chip = tcp_pair()
        try:
            for _ in range(50):
                msg = random_message(rng)
                host.send(msg)
                assert chip.recv(timeout=5) == msg
        finally:
            host.close()
            chip.close()


class TestLedger:
    def test_acquisition_bits_count_against_budget(self):
        ledger = BandwidthLedger(budget=10)
        host, chip = inproc_pair(ledger)
        msg = codec.AcquisitionMessage(frame_index=0, depth_max=3,
                                       tree_bits="01", values=bytes([5]))
        chip.send(msg)  # 2 + 8 = 10 bits, exactly at budget
        assert ledger.violations == []
        chip.send(codec.AcquisitionMessage(frame_index=0, depth_max=3,
                                           tree_bits="00", values=b""))
        assert ledger.violations == [0]
        host.recv(timeout=1)
        host.recv(timeout=1)

    def test_roi_bits_excluded_from_budget(self):
        ledger = BandwidthLedger(budget=4)
        host, chip = inproc_pair(ledger)
        roi = RoiMessage(frame_index=1, boxes=((1, 2, 3, 4),))
        host.send(roi)
        assert ledger.violations == []
        assert ledger.entries[1].host_to_chip_bits == 8 * len(serialize(roi))
        assert ledger.entries[1].chip_to_host_bits == 0
        chip.recv(timeout=1)

    def test_conservation(self, rng):
        ledger = BandwidthLedger()
        host, chip = inproc_pair(ledger)
        total = 0
        for t in range(20):
            qt = random_tree(rng, 2)
            msg = codec.message_from_tree(t, qt)
            total += msg.declared_rate
            chip.send(msg)
            host.recv(timeout=1)
        assert ledger.total_chip_to_host() == total
