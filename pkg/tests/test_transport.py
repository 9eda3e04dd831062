import threading

import pytest

from privlink.crypto import EncRecord
from privlink.model import BITS, GRID, Record
from privlink.transport import (
    A2B,
    B2A,
    MAX_FRAME,
    Abort,
    ChannelAbort,
    BinCountsAnnounce,
    BlindedDistance,
    CompareVerdict,
    EncRecordBatch,
    FramingError,
    MatchAnnounce,
    OutputSync,
    Transcript,
    decode_message,
    encode_message,
    extract_view,
    frame,
    inprocess_pair,
    tcp_pair,
    unframe,
)


class TestFraming:
    def test_roundtrip(self):
        data = frame(3, b"hello")
        assert unframe(data) == (3, b"hello")
        assert data[:4] == (6).to_bytes(4, "big")

    def test_empty_payload(self):
        assert unframe(frame(7, b"")) == (7, b"")

    def test_oversize_rejected_on_send(self):
        with pytest.raises(FramingError):
            frame(1, b"x" * MAX_FRAME)

    def test_oversize_rejected_on_receive(self):
        bad = (MAX_FRAME + 1).to_bytes(4, "big") + b"\x01" + b""
        with pytest.raises(FramingError):
            unframe(bad)

    def test_truncated(self):
        with pytest.raises(FramingError):
            unframe(b"\x00\x00")
        whole = frame(2, b"abcdef")
        with pytest.raises(FramingError):
            unframe(whole[:-2])

    def test_bad_tag(self):
        with pytest.raises(FramingError):
            frame(0, b"")
        with pytest.raises(FramingError):
            decode_message(frame(99, b""))


def roundtrip(msg):
    out = decode_message(encode_message(msg))
    assert type(out) is type(msg)
    return out


class TestMessageCodecs:
    def test_bin_counts(self):
        msg = BinCountsAnnounce("a", {5: 3, 0: 7, 123456789: 2})
        out = roundtrip(msg)
        assert out.party == "a" and out.counts == msg.counts
        assert roundtrip(BinCountsAnnounce("b", {})).counts == {}

    def test_bin_counts_canonical_order(self):
        m1 = BinCountsAnnounce("a", {2: 1, 1: 4})
        m2 = BinCountsAnnounce("a", {1: 4, 2: 1})
        assert m1.encode() == m2.encode()

    def test_enc_record_batch(self):
        big = 1 << 1023 | 12345
        units = [
            EncRecord([(big, big + 1), (7, 8)], [big - 3, 2, 1]),
            EncRecord([(1, 1)], []),
        ]
        out = roundtrip(EncRecordBatch(10, 11, units=units))
        assert out.bin_id == 10 and out.pair_bin == 11
        assert out.records is None
        assert [(u.sq, u.bits) for u in out.units] == [(u.sq, u.bits) for u in units]

    def test_plain_record_batch(self):
        recs = [
            (3, 0, Record(rid=-2, variant=GRID, day=1, slot=13, lat_e6=40_750_000,
                          lon_e6=-73_990_000, vtag=5005)),
            (3, 1, Record(rid=9, variant=BITS, day=0, slot=2,
                          bits=(1 << 49) | 7, nbits=50)),
        ]
        out = roundtrip(EncRecordBatch(3, 7, records=recs))
        assert out.units is None
        assert out.records == recs

    def test_batch_rejects_ambiguous_payload(self):
        with pytest.raises(FramingError):
            EncRecordBatch(0, 0).encode()
        with pytest.raises(FramingError):
            EncRecordBatch(0, 0, units=[], records=[]).encode()

    def test_blinded_distance(self):
        msg = BlindedDistance(1, 2, [0, 1, 1 << 2047])
        out = roundtrip(msg)
        assert out.ciphers == msg.ciphers

    @pytest.mark.parametrize("n", [0, 1, 7, 65])
    def test_compare_verdict_matches(self, n):
        matches = [(i, (i * 3) % 97) for i in range(n)]
        out = roundtrip(CompareVerdict(4, 9, count=max(n * 3, 1 << 40), matches=matches))
        assert out.matches == sorted(matches)
        assert out.count == max(n * 3, 1 << 40)

    def test_match_announce_signed_ids(self):
        msg = MatchAnnounce([(3, 4), (-1, 9), (2**40, -(2**40))])
        out = roundtrip(msg)
        assert set(out.pairs) == set(msg.pairs)

    def test_output_sync(self):
        digest = bytes(range(32))
        out = roundtrip(OutputSync(77, digest))
        assert out.size == 77 and out.digest == digest

    def test_abort(self):
        assert roundtrip(Abort("bin overflow")).reason == "bin overflow"


def scripted_exchange(chan_a, chan_b):
    # fixed lockstep script used to compare channel kinds byte for byte
    def alice():
        chan_a.send(BinCountsAnnounce("a", {0: 4, 1: 2}))
        chan_a.recv()
        chan_a.send(BlindedDistance(0, 0, [123456789 << 100, 42]))
        chan_a.recv()
        chan_a.send(OutputSync(1, bytes(32)))
        chan_a.recv()

    def bob():
        chan_b.recv()
        chan_b.send(BinCountsAnnounce("b", {0: 5, 1: 1}))
        chan_b.recv()
        chan_b.send(CompareVerdict(0, 0, count=20, matches=[(0, 1)]))
        chan_b.recv()
        chan_b.send(OutputSync(1, bytes(32)))

    ta = threading.Thread(target=alice)
    tb = threading.Thread(target=bob)
    ta.start(), tb.start()
    ta.join(), tb.join()
    chan_a.close(), chan_b.close()


class TestChannels:
    def test_inprocess_roundtrip(self):
        a, b, _ = inprocess_pair()
        b.send(MatchAnnounce([(1, 2)]))
        assert a.recv().pairs == [(1, 2)]
        a.send(Abort("x"))
        with pytest.raises(ChannelAbort, match="x"):
            b.recv()

    def test_inprocess_many_in_order(self):
        a, b, _ = inprocess_pair()
        n = 10_000

        def sender():
            for i in range(n):
                a.send(BlindedDistance(i, 0, [i]))

        t = threading.Thread(target=sender)
        t.start()
        for i in range(n):
            msg = b.recv()
            assert msg.bin_id == i and msg.ciphers == [i]
        t.join()

    def test_tcp_roundtrip(self):
        a, b, _ = tcp_pair()
        a.send(BinCountsAnnounce("a", {3: 1}))
        assert b.recv().counts == {3: 1}
        b.send(Abort("done"))
        with pytest.raises(ChannelAbort, match="done"):
            a.recv()
        a.close(), b.close()

    def test_tcp_large_message(self):
        a, b, _ = tcp_pair()
        ciphers = [(1 << 2047) + i for i in range(2000)]

        def sender():
            a.send(BlindedDistance(5, 6, ciphers))

        t = threading.Thread(target=sender)
        t.start()
        got = b.recv()
        t.join()
        assert got.ciphers == ciphers
        a.close(), b.close()

    def test_channel_kinds_agree_byte_for_byte(self):
        a1, b1, t1 = inprocess_pair()
        scripted_exchange(a1, b1)
        a2, b2, t2 = tcp_pair()
        scripted_exchange(a2, b2)
        assert t1.digest() == t2.digest()
        assert [e.nbytes for e in t1.entries] == [e.nbytes for e in t2.entries]


class TestTranscript:
    def run_script(self):
        a, b, t = inprocess_pair()
        scripted_exchange(a, b)
        return t

    def test_features(self):
        t = self.run_script()
        f = t.features()
        assert f["announced_a"] == {0: 4, 1: 2}
        assert f["announced_b"] == {0: 5, 1: 1}
        assert f["verdict_total"] == 20
        assert f["cipher_total"] == 2
        assert f["messages"][OutputSync.TAG] == 2
        assert f["bytes_ab"] > 0 and f["bytes_ba"] > 0

    def test_byte_totals_split_by_direction(self):
        t = self.run_script()
        total = sum(e.nbytes for e in t.entries)
        assert t.bytes_sent(A2B) + t.bytes_sent(B2A) == total

    def test_extract_view(self):
        t = self.run_script()
        for party, want in (("a", B2A), ("b", A2B)):
            view = extract_view(t, party)
            assert view and all(e.direction == want for e in view)

    def test_digest_stable_for_repeat_runs(self):
        assert self.run_script().digest() == self.run_script().digest()

    def test_digest_sensitive_to_content(self):
        a, b, t1 = inprocess_pair()
        a.send(MatchAnnounce([(1, 2)]))
        b.recv()
        a2, b2, t2 = inprocess_pair()
        a2.send(MatchAnnounce([(1, 3)]))
        b2.recv()
        assert t1.digest() != t2.digest()
