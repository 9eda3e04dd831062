"""Framed two-party messaging with a recorded transcript.

Wire format: a 4-byte big-endian length, one type tag byte, then the payload;
the length covers tag plus payload and is capped at 16 MiB. Every message
type has a canonical byte encoding, so a run produces identical transcripts
whether the parties talk through in-process queues or a real socket.

The transcript is the ground truth for everything an observer of the wire
could learn: per-direction byte counts, a message-type histogram, the
announced bin loads, and a running digest. Audits read it instead of
trusting the protocol code to report on itself.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from hashlib import sha256

MAX_FRAME = 16 * 1024 * 1024

A2B = "a->b"
B2A = "b->a"


class FramingError(Exception):
    pass


class ChannelAbort(RuntimeError):
    """The peer sent an abort; raised out of recv() so no handshake step
    mistakes it for the message it was waiting for."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def frame(tag: int, payload: bytes) -> bytes:
    body = 1 + len(payload)
    if body > MAX_FRAME:
        raise FramingError(f"frame of {body} bytes exceeds the {MAX_FRAME} cap")
    if not 0 < tag < 256:
        raise FramingError(f"bad tag {tag}")
    return struct.pack(">IB", body, tag) + payload


def unframe(data: bytes) -> tuple[int, bytes]:
    if len(data) < 5:
        raise FramingError("truncated frame header")
    body, tag = struct.unpack(">IB", data[:5])
    if body > MAX_FRAME:
        raise FramingError(f"frame of {body} bytes exceeds the {MAX_FRAME} cap")
    if len(data) - 4 != body:
        raise FramingError("frame length mismatch")
    return tag, data[5:]


def _pack_bigint(x: int) -> bytes:
    raw = x.to_bytes((x.bit_length() + 7) // 8 or 1, "big")
    return struct.pack(">I", len(raw)) + raw


def _unpack_bigint(data: bytes, off: int) -> tuple[int, int]:
    (ln,) = struct.unpack_from(">I", data, off)
    off += 4
    return int.from_bytes(data[off : off + ln], "big"), off + ln


# ---------------------------------------------------------------------------
# message registry


@dataclass
class BinCountsAnnounce:
    """Padded bin loads one party reveals to the other."""

    TAG = 1
    party: str  # "a" or "b"
    counts: dict[int, int]

    def encode(self) -> bytes:
        items = sorted(self.counts.items())
        out = [struct.pack(">BI", 0 if self.party == "a" else 1, len(items))]
        out += [struct.pack(">QQ", b, c) for b, c in items]
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "BinCountsAnnounce":
        p, n = struct.unpack_from(">BI", data, 0)
        counts = {}
        off = 5
        for _ in range(n):
            b, c = struct.unpack_from(">QQ", data, off)
            counts[b] = c
            off += 16
        return cls("a" if p == 0 else "b", counts)


@dataclass
class EncRecordBatch:
    """Record payload for one bin, addressed to a partner bin.

    Two layouts share the tag: encrypted units (the ciphertext protocol)
    and positioned plaintext records (the fast simulation, and the reveal
    rounds both modes run after a match). Plaintext entries carry their
    (bin, position) address so one batch can cover several bins.
    """

    TAG = 2
    _PLAIN = struct.Struct(">IIqBHHqiiH16s")
    _VARIANTS = ("grid", "bits")

    bin_id: int
    pair_bin: int
    units: list | None = None  # EncRecord values; kept opaque here
    records: list | None = None  # (bin, pos, Record) triples

    def encode(self) -> bytes:
        if (self.units is None) == (self.records is None):
            raise FramingError("exactly one of units/records must be set")
        if self.records is not None:
            out = [struct.pack(">QQIB", self.bin_id, self.pair_bin, len(self.records), 1)]
            for b, pos, r in self.records:
                out.append(
                    self._PLAIN.pack(
                        b, pos, r.rid, self._VARIANTS.index(r.variant), r.day,
                        r.slot, r.vtag, r.lat_e6, r.lon_e6, r.nbits,
                        r.bits.to_bytes(16, "big"),
                    )
                )
            return b"".join(out)
        out = [struct.pack(">QQIB", self.bin_id, self.pair_bin, len(self.units), 0)]
        for u in self.units:
            out.append(struct.pack(">BH", len(u.sq), len(u.bits)))
            for ex, ex2 in u.sq:
                out.append(_pack_bigint(ex))
                out.append(_pack_bigint(ex2))
            for eb in u.bits:
                out.append(_pack_bigint(eb))
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "EncRecordBatch":
        from .crypto import EncRecord
        from .model import Record

        bin_id, pair_bin, n, kind = struct.unpack_from(">QQIB", data, 0)
        off = 21
        if kind == 1:
            records = []
            for _ in range(n):
                b, pos, rid, var, day, slot, vtag, lat, lon, nbits, raw = (
                    cls._PLAIN.unpack_from(data, off)
                )
                off += cls._PLAIN.size
                rec = Record(
                    rid=rid, variant=cls._VARIANTS[var], day=day, slot=slot,
                    lat_e6=lat, lon_e6=lon, bits=int.from_bytes(raw, "big"),
                    nbits=nbits, vtag=vtag,
                )
                records.append((b, pos, rec))
            return cls(bin_id, pair_bin, records=records)
        units = []
        for _ in range(n):
            nsq, nbits = struct.unpack_from(">BH", data, off)
            off += 3
            sq = []
            for _ in range(nsq):
                ex, off = _unpack_bigint(data, off)
                ex2, off = _unpack_bigint(data, off)
                sq.append((ex, ex2))
            bits = []
            for _ in range(nbits):
                eb, off = _unpack_bigint(data, off)
                bits.append(eb)
            units.append(EncRecord(sq, bits))
        return cls(bin_id, pair_bin, units=units)


@dataclass
class BlindedDistance:
    """Blinded encrypted distances for one bin pair, row-major order."""

    TAG = 3
    bin_id: int
    pair_bin: int
    ciphers: list[int]

    def encode(self) -> bytes:
        out = [struct.pack(">QQI", self.bin_id, self.pair_bin, len(self.ciphers))]
        out += [_pack_bigint(c) for c in self.ciphers]
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "BlindedDistance":
        bin_id, pair_bin, n = struct.unpack_from(">QQI", data, 0)
        off = 20
        ciphers = []
        for _ in range(n):
            c, off = _unpack_bigint(data, off)
            ciphers.append(c)
        return cls(bin_id, pair_bin, ciphers)


@dataclass
class CompareVerdict:
    """Comparison outcomes for one bin pair.

    count is the number of comparisons the pair cost, which equals the
    product of the two remaining bin loads whether or not the verdicts
    were produced by real ciphertext work. matches lists the comparisons
    that met the rule as (alice position, bob position) within the pair's
    bins; everything else failed.
    """

    TAG = 4
    bin_id: int
    pair_bin: int
    count: int
    matches: list[tuple[int, int]]

    def encode(self) -> bytes:
        head = struct.pack(">QQQI", self.bin_id, self.pair_bin, self.count, len(self.matches))
        body = b"".join(struct.pack(">II", a, b) for a, b in sorted(self.matches))
        return head + body

    @classmethod
    def decode(cls, data: bytes) -> "CompareVerdict":
        bin_id, pair_bin, count, n = struct.unpack_from(">QQQI", data, 0)
        off = 28
        matches = []
        for _ in range(n):
            a, b = struct.unpack_from(">II", data, off)
            off += 8
            matches.append((a, b))
        return cls(bin_id, pair_bin, count, matches)


@dataclass
class MatchAnnounce:
    """Record id pairs one side asserts as matched."""

    TAG = 5
    pairs: list[tuple[int, int]]

    def encode(self) -> bytes:
        out = [struct.pack(">I", len(self.pairs))]
        out += [struct.pack(">qq", a, b) for a, b in sorted(self.pairs)]
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "MatchAnnounce":
        (n,) = struct.unpack_from(">I", data, 0)
        pairs = []
        off = 4
        for _ in range(n):
            a, b = struct.unpack_from(">qq", data, off)
            pairs.append((a, b))
            off += 16
        return cls(pairs)


@dataclass
class OutputSync:
    """Digest handshake over the final output set."""

    TAG = 6
    size: int
    digest: bytes

    def encode(self) -> bytes:
        return struct.pack(">I", self.size) + self.digest

    @classmethod
    def decode(cls, data: bytes) -> "OutputSync":
        (size,) = struct.unpack_from(">I", data, 0)
        return cls(size, data[4:36])


@dataclass
class Abort:
    TAG = 7
    reason: str

    def encode(self) -> bytes:
        return self.reason.encode()

    @classmethod
    def decode(cls, data: bytes) -> "Abort":
        return cls(data.decode())


MESSAGE_TYPES = {
    m.TAG: m
    for m in (
        BinCountsAnnounce,
        EncRecordBatch,
        BlindedDistance,
        CompareVerdict,
        MatchAnnounce,
        OutputSync,
        Abort,
    )
}


def encode_message(msg) -> bytes:
    return frame(msg.TAG, msg.encode())


def decode_message(data: bytes):
    tag, payload = unframe(data)
    cls = MESSAGE_TYPES.get(tag)
    if cls is None:
        raise FramingError(f"unknown message tag {tag}")
    return cls.decode(payload)


# ---------------------------------------------------------------------------
# transcript


@dataclass
class TranscriptEntry:
    seq: int
    direction: str
    tag: int
    nbytes: int


@dataclass
class Transcript:
    """Every framed byte that crossed the wire, in order."""

    entries: list[TranscriptEntry] = field(default_factory=list)
    announced: dict[str, dict[int, int]] = field(default_factory=dict)
    verdict_total: int = 0
    cipher_total: int = 0
    _hashes: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, direction: str, data: bytes) -> None:
        tag = data[4]
        with self._lock:
            self.entries.append(TranscriptEntry(len(self.entries), direction, tag, len(data)))
            # one running hash per direction: the digest must not depend on
            # how two concurrent senders happened to interleave
            self._hashes.setdefault(direction, sha256()).update(data)
            if tag == BinCountsAnnounce.TAG:
                msg = decode_message(data)
                self.announced[msg.party] = dict(msg.counts)
            elif tag == CompareVerdict.TAG:
                self.verdict_total += struct.unpack_from(">Q", data, 21)[0]
            elif tag == BlindedDistance.TAG:
                self.cipher_total += struct.unpack_from(">I", data, 21)[0]

    def digest(self) -> str:
        with self._lock:
            outer = sha256()
            for d in (A2B, B2A):
                h = self._hashes.get(d)
                outer.update(h.digest() if h else b"\0" * 32)
            return outer.hexdigest()

    def bytes_sent(self, direction: str) -> int:
        return sum(e.nbytes for e in self.entries if e.direction == direction)

    def message_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for e in self.entries:
            hist[e.tag] = hist.get(e.tag, 0) + 1
        return hist

    def features(self) -> dict:
        """Observer summary: everything audits condition on."""
        return {
            "announced_a": dict(self.announced.get("a", {})),
            "announced_b": dict(self.announced.get("b", {})),
            "verdict_total": self.verdict_total,
            "cipher_total": self.cipher_total,
            "bytes_ab": self.bytes_sent(A2B),
            "bytes_ba": self.bytes_sent(B2A),
            "messages": self.message_histogram(),
        }


def extract_view(transcript: Transcript, party: str) -> list[TranscriptEntry]:
    """Frames a given party received, i.e. its whole incoming view."""
    want = B2A if party == "a" else A2B
    return [e for e in transcript.entries if e.direction == want]


# ---------------------------------------------------------------------------
# channels


class Channel:
    """One endpoint of a two-party link."""

    def __init__(self, direction: str, transcript: Transcript):
        self.direction = direction
        self.transcript = transcript

    def send(self, msg) -> None:
        data = encode_message(msg)
        self.transcript.record(self.direction, data)
        self._send_bytes(data)

    def recv(self):
        msg = decode_message(self._recv_bytes())
        if isinstance(msg, Abort):
            raise ChannelAbort(msg.reason)
        return msg

    def close(self) -> None:
        pass

    def _send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_bytes(self) -> bytes:
        raise NotImplementedError


class _QueueChannel(Channel):
    def __init__(self, direction, transcript, out_q, in_q):
        super().__init__(direction, transcript)
        self.out_q = out_q
        self.in_q = in_q

    def _send_bytes(self, data: bytes) -> None:
        self.out_q.put(data)

    def _recv_bytes(self) -> bytes:
        return self.in_q.get()


def inprocess_pair(transcript: Transcript | None = None):
    """Queue-backed endpoints for two threads in one process."""
    transcript = transcript or Transcript()
    q_ab: queue.Queue = queue.Queue()
    q_ba: queue.Queue = queue.Queue()
    a = _QueueChannel(A2B, transcript, q_ab, q_ba)
    b = _QueueChannel(B2A, transcript, q_ba, q_ab)
    return a, b, transcript


class _SocketChannel(Channel):
    def __init__(self, direction, transcript, sock):
        super().__init__(direction, transcript)
        self.sock = sock

    def _send_bytes(self, data: bytes) -> None:
        self.sock.sendall(data)

    def _recv_bytes(self) -> bytes:
        head = self._read_exact(5)
        body, _tag = struct.unpack(">IB", head)
        if body > MAX_FRAME:
            raise FramingError(f"frame of {body} bytes exceeds the {MAX_FRAME} cap")
        return head + self._read_exact(body - 1)

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            chunk = self.sock.recv(min(n, 1 << 16))
            if not chunk:
                raise FramingError("connection closed mid-frame")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        self.sock.close()


def tcp_listen_channel(
    direction: str, port: int = 0, host: str = "127.0.0.1",
    transcript: Transcript | None = None,
) -> tuple[Channel, int]:
    """Bind, accept one peer, return (channel, bound port). Blocks on accept."""
    listener = socket.create_server((host, port))
    bound = listener.getsockname()[1]
    sock, _ = listener.accept()
    listener.close()
    return _SocketChannel(direction, transcript or Transcript(), sock), bound


def tcp_connect_channel(
    direction: str, host: str, port: int,
    transcript: Transcript | None = None, timeout: float = 10.0,
) -> Channel:
    """Connect to a listening peer, retrying until the timeout."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return _SocketChannel(direction, transcript or Transcript(), sock)
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)


def tcp_pair(transcript: Transcript | None = None, host: str = "127.0.0.1"):
    """Loopback TCP endpoints; same framing, real sockets."""
    transcript = transcript or Transcript()
    listener = socket.create_server((host, 0))
    port = listener.getsockname()[1]
    client_holder = {}

    def _connect():
        client_holder["sock"] = socket.create_connection((host, port))

    t = threading.Thread(target=_connect)
    t.start()
    server_sock, _ = listener.accept()
    t.join()
    listener.close()
    a = _SocketChannel(A2B, transcript, client_holder["sock"])
    b = _SocketChannel(B2A, transcript, server_sock)
    return a, b, transcript
