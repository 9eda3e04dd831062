"""Additively homomorphic encryption and the private comparisons built on it.

The scheme is Paillier with g = n + 1, so E(m) = (1 + m*n) * r^n mod n^2 and
E(a) * E(b) decrypts to a + b. Records are compared under encryption without
either side learning the other's coordinates:

* metric coordinates travel as squared units (E(x), E(x^2)); the plaintext
  holder folds (x - y)^2 = x^2 - 2xy + y^2 into one ciphertext per unit,
* payload bits travel as single-bit units E(b); XOR against a known bit is
  b, or 1 - b, both linear,
* the folded squared distance is blinded with a uniform shift and only the
  blinded value is ever decrypted; a comparison oracle turns it into a
  one-bit verdict.

Set intersection uses encrypted bucket polynomials whose roots are the
sender's keys: the response r * p(b) + b decrypts to b exactly when b is a
root and to noise otherwise. Similarity joins reduce to intersection by
expanding one side to its whole match neighborhood first.

Key sizes below 2048 bits are for tests only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from hashlib import sha256

import numpy as np

from .model import MatchRule, Record

BLIND_BITS = 40
PSI_BUCKET_LOAD = 32
PSI_MAX_DEGREE = 64

_SMALL_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53)


def _rand_below(rng: np.random.Generator, bound: int) -> int:
    # 64 slack bits make the modular bias negligible next to the MR error
    nbytes = (bound.bit_length() + 64 + 7) // 8
    return int.from_bytes(rng.bytes(nbytes), "big") % bound


def _is_probable_prime(n: int, rng: np.random.Generator, rounds: int = 30) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = 2 + _rand_below(rng, n - 3)
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _gen_prime(bits: int, rng: np.random.Generator) -> int:
    while True:
        cand = int.from_bytes(rng.bytes((bits + 7) // 8), "big")
        cand &= (1 << bits) - 1
        # top two bits set keeps the product at full length
        cand |= (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        if _is_probable_prime(cand, rng):
            return cand


class PaillierPublicKey:
    """Modulus plus every operation that needs no secret."""

    def __init__(self, n: int):
        self.n = n
        self.n2 = n * n
        self.half = n // 2

    def __eq__(self, other) -> bool:
        return isinstance(other, PaillierPublicKey) and other.n == self.n

    def encode(self, m: int) -> int:
        return m % self.n

    def decode(self, m: int) -> int:
        return m - self.n if m > self.half else m

    def encrypt(self, m: int, rng: np.random.Generator) -> int:
        r = 1 + _rand_below(rng, self.n - 1)
        return (1 + self.encode(m) * self.n) * pow(r, self.n, self.n2) % self.n2

    def add(self, c1: int, c2: int) -> int:
        return c1 * c2 % self.n2

    def add_plain(self, c: int, m: int) -> int:
        return c * (1 + self.encode(m) * self.n) % self.n2

    def mul_plain(self, c: int, k: int) -> int:
        return pow(c, self.encode(k), self.n2)

    def rerandomize(self, c: int, rng: np.random.Generator) -> int:
        r = 1 + _rand_below(rng, self.n - 1)
        return c * pow(r, self.n, self.n2) % self.n2


class PaillierPrivateKey:
    """Factorization of n; decrypts by CRT over p^2 and q^2."""

    def __init__(self, public: PaillierPublicKey, p: int, q: int):
        if p * q != public.n:
            raise ValueError("key mismatch")
        self.public = public
        self.p, self.q = p, q
        self.p2, self.q2 = p * p, q * q
        self.q_inv = pow(q, -1, p)
        g = 1 + public.n
        self.hp = pow(self._residue(g, p, self.p2), -1, p)
        self.hq = pow(self._residue(g, q, self.q2), -1, q)

    @staticmethod
    def _residue(c: int, prime: int, prime2: int) -> int:
        return (pow(c, prime - 1, prime2) - 1) // prime % prime

    def decrypt_raw(self, c: int) -> int:
        mp = self._residue(c, self.p, self.p2) * self.hp % self.p
        mq = self._residue(c, self.q, self.q2) * self.hq % self.q
        return mq + self.q * ((mp - mq) * self.q_inv % self.p)

    def decrypt(self, c: int) -> int:
        return self.public.decode(self.decrypt_raw(c))


def generate_keypair(bits: int = 1024, rng: np.random.Generator | None = None):
    if bits < 512:
        raise ValueError("modulus below 512 bits")
    rng = np.random.default_rng() if rng is None else rng
    while True:
        p = _gen_prime(bits // 2, rng)
        q = _gen_prime(bits // 2, rng)
        if p == q:
            continue
        n = p * q
        if math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        public = PaillierPublicKey(n)
        return public, PaillierPrivateKey(public, p, q)


# ---------------------------------------------------------------------------
# encrypted record units and the blinded distance


@dataclass
class EncRecord:
    """One party's record, encrypted for comparison by the other party."""

    sq: list[tuple[int, int]]  # (E(x), E(x^2)) per metric coordinate
    bits: list[int]  # E(b) per payload bit, low bit first


def _metric_coords(rule: MatchRule, r: Record) -> list[int]:
    coords = [rule.key_coord(r), r.vtag]
    if rule.kind == "euclid":
        coords += [r.lat_e6, r.lon_e6]
    return coords


def encrypt_record(
    public: PaillierPublicKey, rec: Record, rule: MatchRule, rng: np.random.Generator
) -> EncRecord:
    if rec.variant != rule.variant:
        raise ValueError("record variant does not fit the rule")
    sq = [(public.encrypt(x, rng), public.encrypt(x * x, rng)) for x in _metric_coords(rule, rec)]
    bits = []
    if rule.kind == "hamming":
        bits = [public.encrypt(rec.bits >> i & 1, rng) for i in range(rec.nbits)]
    return EncRecord(sq, bits)


def blinded_distance(
    public: PaillierPublicKey,
    enc: EncRecord,
    rec: Record,
    rule: MatchRule,
    rng: np.random.Generator,
) -> tuple[int, int]:
    """Fold the encrypted distance to rec and blind it.

    Returns (ciphertext, blind) where the ciphertext decrypts to
    distance + blind. Mirrors the plaintext accumulation term for term.
    """
    if rec.variant != rule.variant:
        raise ValueError("record variant does not fit the rule")
    own = _metric_coords(rule, rec)
    if len(own) != len(enc.sq):
        raise ValueError("unit count mismatch")
    blind = _rand_below(rng, 1 << BLIND_BITS)
    acc = public.encrypt(blind, rng)
    for (ex, ex2), y in zip(enc.sq, own):
        # (x - y)^2 = x^2 - 2xy + y^2
        acc = public.add(acc, ex2)
        acc = public.add(acc, public.mul_plain(ex, -2 * y))
        acc = public.add_plain(acc, y * y)
    if rule.kind == "hamming":
        if len(enc.bits) != rec.nbits:
            raise ValueError("bit count mismatch")
        for i, eb in enumerate(enc.bits):
            if rec.bits >> i & 1:
                acc = public.add(acc, public.mul_plain(eb, -1))
                acc = public.add_plain(acc, 1)
            else:
                acc = public.add(acc, eb)
    return public.rerandomize(acc, rng), blind


class ComparisonOracle:
    """One-bit verdicts on blinded values; counts how often it is asked."""

    def __init__(self):
        self.queries = 0

    def le(self, value: int, bound: int) -> bool:
        raise NotImplementedError


class TrustedSimulator(ComparisonOracle):
    """Stand-in for a generic two-party comparison circuit.

    Both sides hand their private scalar to this object and learn only the
    bit. Swapping in a real garbled-circuit backend only has to honor le().
    """

    def le(self, value: int, bound: int) -> bool:
        self.queries += 1
        return value <= bound


def secure_match_pair(
    private: PaillierPrivateKey,
    enc: EncRecord,
    rec: Record,
    rule: MatchRule,
    rng: np.random.Generator,
    oracle: ComparisonOracle,
) -> bool:
    """Full comparison round for one candidate pair.

    The key holder contributed enc; the other side holds rec and the blind;
    neither learns the distance, only the verdict.
    """
    cipher, blind = blinded_distance(private.public, enc, rec, rule, rng)
    value = private.decrypt(cipher)
    return oracle.le(value, blind + rule.threshold)


# ---------------------------------------------------------------------------
# encrypted-polynomial set intersection


def _bucket_of(key: int, nbuckets: int) -> int:
    h = sha256(b"psi:" + key.to_bytes(16, "big", signed=False)).digest()
    return int.from_bytes(h[:8], "big") % nbuckets


def _poly_mul_root(coeffs: list[int], root: int, n: int) -> list[int]:
    # multiply polynomial by (x - root)
    out = [0] * (len(coeffs) + 1)
    for i, c in enumerate(coeffs):
        out[i] = (out[i] - c * root) % n
        out[i + 1] = (out[i + 1] + c) % n
    return out


@dataclass
class PsiQuery:
    """Alice's half of an intersection: encrypted polynomials per bucket."""

    nbuckets: int
    coeffs: list[list[int]]  # per bucket, constant term first

    @property
    def cipher_count(self) -> int:
        return sum(len(c) for c in self.coeffs)


@dataclass
class PsiResponse:
    responses: list[int] = field(default_factory=list)


def psi_prepare(
    public: PaillierPublicKey, keys: list[int], rng: np.random.Generator
) -> PsiQuery:
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate keys")
    nbuckets = max(1, -(-len(keys) // PSI_BUCKET_LOAD))
    buckets: list[list[int]] = [[] for _ in range(nbuckets)]
    for k in keys:
        buckets[_bucket_of(k, nbuckets)].append(k)
    enc = []
    for roots in buckets:
        if len(roots) > PSI_MAX_DEGREE:
            raise ValueError(f"bucket load {len(roots)} exceeds {PSI_MAX_DEGREE}")
        coeffs = [1]
        for r in roots:
            coeffs = _poly_mul_root(coeffs, r, public.n)
        enc.append([public.encrypt(c, rng) for c in coeffs])
    return PsiQuery(nbuckets, enc)


def psi_respond(
    public: PaillierPublicKey,
    query: PsiQuery,
    keys: list[int],
    rng: np.random.Generator,
) -> PsiResponse:
    out = []
    for b in keys:
        coeffs = query.coeffs[_bucket_of(b, query.nbuckets)]
        # Horner under encryption, highest coefficient first
        acc = coeffs[-1]
        for c in reversed(coeffs[:-1]):
            acc = public.add(public.mul_plain(acc, b), c)
        r = 1 + _rand_below(rng, public.n - 1)
        masked = public.add_plain(public.mul_plain(acc, r), b)
        out.append(public.rerandomize(masked, rng))
    order = rng.permutation(len(out))
    return PsiResponse([out[i] for i in order])


def psi_extract(
    private: PaillierPrivateKey, response: PsiResponse, keys: list[int]
) -> set[int]:
    mine = set(keys)
    return {v for c in response.responses if (v := private.decrypt_raw(c)) in mine}


def psi_intersect(
    private: PaillierPrivateKey,
    keys_a: list[int],
    keys_b: list[int],
    rng: np.random.Generator,
) -> set[int]:
    """End-to-end intersection; the key holder contributes keys_a."""
    query = psi_prepare(private.public, keys_a, rng)
    response = psi_respond(private.public, query, keys_b, rng)
    return psi_extract(private, response, keys_a)


# ---------------------------------------------------------------------------
# neighborhood expansion for similarity-as-intersection


def hamming_ball_size(nbits: int, radius: int) -> int:
    return sum(math.comb(nbits, i) for i in range(radius + 1))


def disk_lattice_size(radius: int) -> int:
    # integer points with x^2 + y^2 <= radius^2
    return sum(2 * math.isqrt(radius * radius - x * x) + 1 for x in range(-radius, radius + 1))


def expand_hamming_ball(key: int, nbits: int, radius: int) -> list[int]:
    """All values within the given Hamming radius, the key itself first."""
    from itertools import combinations

    out = [key]
    positions = range(nbits)
    for r in range(1, radius + 1):
        for flips in combinations(positions, r):
            mask = 0
            for pos in flips:
                mask |= 1 << pos
            out.append(key ^ mask)
    return out


def psix_hamming_join(
    private: PaillierPrivateKey,
    keys_a: list[int],
    keys_b: list[int],
    nbits: int,
    radius: int,
    rng: np.random.Generator,
) -> set[tuple[int, int]]:
    """Pairs (a, b) with hamming(a, b) <= radius, via expansion + intersection.

    The expansion factor is hamming_ball_size(nbits, radius), so this only
    makes sense when that figure is affordable; callers for wide payloads
    should budget with the ball size first.
    """
    origins: dict[int, list[int]] = {}
    for a in keys_a:
        for e in expand_hamming_ball(a, nbits, radius):
            origins.setdefault(e, []).append(a)
    expanded = list(origins)
    query = psi_prepare(private.public, expanded, rng)
    response = psi_respond(private.public, query, keys_b, rng)
    hits = psi_extract(private, response, expanded)
    return {(a, e) for e in hits for a in origins[e]}
