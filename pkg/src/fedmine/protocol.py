"""Keyed commutative masking and ring-based intersection cardinality.

Each party holds a secret exponent. An element is mapped into the prime-order
group Z_p* (p = 2^61 - 1) via a hash, then masked by exponentiation. Because
(g^a)^b = (g^b)^a, a set masked by every party's key in any order ends at the
same token, so equal elements across parties collide exactly and the token
multisets can be intersected without revealing the elements. Token order is
freshly permuted on every hop so positions carry nothing.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

GROUP_PRIME = (1 << 61) - 1  # Mersenne prime; tokens fit 64-bit
TOKEN_WIDTH_HEX = 16

DEFAULT_TAU = 0.01


class ProtocolError(Exception):
    pass


class ProtocolRejected(ProtocolError):
    """Collision rate above threshold; caller should retry with fresh keys."""


@dataclass(frozen=True)
class PartyKey:
    party: str
    exponent: int = field(repr=False)  # never serialized, never leaves the party


def generate_party_key(party: str, rng: random.Random) -> PartyKey:
    order = GROUP_PRIME - 1
    while True:
        e = rng.randrange(2, order)
        if math.gcd(e, order) == 1:
            return PartyKey(party, e)


def _to_group(value: int) -> int:
    digest = hashlib.sha256(str(value).encode("ascii")).digest()
    return 2 + int.from_bytes(digest[:16], "big") % (GROUP_PRIME - 3)


@dataclass(frozen=True)
class MaskedSet:
    tokens: tuple[int, ...]
    origin_position: int
    permuted: bool = True


def mask_set(values: Iterable[int], key: PartyKey, rng_seed: int,
             origin_position: int = 0) -> MaskedSet:
    """First masking of raw elements: hash into the group, raise to the key."""
    tokens = [pow(_to_group(v), key.exponent, GROUP_PRIME) for v in sorted(set(values))]
    random.Random(rng_seed).shuffle(tokens)
    return MaskedSet(tuple(tokens), origin_position)


def remask(masked: MaskedSet, key: PartyKey, rng_seed: int) -> MaskedSet:
    """Further masking of already-masked tokens; composes commutatively."""
    tokens = [pow(t, key.exponent, GROUP_PRIME) for t in masked.tokens]
    random.Random(rng_seed).shuffle(tokens)
    return MaskedSet(tuple(tokens), masked.origin_position)


@dataclass(frozen=True)
class Message:
    round_no: int
    sender: str
    receiver: str
    payload: MaskedSet


@dataclass(frozen=True)
class ProtocolTranscript:
    messages: tuple[Message, ...]
    count: int
    collision_count: int
    total_tokens: int


@dataclass(frozen=True)
class CollisionVerdict:
    accepted: bool
    exact: bool
    rate: float


def collision_check(transcript: ProtocolTranscript, tau: float = DEFAULT_TAU) -> CollisionVerdict:
    """Accept when the collision fraction stays within tau; zero collisions is exact."""
    if transcript.total_tokens == 0:
        return CollisionVerdict(True, transcript.collision_count == 0, 0.0)
    rate = transcript.collision_count / transcript.total_tokens
    return CollisionVerdict(rate <= tau, transcript.collision_count == 0, rate)


def ring_intersection_count(sets: Mapping[str, Iterable[int]],
                            ring: Sequence[str],
                            seed: int) -> tuple[int, ProtocolTranscript]:
    """Count |intersection of all parties' sets| over the masking ring.

    Every set is masked by its owner, re-masked at each of the n-1 left-neighbor
    hops, then forwarded unchanged along the ring to the evaluator (the first
    ring member), which intersects the token sets. The driver also books the
    ground-truth collision count, which the protocol itself cannot see.
    """
    parties = list(ring)
    n = len(parties)
    if n < 2:
        raise ProtocolError("ring needs at least 2 parties")
    missing = [p for p in parties if p not in sets]
    if missing:
        raise ProtocolError(f"missing sets for parties {missing}")

    rng = random.Random(seed)
    keys = {p: generate_party_key(p, rng) for p in parties}

    state: dict[int, MaskedSet] = {}
    plain: dict[int, frozenset] = {}
    for idx, p in enumerate(parties):
        plain[idx] = frozenset(sets[p])
        state[idx] = mask_set(plain[idx], keys[p], rng.randrange(1 << 62), idx)

    messages: list[Message] = []
    round_no = 0
    for hop in range(1, n):
        round_no += 1
        for idx in range(n):
            sender = parties[(idx + hop - 1) % n]
            receiver = parties[(idx + hop) % n]
            messages.append(Message(round_no, sender, receiver, state[idx]))
            state[idx] = remask(state[idx], keys[receiver], rng.randrange(1 << 62))

    # Fully masked sets continue hop by hop (no re-masking) to the evaluator.
    for idx in range(n):
        holder = (idx + n - 1) % n
        while holder != 0:
            nxt = (holder + 1) % n
            round_no += 1
            messages.append(Message(round_no, parties[holder], parties[nxt], state[idx]))
            holder = nxt

    token_sets = [set(ms.tokens) for ms in state.values()]
    count = len(set.intersection(*token_sets))

    # Ground truth for collision accounting (simulation-side knowledge).
    combined = 1
    order = GROUP_PRIME - 1
    for p in parties:
        combined = (combined * keys[p].exponent) % order
    final_token: dict[int, int] = {}
    groups: dict[int, set[int]] = {}
    for element in set().union(*plain.values()):
        tok = pow(_to_group(element), combined, GROUP_PRIME)
        final_token[element] = tok
        groups.setdefault(tok, set()).add(element)
    collisions = sum(len(g) - 1 for g in groups.values() if len(g) > 1)
    total_tokens = sum(len(s) for s in plain.values())

    transcript = ProtocolTranscript(tuple(messages), count, collisions, total_tokens)
    return count, transcript


def format_transcript(transcript: ProtocolTranscript,
                      verdict: CollisionVerdict | None = None,
                      tau: float = DEFAULT_TAU) -> str:
    """Line-per-message log; final line reports count, collisions, acceptance."""
    if verdict is None:
        verdict = collision_check(transcript, tau)
    lines = []
    for m in transcript.messages:
        tokens = ",".join(format(t, f"0{TOKEN_WIDTH_HEX}x") for t in m.payload.tokens)
        lines.append(f"round={m.round_no} from={m.sender} to={m.receiver} tokens={tokens}")
    lines.append(f"count={transcript.count} collisions={transcript.collision_count} "
                 f"accepted={'true' if verdict.accepted else 'false'}")
    return "\n".join(lines) + "\n"
