"""Joining vehicle and infrastructure streams into pairs.

The default pairing policy picks, for every vehicle frame, the closest
infrastructure frame captured at or before it (transmission is causal, so
delta_t = t_vehicle - t_infrastructure never goes negative). An
absolute-nearest policy is available for annotation workflows, where a
slightly later infrastructure frame is acceptable and delta_t may dip
below zero.
"""

from __future__ import annotations

import random
from bisect import bisect_right
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction

from .errors import InvariantError
from .frames import Frame

SYNC_THRESHOLD = 0.010
DEFAULT_HISTORY_DEPTH = 2


class SyncClass(Enum):
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"


@dataclass(frozen=True)
class FramePair:
    """A vehicle frame joined with an infrastructure frame.

    inf_history holds earlier infrastructure frames, most recent first,
    and backs the async-k shift and velocity estimation.
    """

    vehicle: Frame
    infrastructure: Frame
    inf_history: tuple[Frame, ...] = ()
    delta_t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "inf_history", tuple(self.inf_history))
        prev = self.infrastructure.timestamp
        for fr in self.inf_history:
            if fr.timestamp >= prev:
                raise InvariantError(
                    f"inf_history timestamps must strictly decrease, "
                    f"got {fr.timestamp} after {prev}"
                )
            prev = fr.timestamp


@dataclass(frozen=True)
class PairingResult:
    """Pairs produced by a join or shift, plus how many inputs were dropped."""

    pairs: tuple[FramePair, ...]
    dropped: int

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def classify_sync(pair: FramePair, threshold: float = SYNC_THRESHOLD) -> SyncClass:
    """Synchronous iff |delta_t| <= threshold (boundary inclusive)."""
    if abs(pair.delta_t) <= threshold:
        return SyncClass.SYNCHRONOUS
    return SyncClass.ASYNCHRONOUS


def pair_streams(
    veh,
    inf,
    max_dt: float,
    history_depth: int = DEFAULT_HISTORY_DEPTH,
    policy: str = "earlier",
) -> PairingResult:
    """Pair each vehicle frame with its closest infrastructure frame.

    policy "earlier" (default) only considers frames at or before the
    vehicle timestamp; "nearest" considers both directions and can yield
    negative delta_t. Vehicle frames with no candidate within max_dt are
    skipped and counted in the result.
    """
    if policy not in ("earlier", "nearest"):
        raise ValueError(f"unknown pairing policy {policy!r}")
    inf = sorted(inf, key=lambda f: f.timestamp)
    veh = sorted(veh, key=lambda f: f.timestamp)
    times = [f.timestamp for f in inf]
    pairs = []
    dropped = 0
    for vf in veh:
        idx = bisect_right(times, vf.timestamp) - 1
        if policy == "nearest" and idx + 1 < len(inf):
            if idx < 0 or abs(times[idx + 1] - vf.timestamp) < abs(
                times[idx] - vf.timestamp
            ):
                idx += 1
        if idx < 0 or abs(vf.timestamp - times[idx]) > max_dt:
            dropped += 1
            continue
        history = tuple(inf[max(0, idx - history_depth) : idx][::-1])
        pairs.append(
            FramePair(vf, inf[idx], history, vf.timestamp - times[idx])
        )
    return PairingResult(tuple(pairs), dropped)


def make_async_k(pairs, k: int) -> PairingResult:
    """Replace each infrastructure frame with its k-th predecessor.

    Pairs whose history is shallower than k are dropped and counted;
    k = 0 returns the input unchanged.
    """
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if k == 0:
        return PairingResult(tuple(pairs), 0)
    shifted = []
    dropped = 0
    for pair in pairs:
        if len(pair.inf_history) < k:
            dropped += 1
            continue
        new_inf = pair.inf_history[k - 1]
        shifted.append(
            replace(
                pair,
                infrastructure=new_inf,
                inf_history=pair.inf_history[k:],
                delta_t=pair.vehicle.timestamp - new_inf.timestamp,
            )
        )
    return PairingResult(tuple(shifted), dropped)


def split(pairs, ratios=(5, 2, 3), seed: int = 0, scene_key=None):
    """Deterministic train/valid/test partition.

    Train and valid take floor(n * r / sum) pairs each; the remainder goes
    to test. With scene_key, whole scenes are assigned in shuffled order
    until each quota is met, which avoids leakage across trajectory frames.
    """
    r_train, r_valid, r_test = ratios
    if min(r_train, r_valid, r_test) <= 0:
        raise ValueError(f"ratios must be positive, got {ratios}")
    pairs = list(pairs)
    n = len(pairs)
    total = Fraction(r_train) + Fraction(r_valid) + Fraction(r_test)
    n_train = int(Fraction(n) * Fraction(r_train) / total)
    n_valid = int(Fraction(n) * Fraction(r_valid) / total)
    rng = random.Random(seed)

    if scene_key is None:
        order = list(range(n))
        rng.shuffle(order)
        train_idx = set(order[:n_train])
        valid_idx = set(order[n_train : n_train + n_valid])
        train = [p for i, p in enumerate(pairs) if i in train_idx]
        valid = [p for i, p in enumerate(pairs) if i in valid_idx]
        test = [
            p
            for i, p in enumerate(pairs)
            if i not in train_idx and i not in valid_idx
        ]
        return train, valid, test

    scenes: dict = {}
    for i, p in enumerate(pairs):
        scenes.setdefault(scene_key(p), []).append(i)
    keys = sorted(scenes, key=repr)
    rng.shuffle(keys)
    buckets = ([], [], [])
    counts = [0, 0, 0]
    quotas = (n_train, n_valid, None)
    part = 0
    for key in keys:
        while part < 2 and counts[part] >= quotas[part]:
            part += 1
        buckets[part].extend(scenes[key])
        counts[part] += len(scenes[key])
    return tuple([pairs[i] for i in sorted(bucket)] for bucket in buckets)
