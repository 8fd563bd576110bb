"""Lossy, latent broadcast network on a virtual clock.

Every broadcast is copied to each other registered drone independently:
the copy is dropped with its message class's probability, otherwise it is
scheduled for delivery after a sampled latency. :meth:`BroadcastNetwork.step`
hands out everything due, in delivery-time order with ties broken by
sequence number.

Unless reordering is enabled, each sender->recipient link is FIFO: a copy
is never delivered before one sent earlier on the same link.
"""

from __future__ import annotations

import heapq
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .geometry import Pose4

MESSAGE_CLASSES = ("vio", "uwb", "detection", "keyframe", "map")


class NetworkError(RuntimeError):
    pass


# payloads -------------------------------------------------------------------


@dataclass(frozen=True)
class VioSample:
    drone: int
    t: float
    pose: Pose4
    tilt: tuple  # 9 floats, row-major
    odometer: float
    kind = "vio"


@dataclass(frozen=True)
class DistanceSet:
    drone: int
    t: float
    edges: tuple  # DistanceEdge measured by ``drone``
    kind = "uwb"


@dataclass(frozen=True)
class DetectionMsg:
    drone: int
    t: float
    edges: tuple  # DetectionEdge observed by ``drone``
    kind = "detection"


@dataclass(frozen=True)
class KeyframeBroadcast:
    keyframe: Any  # maploc.Keyframe
    kind = "keyframe"


@dataclass(frozen=True)
class MapEdgeBroadcast:
    edge: Any  # measurements.MapEdge
    kind = "map"


_SIZES = {"vio": 64, "uwb": 24, "detection": 80, "keyframe": 1200, "map": 72}


@dataclass(frozen=True)
class Envelope:
    sender: int
    send_time: float
    payload: Any
    size: int = 0

    @property
    def kind(self) -> str:
        return self.payload.kind


def estimate_size(payload) -> int:
    base = _SIZES[payload.kind]
    if payload.kind in ("uwb", "detection"):
        return 16 + base * len(payload.edges)
    if payload.kind == "keyframe":
        return 96 + 8 * int(np.size(payload.keyframe.descriptors))
    return base


@dataclass
class ChannelConfig:
    drop: dict = field(default_factory=lambda: {c: 0.0 for c in MESSAGE_CLASSES})
    latency: float = 0.02
    jitter: float = 0.01  # uniform +/- jitter around latency
    reorder: bool = False
    seed: int = 0

    def __post_init__(self):
        full = {c: 0.0 for c in MESSAGE_CLASSES}
        for k, v in self.drop.items():
            if k not in full:
                raise ValueError(f"unknown message class {k!r}")
            # 1.0 is allowed as the degenerate "link down" case
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"drop probability for {k} must be in [0, 1]")
            full[k] = float(v)
        self.drop = full
        if self.latency < 0 or self.jitter < 0 or self.jitter > self.latency:
            raise ValueError("need 0 <= jitter <= latency")

    @classmethod
    def lossless(cls, seed: int = 0, latency: float = 0.0) -> "ChannelConfig":
        return cls(latency=latency, jitter=0.0, seed=seed)


class BroadcastNetwork:
    def __init__(self, config: ChannelConfig, packet_log=None):
        self.config = config
        self._rng = np.random.default_rng([config.seed, 0x6E6574])
        self._queue: list = []
        self._seq = 0
        self._members: list = []
        self._now = -np.inf
        self._link_last: dict = defaultdict(lambda: -np.inf)
        self.sent = Counter()
        self.delivered = Counter()
        self.dropped = Counter()
        self.bytes_sent = 0
        self._log = packet_log

    def register(self, drone: int) -> None:
        if drone in self._members:
            raise NetworkError(f"drone {drone} already registered")
        self._members.append(drone)
        self._members.sort()

    def unregister(self, drone: int) -> None:
        self._members.remove(drone)

    @property
    def members(self) -> list:
        return list(self._members)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def broadcast(self, env: Envelope) -> int:
        """Queue ``env`` for every other member; returns the number of copies queued."""
        if env.sender not in self._members:
            raise NetworkError(f"unregistered sender {env.sender}")
        if env.send_time < self._now - 1e-12:
            raise NetworkError("cannot send into the past")
        cls = env.kind
        p_drop = self.config.drop[cls]
        size = env.size or estimate_size(env.payload)
        queued = 0
        for rcv in self._members:
            if rcv == env.sender:
                continue
            self.sent[cls] += 1
            self.bytes_sent += size
            if self._rng.random() < p_drop:
                self.dropped[cls] += 1
                self._write("drop", env, rcv, None)
                continue
            lat = self.config.latency
            if self.config.jitter > 0:
                lat += self._rng.uniform(-self.config.jitter, self.config.jitter)
            when = env.send_time + lat
            link = (env.sender, rcv)
            if not self.config.reorder:
                when = max(when, self._link_last[link])
                self._link_last[link] = when
            heapq.heappush(self._queue, (when, self._seq, rcv, env))
            self._seq += 1
            queued += 1
        return queued

    def step(self, until: float) -> dict:
        """Deliver everything due by ``until``: ``{recipient: [Envelope, ...]}``."""
        if until < self._now - 1e-12:
            raise NetworkError(f"time regression: {until} < {self._now}")
        self._now = max(self._now, until)
        out: dict = {}
        while self._queue and self._queue[0][0] <= until + 1e-12:
            when, _, rcv, env = heapq.heappop(self._queue)
            if rcv not in self._members:
                continue
            out.setdefault(rcv, []).append(env)
            self.delivered[env.kind] += 1
            self._write("deliver", env, rcv, when)
        return out

    def stats(self) -> dict:
        return {
            c: {"sent": self.sent[c], "delivered": self.delivered[c], "dropped": self.dropped[c]}
            for c in MESSAGE_CLASSES
        }

    def _write(self, event, env, rcv, when):
        if self._log is None:
            return
        self._log.write(json.dumps({
            "event": event, "class": env.kind, "sender": env.sender, "recipient": rcv,
            "send_time": env.send_time, "deliver_time": when,
        }) + "\n")
