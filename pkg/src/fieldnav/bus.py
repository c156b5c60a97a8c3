"""Deterministic tick-based pub/sub bus.

Mirrors an asynchronous node graph with a fixed one-tick delivery latency:
a message published at tick t becomes visible to polls at tick t+1. Every
subscriber has an independent cursor per topic, so fan-out is exact FIFO
replay for each consumer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


class UnknownTopicError(KeyError):
    pass


class PayloadTypeError(TypeError):
    pass


@dataclass(frozen=True)
class BusMessage:
    topic: str
    payload: Any
    tick: int
    seq: int


@dataclass
class _TopicState:
    payload_type: type | None
    messages: list[BusMessage] = field(default_factory=list)
    next_seq: int = 0


class Bus:
    """Single-process message bus with deterministic one-tick latency."""

    def __init__(self):
        self._topics: dict[str, _TopicState] = {}
        self._cursors: dict[tuple[str, str], int] = {}
        self.tick = 0

    def register(self, topic: str, payload_type: type | None = None) -> None:
        if topic in self._topics:
            raise ValueError(f"topic {topic!r} already registered")
        self._topics[topic] = _TopicState(payload_type)

    def topics(self) -> list[str]:
        return sorted(self._topics)

    def publish(self, topic: str, payload: Any) -> BusMessage:
        state = self._topics.get(topic)
        if state is None:
            raise UnknownTopicError(topic)
        if state.payload_type is not None and not isinstance(payload, state.payload_type):
            raise PayloadTypeError(
                f"topic {topic!r} expects {state.payload_type.__name__}, "
                f"got {type(payload).__name__}")
        msg = BusMessage(topic=topic, payload=payload, tick=self.tick,
                         seq=state.next_seq)
        state.next_seq += 1
        state.messages.append(msg)
        return msg

    def poll(self, topic: str, subscriber: str) -> list[BusMessage]:
        """All not-yet-consumed messages published before the current tick."""
        state = self._topics.get(topic)
        if state is None:
            raise UnknownTopicError(topic)
        key = (topic, subscriber)
        start = self._cursors.get(key, 0)
        msgs = state.messages
        end = start
        while end < len(msgs) and msgs[end].tick < self.tick:
            end += 1
        self._cursors[key] = end
        return msgs[start:end]

    def latest(self, topic: str, subscriber: str) -> BusMessage | None:
        """Convenience: consume pending messages, return the newest (or None)."""
        msgs = self.poll(topic, subscriber)
        return msgs[-1] if msgs else None

    def advance(self) -> None:
        self.tick += 1

    def prune(self, keep_ticks: int = 8) -> None:
        """Drop delivered messages older than keep_ticks (memory hygiene).

        Safe only when every subscriber's cursor has passed the dropped range,
        which holds for the mission loop where all nodes poll every tick.
        """
        horizon = self.tick - keep_ticks
        for topic, state in self._topics.items():
            msgs = state.messages
            drop = 0
            while drop < len(msgs) and msgs[drop].tick < horizon:
                drop += 1
            if drop == 0:
                continue
            min_cursor = min((c for (t, _), c in self._cursors.items() if t == topic),
                             default=0)
            drop = min(drop, min_cursor)
            if drop:
                state.messages = msgs[drop:]
                for key in list(self._cursors):
                    if key[0] == topic:
                        self._cursors[key] -= drop
