"""Shared vocabulary: packets, flows, titles, stages and time slotting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional


class Direction(enum.IntEnum):
    DOWNSTREAM = 0
    UPSTREAM = 1


class Transport(str, enum.Enum):
    UDP = "UDP"
    TCP = "TCP"


class StageLabel(str, enum.Enum):
    LAUNCH = "Launch"
    IDLE = "Idle"
    PASSIVE = "Passive"
    ACTIVE = "Active"


# Order used for the 3x3 transition matrix and the stage model's class list.
GAMEPLAY_STAGES = (StageLabel.IDLE, StageLabel.PASSIVE, StageLabel.ACTIVE)


class ActivityPattern(str, enum.Enum):
    CONTINUOUS_PLAY = "ContinuousPlay"
    SPECTATE_AND_PLAY = "SpectateAndPlay"
    UNDECIDED = "Undecided"


class GameTitle(str, enum.Enum):
    FORTNITE = "Fortnite"
    GENSHIN_IMPACT = "Genshin Impact"
    BALDURS_GATE_3 = "Baldur's Gate 3"
    R6_SIEGE = "R6: Siege"
    HONKAI_STAR_RAIL = "Honkai: Star Rail"
    DESTINY_2 = "Destiny 2"
    CALL_OF_DUTY = "Call of Duty"
    CYBERPUNK_2077 = "Cyberpunk 2077"
    OVERWATCH_2 = "Overwatch 2"
    ROCKET_LEAGUE = "Rocket League"
    CSGO = "CS:GO/CS2"
    DOTA_2 = "Dota 2"
    HEARTHSTONE = "Hearthstone"
    UNKNOWN = "Unknown"


CATALOG_VERSION = 1


class CatalogEntry(NamedTuple):
    genre: str
    pattern: ActivityPattern
    popularity: float  # share of total playtime, percent


_S = ActivityPattern.SPECTATE_AND_PLAY
_C = ActivityPattern.CONTINUOUS_PLAY

CATALOG: dict[GameTitle, CatalogEntry] = {
    GameTitle.FORTNITE: CatalogEntry("Shooter", _S, 37.80),
    GameTitle.GENSHIN_IMPACT: CatalogEntry("Role-playing", _C, 20.10),
    GameTitle.BALDURS_GATE_3: CatalogEntry("Role-playing", _C, 3.30),
    GameTitle.R6_SIEGE: CatalogEntry("Shooter", _S, 1.24),
    GameTitle.HONKAI_STAR_RAIL: CatalogEntry("Role-playing", _C, 1.16),
    GameTitle.DESTINY_2: CatalogEntry("Shooter", _S, 1.15),
    GameTitle.CALL_OF_DUTY: CatalogEntry("Shooter", _S, 0.97),
    GameTitle.CYBERPUNK_2077: CatalogEntry("Role-playing", _C, 0.84),
    GameTitle.OVERWATCH_2: CatalogEntry("Shooter", _S, 0.74),
    GameTitle.ROCKET_LEAGUE: CatalogEntry("Sports", _S, 0.64),
    GameTitle.CSGO: CatalogEntry("Shooter", _S, 0.61),
    GameTitle.DOTA_2: CatalogEntry("MOBA", _S, 0.55),
    GameTitle.HEARTHSTONE: CatalogEntry("Card", _S, 0.04),
}

CATALOG_TITLES = tuple(CATALOG)

_ALIASES = {
    "r6 siege": GameTitle.R6_SIEGE,
    "rainbow six siege": GameTitle.R6_SIEGE,
    "honkai star rail": GameTitle.HONKAI_STAR_RAIL,
    "baldurs gate 3": GameTitle.BALDURS_GATE_3,
    "baldur's gate": GameTitle.BALDURS_GATE_3,
    "cod": GameTitle.CALL_OF_DUTY,
    "cyberpunk": GameTitle.CYBERPUNK_2077,
    "overwatch": GameTitle.OVERWATCH_2,
    "csgo": GameTitle.CSGO,
    "cs:go": GameTitle.CSGO,
    "cs2": GameTitle.CSGO,
    "dota2": GameTitle.DOTA_2,
}


def _norm_name(name: str) -> str:
    return " ".join(name.strip().lower().split())


def parse_title(name: str) -> GameTitle:
    """Map a free-text title to the catalog; anything unmatched is Unknown."""
    key = _norm_name(name)
    for title in GameTitle:
        if _norm_name(title.value) == key:
            return title
    return _ALIASES.get(key, GameTitle.UNKNOWN)


def catalog_pattern(title: GameTitle) -> ActivityPattern:
    entry = CATALOG.get(title)
    return entry.pattern if entry else ActivityPattern.UNDECIDED


@dataclass(frozen=True, order=True)
class FlowKey:
    src_addr: str
    src_port: int
    dst_addr: str
    dst_port: int
    transport: Transport = Transport.UDP

    def __post_init__(self):
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 65535:
                raise ValueError(f"port out of range: {port}")

    def reversed(self) -> "FlowKey":
        return replace(self, src_addr=self.dst_addr, src_port=self.dst_port,
                       dst_addr=self.src_addr, dst_port=self.src_port)

    def __str__(self) -> str:
        return f"{self.src_addr}:{self.src_port} -> {self.dst_addr}:{self.dst_port} {self.transport.value}"

    @property
    def src(self) -> tuple[str, int]:
        return (self.src_addr, self.src_port)

    @property
    def dst(self) -> tuple[str, int]:
        return (self.dst_addr, self.dst_port)


def canonicalize(flow: FlowKey, server: Optional[tuple[str, int]] = None) -> FlowKey:
    """Return the canonical orientation of a flow: server endpoint as source.

    When the server side is not known yet, the endpoint with the lower port
    is presumed to be the server (ties broken by address). Forward and
    reverse keys always map to the same result.
    """
    if server is not None:
        if flow.src == server:
            return flow
        if flow.dst == server:
            return flow.reversed()
        raise ValueError(f"server endpoint {server} not part of {flow}")
    a, b = flow.src, flow.dst
    if (a[1], a[0]) <= (b[1], b[0]):
        return flow
    return flow.reversed()


def direction_of(flow: FlowKey, canonical: FlowKey) -> Direction:
    """Direction of a packet sent along `flow`, relative to `canonical`."""
    return Direction.DOWNSTREAM if flow.src == canonical.src else Direction.UPSTREAM


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    direction: Direction
    payload_size: int
    flow: FlowKey
    # First transport payload byte, when captured; used for RTP version checks.
    lead_byte: Optional[int] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if self.payload_size < 0:
            raise ValueError("payload_size must be >= 0")


@dataclass(frozen=True)
class SlotIndex:
    index: int
    width: float


def slot_of(timestamp: float, width: float) -> SlotIndex:
    if not width > 0:
        raise ValueError(f"slot width must be positive, got {width}")
    if timestamp < 0:
        raise ValueError(f"timestamp must be >= 0, got {timestamp}")
    return SlotIndex(int(math.floor(timestamp / width)), width)
