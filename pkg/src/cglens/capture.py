"""PCAP reading/writing and ground-truth label files."""

from __future__ import annotations

import csv
import enum
import ipaddress
import logging
import mmap
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import (
    ActivityPattern,
    CATALOG,
    Direction,
    FlowKey,
    GameTitle,
    PacketRecord,
    StageLabel,
    Transport,
    canonicalize,
    catalog_pattern,
    direction_of,
    parse_title,
)

log = logging.getLogger(__name__)

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_RAW_ALT = 12
LINKTYPE_LINUX_SLL = 113

DEFAULT_SNAPLEN = 64


class CaptureFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class LabelSchemaError(ValueError):
    pass


class LabelValidationError(ValueError):
    pass


class ResolutionClass(str, enum.Enum):
    SD = "SD"
    HD = "HD"
    FHD = "FHD"
    QHD = "QHD"
    UHD = "UHD"


FRAME_RATE_SETTINGS = (30, 60, 120)


@dataclass(frozen=True)
class StreamConfig:
    resolution_class: ResolutionClass = ResolutionClass.FHD
    frame_rate_setting: int = 60
    platform: str = "Windows/app"
    allow_extended_fps: bool = False

    def __post_init__(self):
        object.__setattr__(self, "resolution_class", ResolutionClass(self.resolution_class))
        if not 30 <= self.frame_rate_setting <= 120:
            raise LabelValidationError(f"fps setting out of range: {self.frame_rate_setting}")
        if not self.allow_extended_fps and self.frame_rate_setting not in FRAME_RATE_SETTINGS:
            raise LabelValidationError(
                f"fps setting {self.frame_rate_setting} not in {FRAME_RATE_SETTINGS}")


@dataclass(frozen=True)
class LabeledSession:
    session_id: str
    title: GameTitle
    genre: str
    pattern: ActivityPattern
    stage_marks: tuple[tuple[float, StageLabel], ...]
    config: StreamConfig = field(default_factory=StreamConfig)
    title_text: str = ""

    def __post_init__(self):
        validate_stage_marks(self.stage_marks)
        if self.title is not GameTitle.UNKNOWN and self.pattern is not catalog_pattern(self.title):
            raise LabelValidationError(
                f"pattern {self.pattern.value} inconsistent with {self.title.value}")

    def stage_at(self, t: float) -> StageLabel:
        current = self.stage_marks[0][1]
        for start, stage in self.stage_marks:
            if start > t:
                break
            current = stage
        return current

    def slot_stages(self, n_slots: int, width: float = 1.0) -> list[StageLabel]:
        """Ground-truth stage per slot: the stage covering most of the slot."""
        starts = np.array([m[0] for m in self.stage_marks] + [np.inf])
        out = []
        for i in range(n_slots):
            lo, hi = i * width, (i + 1) * width
            cover = np.clip(np.minimum(starts[1:], hi) - np.maximum(starts[:-1], lo), 0, None)
            out.append(self.stage_marks[int(np.argmax(cover))][1])
        return out


def validate_stage_marks(marks: Sequence[tuple[float, StageLabel]]) -> None:
    if not marks:
        raise LabelValidationError("empty stage timeline")
    if marks[0][1] is not StageLabel.LAUNCH or marks[0][0] != 0:
        raise LabelValidationError("first stage mark must be Launch at t = 0")
    for (t0, _), (t1, s1) in zip(marks, marks[1:]):
        if not t1 > t0:
            raise LabelValidationError(f"stage timestamps not strictly increasing at {t1}")
        if s1 is StageLabel.LAUNCH:
            raise LabelValidationError("Launch may only be the first stage mark")


# --------------------------------------------------------------------------
# Columnar packet tables

@dataclass
class Capture:
    """Columnar packet table. Times are integer microseconds from the epoch.

    `key_index` points into `keys`, which hold flow keys oriented as sent.
    """

    ts_us: np.ndarray
    size: np.ndarray
    key_index: np.ndarray
    keys: list[FlowKey]
    lead: np.ndarray  # first payload byte, -1 when unknown

    def __post_init__(self):
        self.ts_us = np.asarray(self.ts_us, dtype=np.int64)
        self.size = np.asarray(self.size, dtype=np.int64)
        self.key_index = np.asarray(self.key_index, dtype=np.int64)
        self.lead = np.asarray(self.lead, dtype=np.int64)
        n = len(self.ts_us)
        if not (len(self.size) == len(self.key_index) == len(self.lead) == n):
            raise ValueError("column length mismatch")

    def __len__(self) -> int:
        return len(self.ts_us)

    @property
    def ts(self) -> np.ndarray:
        return self.ts_us / 1e6

    @classmethod
    def empty(cls) -> "Capture":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, [], z)

    def records(self) -> Iterator[PacketRecord]:
        canon = [canonicalize(k) for k in self.keys]
        dirs = [direction_of(k, c) for k, c in zip(self.keys, canon)]
        for t, s, k, b in zip(self.ts_us.tolist(), self.size.tolist(),
                              self.key_index.tolist(), self.lead.tolist()):
            yield PacketRecord(t / 1e6, dirs[k], s, canon[k], None if b < 0 else b)

    def select(self, mask: np.ndarray) -> "Capture":
        return Capture(self.ts_us[mask], self.size[mask], self.key_index[mask],
                       list(self.keys), self.lead[mask])

    def until(self, seconds: float) -> "Capture":
        return self.select(self.ts_us < round(seconds * 1e6))

    @classmethod
    def concat(cls, parts: Sequence["Capture"]) -> "Capture":
        """Merge captures into one time-ordered table (stable on ties)."""
        keys: list[FlowKey] = []
        pos: dict[FlowKey, int] = {}
        cols = {"ts_us": [], "size": [], "key_index": [], "lead": []}
        for p in parts:
            remap = np.array([pos.setdefault(k, len(pos)) for k in p.keys] or [0], dtype=np.int64)
            cols["ts_us"].append(p.ts_us)
            cols["size"].append(p.size)
            cols["key_index"].append(remap[p.key_index] if len(p) else p.key_index)
            cols["lead"].append(p.lead)
        keys = sorted(pos, key=pos.get)
        merged = {k: np.concatenate(v) if v else np.zeros(0, np.int64) for k, v in cols.items()}
        order = np.argsort(merged["ts_us"], kind="stable")
        return cls(merged["ts_us"][order], merged["size"][order],
                   merged["key_index"][order], keys, merged["lead"][order])


def records_to_capture(records: Iterable[PacketRecord]) -> Capture:
    """Pack records into a table; keys are re-oriented by direction."""
    ts, size, kidx, lead = [], [], [], []
    pos: dict[FlowKey, int] = {}
    for r in records:
        key = r.flow if r.direction is Direction.DOWNSTREAM else r.flow.reversed()
        ts.append(round(r.timestamp * 1e6))
        size.append(r.payload_size)
        kidx.append(pos.setdefault(key, len(pos)))
        lead.append(-1 if r.lead_byte is None else r.lead_byte)
    return Capture(np.array(ts, np.int64), np.array(size, np.int64),
                   np.array(kidx, np.int64), sorted(pos, key=pos.get), np.array(lead, np.int64))


# --------------------------------------------------------------------------
# PCAP reading

@dataclass(frozen=True)
class _Raw:
    ts_ns: int
    key: FlowKey
    payload: int
    lead: int


def _parse_ip(buf, off: int, end: int):
    """Parse an IP packet at `off`; returns (key, payload_len, payload_off) or None."""
    if end - off < 1:
        return None
    version = buf[off] >> 4
    if version == 4:
        if end - off < 20:
            return None
        ihl = (buf[off] & 0x0F) * 4
        total_len = struct.unpack_from("!H", buf, off + 2)[0]
        frag = struct.unpack_from("!H", buf, off + 6)[0]
        if frag & 0x1FFF:
            return None  # non-first fragment carries no transport header
        proto = buf[off + 9]
        src = str(ipaddress.IPv4Address(buf[off + 12:off + 16]))
        dst = str(ipaddress.IPv4Address(buf[off + 16:off + 20]))
        l4 = off + ihl
        l4_len = total_len - ihl
    elif version == 6:
        if end - off < 40:
            return None
        l4_len = struct.unpack_from("!H", buf, off + 4)[0]
        proto = buf[off + 6]
        src = str(ipaddress.IPv6Address(buf[off + 8:off + 24]))
        dst = str(ipaddress.IPv6Address(buf[off + 24:off + 40]))
        l4 = off + 40
    else:
        return None
    if proto == 17:
        if end - l4 < 8:
            return None
        sport, dport, ulen = struct.unpack_from("!HHH", buf, l4)
        payload = ulen - 8
        key = FlowKey(src, sport, dst, dport, Transport.UDP)
        return key, payload, l4 + 8
    if proto == 6:
        if end - l4 < 13:
            return None
        sport, dport = struct.unpack_from("!HH", buf, l4)
        doff = (buf[l4 + 12] >> 4) * 4
        payload = l4_len - doff
        key = FlowKey(src, sport, dst, dport, Transport.TCP)
        return key, payload, l4 + doff
    return None


def _iter_raw(path: os.PathLike | str) -> Iterator[_Raw]:
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        if size == 0:
            raise CaptureFormatError("empty file, no global header", 0)
        with mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ) as buf:
            yield from _iter_buffer(buf, size)


def _global_header(buf, size: int) -> tuple[str, int, int, int]:
    """(endian, tick_ns, snaplen, linktype) from the PCAP global header."""
    if size < 24:
        raise CaptureFormatError("truncated global header", 0)
    magic_le = struct.unpack_from("<I", buf, 0)[0]
    magic_be = struct.unpack_from(">I", buf, 0)[0]
    if magic_le in (MAGIC_US, MAGIC_NS):
        endian, magic = "<", magic_le
    elif magic_be in (MAGIC_US, MAGIC_NS):
        endian, magic = ">", magic_be
    else:
        raise CaptureFormatError(f"bad magic 0x{magic_le:08x}", 0)
    tick_ns = 1 if magic == MAGIC_NS else 1000
    _, _, _, _, snaplen, linktype = struct.unpack_from(endian + "HHiIII", buf, 4)
    linktype &= 0xFFFF
    if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_RAW_ALT, LINKTYPE_LINUX_SLL):
        raise CaptureFormatError(f"unsupported link type {linktype}", 20)
    return endian, tick_ns, snaplen, linktype


def _records(buf, size: int, endian: str, tick_ns: int, snaplen: int,
             stop_ns: Optional[int] = None) -> Iterator[tuple[int, int, int]]:
    """Yield (timestamp_ns, body_offset, body_end) per record.

    Stops early at the first record stamped at or after `stop_ns`.
    """
    rec = struct.Struct(endian + "IIII")
    off = 24
    while off < size:
        if size - off < 16:
            log.warning("truncated record header at byte %d; stopping", off)
            return
        sec, frac, incl, orig = rec.unpack_from(buf, off)
        if incl > max(snaplen, 262144) or incl > orig and orig != 0:
            raise CaptureFormatError(f"implausible record length {incl}", off)
        body = off + 16
        end = body + incl
        if end > size:
            log.warning("truncated final record at byte %d; stopping", off)
            return
        ts = sec * 1_000_000_000 + frac * tick_ns
        if stop_ns is not None and ts >= stop_ns:
            return
        yield ts, body, end
        off = end


def _iter_buffer(buf, size: int) -> Iterator[_Raw]:
    endian, tick_ns, snaplen, linktype = _global_header(buf, size)
    for ts, body, end in _records(buf, size, endian, tick_ns, snaplen):
        parsed = _parse_link(buf, body, end, linktype)
        if parsed is not None:
            key, payload, poff = parsed
            if payload > 0:
                lead = buf[poff] if poff < end else -1
                yield _Raw(ts, key, payload, lead)


def _parse_link(buf, off: int, end: int, linktype: int):
    if linktype == LINKTYPE_ETHERNET:
        if end - off < 14:
            return None
        etype = struct.unpack_from("!H", buf, off + 12)[0]
        off += 14
        while etype in (0x8100, 0x88A8) and end - off >= 4:
            etype = struct.unpack_from("!H", buf, off + 2)[0]
            off += 4
        if etype not in (0x0800, 0x86DD):
            return None
    elif linktype == LINKTYPE_LINUX_SLL:
        if end - off < 16:
            return None
        etype = struct.unpack_from("!H", buf, off + 14)[0]
        off += 16
        if etype not in (0x0800, 0x86DD):
            return None
    return _parse_ip(buf, off, end)


def read_capture(path: os.PathLike | str, epoch_ns: Optional[int] = None) -> Iterator[PacketRecord]:
    """Stream PacketRecords from a PCAP file in capture order.

    Timestamps are seconds relative to `epoch_ns` (absolute capture time in
    nanoseconds); by default the first packet carrying transport payload.
    Directions use the provisional lower-port-is-server orientation until a
    detector fixes the server side.
    """
    canon_cache: dict[FlowKey, tuple[FlowKey, Direction]] = {}
    for raw in _iter_raw(path):
        if epoch_ns is None:
            epoch_ns = raw.ts_ns
        hit = canon_cache.get(raw.key)
        if hit is None:
            canon = canonicalize(raw.key)
            hit = canon_cache[raw.key] = (canon, direction_of(raw.key, canon))
        t = (raw.ts_ns - epoch_ns) / 1e9
        if t < 0:
            raise CaptureFormatError("packet precedes epoch; capture not time-ordered", -1)
        yield PacketRecord(t, hit[1], raw.payload, hit[0], None if raw.lead < 0 else raw.lead)


def _fast_ipv4(arr: np.ndarray, body: np.ndarray, end: np.ndarray, linktype: int):
    """Vectorised parse of plain IPv4 UDP/TCP frames.

    Returns (handled, ok, src, dst, proto, sport, dport, payload, lead);
    rows not `handled` need the per-record parser, handled rows that are
    not `ok` carry no usable transport payload.
    """
    n = len(body)
    pad = np.concatenate([arr, np.zeros(80, np.uint8)])  # reads past a short frame stay in bounds

    def u8(i):
        return pad[i].astype(np.int64)

    def u16(i):
        return (u8(i) << 8) | u8(i + 1)

    if linktype == LINKTYPE_ETHERNET:
        ip = body + 14
        handled = (end - body >= 14) & (u16(body + 12) == 0x0800)
    elif linktype == LINKTYPE_LINUX_SLL:
        ip = body + 16
        handled = (end - body >= 16) & (u16(body + 14) == 0x0800)
    else:
        ip = body
        handled = np.ones(n, bool)
    handled &= (end - ip >= 1) & ((u8(ip) >> 4) == 4)
    ok = handled & (end - ip >= 20)
    ihl = (u8(ip) & 0x0F) * 4
    total = u16(ip + 2)
    ok &= (u16(ip + 6) & 0x1FFF) == 0
    proto = u8(ip + 9)
    src = (u16(ip + 12) << 16) | u16(ip + 14)
    dst = (u16(ip + 16) << 16) | u16(ip + 18)
    l4 = ip + ihl
    udp = proto == 17
    tcp = proto == 6
    ok &= (udp & (end - l4 >= 8)) | (tcp & (end - l4 >= 13))
    sport, dport = u16(l4), u16(l4 + 2)
    doff = (u8(l4 + 12) >> 4) * 4
    payload = np.where(udp, u16(l4 + 4) - 8, total - ihl - doff)
    poff = np.where(udp, l4 + 8, l4 + doff)
    lead = np.where(poff < end, u8(np.minimum(poff, len(arr) - 1)), -1)
    return handled, ok, src, dst, proto, sport, dport, payload, lead


def _ipv4_str(v: int) -> str:
    return str(ipaddress.IPv4Address(int(v)))


def read_capture_table(path: os.PathLike | str, until_s: Optional[float] = None) -> tuple[Capture, int]:
    """Bulk-read a capture into a Capture table plus its absolute epoch (ns).

    Same packets, keys and order as `read_capture`. The epoch is the first
    packet carrying transport payload; `until_s` drops packets that many
    seconds after it or later, and keeps launch-only reads cheap.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    size = len(buf)
    if size == 0:
        raise CaptureFormatError("empty file, no global header", 0)
    endian, tick_ns, snaplen, linktype = _global_header(buf, size)
    arr = np.frombuffer(buf, np.uint8)
    until_ns = None if until_s is None else int(round(until_s * 1e9))
    stop = None
    if until_ns is not None and size >= 40:
        sec, frac = struct.unpack_from(endian + "II", buf, 24)
        stop = sec * 1_000_000_000 + frac * tick_ns + until_ns
    while True:
        recs = list(_records(buf, size, endian, tick_ns, snaplen, stop))
        ts_ns = np.array([r[0] for r in recs], np.int64)
        body = np.array([r[1] for r in recs], np.int64)
        end = np.array([r[2] for r in recs], np.int64)
        handled, ok, src, dst, proto, sport, dport, payload, lead = _fast_ipv4(arr, body, end, linktype)
        slow_keys: dict[int, FlowKey] = {}
        for i in np.flatnonzero(~handled):
            parsed = _parse_link(buf, int(body[i]), int(end[i]), linktype)
            if parsed is None:
                continue
            key, pl, poff = parsed
            ok[i] = True
            payload[i] = pl
            lead[i] = buf[poff] if poff < end[i] else -1
            slow_keys[int(i)] = key
        rows = np.flatnonzero(ok & (payload > 0))
        epoch = int(ts_ns[rows[0]]) if len(rows) else None
        if stop is None:
            break
        if epoch is None:
            stop = None  # no payload before the provisional cutoff; read on
            continue
        if stop >= epoch + until_ns:
            break
        stop = epoch + until_ns  # leading records carried no payload; extend from the true epoch
    if until_ns is not None and epoch is not None:
        late = np.flatnonzero(ts_ns[rows] - epoch >= until_ns)
        if len(late):
            rows = rows[:late[0]]

    # Distinct keys, numbered in order of first appearance.
    fast = rows[handled[rows]]
    first_seen: list[tuple[int, FlowKey]] = []
    fast_pos = np.zeros(0, np.int64)
    if len(fast):
        cols = np.stack([src[fast], dst[fast], sport[fast], dport[fast], proto[fast]], axis=1)
        uniq, first, inv = np.unique(cols, axis=0, return_index=True, return_inverse=True)
        fast_keys = [FlowKey(_ipv4_str(a), int(sp), _ipv4_str(b), int(dp),
                             Transport.UDP if pr == 17 else Transport.TCP) for a, b, sp, dp, pr in uniq.tolist()]
        first_seen += [(int(fast[f]), k) for f, k in zip(first, fast_keys)]
        fast_pos = inv.reshape(-1)
    for i in rows[~handled[rows]]:
        first_seen.append((int(i), slow_keys[int(i)]))
    pos: dict[FlowKey, int] = {}
    for _, key in sorted(first_seen, key=lambda x: x[0]):
        pos.setdefault(key, len(pos))
    kidx = np.zeros(len(ts_ns), np.int64)
    if len(fast):
        kidx[fast] = np.array([pos[k] for k in fast_keys], np.int64)[fast_pos]
    for i in rows[~handled[rows]]:
        kidx[i] = pos[slow_keys[int(i)]]
    rel_us = (ts_ns[rows] - (epoch or 0)) // 1000
    cap = Capture(rel_us, payload[rows], kidx[rows], sorted(pos, key=pos.get), lead[rows])
    return cap, epoch or 0


# --------------------------------------------------------------------------
# PCAP writing

_ETH = struct.pack("!6s6sH", b"\x02\x00\x00\x00\x00\x02", b"\x02\x00\x00\x00\x00\x01", 0x0800)


def _ipv4_header(src: str, dst: str, proto: int, l4_len: int) -> bytes:
    total = 20 + l4_len
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total & 0xFFFF, 0, 0x4000, 64, proto, 0,
                      ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed)
    s = sum(struct.unpack("!10H", hdr))
    s = (s & 0xFFFF) + (s >> 16)
    s = (s & 0xFFFF) + (s >> 16)
    return hdr[:10] + struct.pack("!H", ~s & 0xFFFF) + hdr[12:]


def write_capture(path: os.PathLike | str, capture: Capture, base_time_ns: int = 1_700_000_000 * 10**9,
                  snaplen: int = DEFAULT_SNAPLEN) -> None:
    """Write a Capture as a microsecond PCAP with Ethernet/IPv4 framing.

    Frames are truncated to `snaplen` bytes; the IP/UDP length fields keep
    the true payload size, which is what the reader reports.
    """
    headers = list(capture.keys)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
        pack_rec = struct.Struct("<IIII").pack
        cache: dict[tuple[int, int], bytes] = {}
        base_us = base_time_ns // 1000
        for t, s, k, b in zip(capture.ts_us.tolist(), capture.size.tolist(),
                              capture.key_index.tolist(), capture.lead.tolist()):
            ck = (k, s)
            hdr = cache.get(ck)
            if hdr is None:
                key = headers[k]
                if key.transport is Transport.UDP:
                    l4 = struct.pack("!HHHH", key.src_port, key.dst_port, (8 + s) & 0xFFFF, 0)
                    proto = 17
                else:
                    l4 = struct.pack("!HHIIBBHHH", key.src_port, key.dst_port, 0, 0, 0x50, 0x18,
                                     65535, 0, 0)
                    proto = 6
                hdr = _ETH + _ipv4_header(key.src_addr, key.dst_addr, proto, len(l4) + s) + l4
                if len(cache) < 65536:
                    cache[ck] = hdr
            lead = bytes([b if b >= 0 else 0])
            frame_len = len(hdr) + s
            data = (hdr + lead + bytes(max(0, snaplen - len(hdr) - 1)))[:min(snaplen, frame_len)]
            abs_us = base_us + t
            fh.write(pack_rec(abs_us // 1_000_000, abs_us % 1_000_000, len(data), frame_len))
            fh.write(data)


# --------------------------------------------------------------------------
# Label CSV files

LABEL_COLUMNS = ("session_id", "title", "genre", "pattern", "platform", "resolution_class",
                 "fps_setting")
TIMELINE_COLUMNS = ("session_id", "stage_start_s", "stage_label")


def timeline_path_for(labels_path: os.PathLike | str) -> Path:
    p = Path(labels_path)
    name = p.name
    stem = name[: -len(".labels.csv")] if name.endswith(".labels.csv") else p.stem
    return p.with_name(stem + ".timeline.csv")


def _parse_pattern(text: str) -> ActivityPattern:
    key = text.strip().lower().replace("-", "").replace("_", "").replace(" ", "")
    for p in ActivityPattern:
        if p.value.lower() == key:
            return p
    raise LabelValidationError(f"unknown activity pattern {text!r}")


def _parse_stage(text: str) -> StageLabel:
    for s in StageLabel:
        if s.value.lower() == text.strip().lower():
            return s
    raise LabelValidationError(f"unknown stage label {text!r}")


def _require_columns(reader: csv.DictReader, required: Sequence[str], path) -> None:
    present = reader.fieldnames or []
    for col in required:
        if col not in present:
            raise LabelSchemaError(f"{path}: missing required column {col!r}")


_warned_titles: set = set()


def read_labels(path: os.PathLike | str, timeline_path: os.PathLike | str | None = None) -> LabeledSession:
    """Read one labeled session from a label CSV and its timeline companion."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, LABEL_COLUMNS, path)
        rows = list(reader)
    if len(rows) != 1:
        raise LabelValidationError(f"{path}: expected exactly one session row, found {len(rows)}")
    row = rows[0]
    sid = row["session_id"]
    title = parse_title(row["title"])
    if title is GameTitle.UNKNOWN and row["title"] not in _warned_titles:
        _warned_titles.add(row["title"])
        log.warning("title %r not in catalog; mapped to Unknown", row["title"])
    pattern_text = (row.get("pattern") or "").strip()
    if title is not GameTitle.UNKNOWN:
        pattern = catalog_pattern(title)
        if pattern_text and _parse_pattern(pattern_text) is not pattern:
            raise LabelValidationError(
                f"{path}: pattern {pattern_text!r} contradicts catalog entry for {title.value}")
        genre = row["genre"] or CATALOG[title].genre
    else:
        pattern = _parse_pattern(pattern_text) if pattern_text else ActivityPattern.UNDECIDED
        genre = row["genre"]
    try:
        fps = int(row["fps_setting"])
        config = StreamConfig(ResolutionClass(row["resolution_class"].strip().upper()), fps,
                              row["platform"])
    except ValueError as exc:
        raise LabelValidationError(f"{path}: bad stream config: {exc}") from exc

    tpath = Path(timeline_path) if timeline_path else timeline_path_for(path)
    marks = []
    with open(tpath, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, TIMELINE_COLUMNS, tpath)
        for r in reader:
            if r["session_id"] != sid:
                continue
            marks.append((float(r["stage_start_s"]), _parse_stage(r["stage_label"])))
    validate_stage_marks(marks)
    return LabeledSession(sid, title, genre, pattern, tuple(marks), config, row["title"])


def write_labels(session: LabeledSession, path: os.PathLike | str,
                 timeline_path: os.PathLike | str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_COLUMNS)
        w.writerow([session.session_id, session.title_text or session.title.value, session.genre,
                    session.pattern.value, session.config.platform,
                    session.config.resolution_class.value, session.config.frame_rate_setting])
    tpath = Path(timeline_path) if timeline_path else timeline_path_for(path)
    with open(tpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TIMELINE_COLUMNS)
        for t, stage in session.stage_marks:
            w.writerow([session.session_id, repr(float(t)), stage.value])
