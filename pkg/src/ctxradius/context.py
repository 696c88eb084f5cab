"""Situational context of a request: clock and source network checks.

A snapshot of (time, source address) is judged against configured working
hours and trusted networks; both checks are pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, time, timedelta, timezone
from enum import Enum
from ipaddress import IPv4Address, IPv4Network

WEEKDAYS = {
    "monday": 0,
    "tuesday": 1,
    "wednesday": 2,
    "thursday": 3,
    "friday": 4,
    "saturday": 5,
    "sunday": 6,
}


class ConfigError(ValueError):
    pass


class ImplausibilityReason(Enum):
    OUTSIDE_WORKING_HOURS = "OutsideWorkingHours"
    OFF_SITE = "OffSite"


@dataclass(frozen=True)
class ContextConfig:
    """Working-hours window and trusted source networks.

    The window is half-open: an instant exactly at day_start is inside,
    one exactly at day_end is outside.  The timezone is a fixed offset,
    no DST rules.  Overnight windows (end <= start) are rejected.
    """

    working_days: frozenset[int]
    day_start: time
    day_end: time
    utc_offset: timezone
    trusted_networks: tuple[IPv4Network, ...]

    def __post_init__(self) -> None:
        if not self.working_days:
            raise ConfigError("working_days must not be empty")
        if not all(0 <= d <= 6 for d in self.working_days):
            raise ConfigError("working_days entries must be 0 (Monday) to 6 (Sunday)")
        if self.day_start >= self.day_end:
            raise ConfigError("day_start must be strictly before day_end")
        if not self.trusted_networks:
            raise ConfigError("at least one trusted network is required")

    @classmethod
    def from_dict(cls, raw: dict) -> ContextConfig:
        """Build from config-file keys: weekday names, "HH:MM" times,
        "+HH:MM" offset, "a.b.c.d/len" networks."""
        try:
            days = frozenset(WEEKDAYS[d.lower()] for d in raw["working_days"])
        except KeyError as exc:
            raise ConfigError(f"unknown weekday name {exc}") from None
        return cls(
            working_days=days,
            day_start=_parse_hhmm(raw["day_start"]),
            day_end=_parse_hhmm(raw["day_end"]),
            utc_offset=parse_utc_offset(raw["timezone"]),
            trusted_networks=tuple(IPv4Network(n) for n in raw["trusted_networks"]),
        )


@dataclass(frozen=True)
class ContextSnapshot:
    """Immutable facts about one request, taken at handling time."""

    timestamp: datetime
    source_address: IPv4Address
    in_working_hours: bool
    on_site: bool


@dataclass(frozen=True)
class ContextVerdict:
    plausible: bool
    reasons: frozenset[ImplausibilityReason]

    def __post_init__(self) -> None:
        if self.plausible != (not self.reasons):
            raise ValueError("plausible verdicts carry no reasons and vice versa")


def _parse_hhmm(text: str) -> time:
    try:
        hours, minutes = text.split(":")
        return time(int(hours), int(minutes))
    except (ValueError, AttributeError):
        raise ConfigError(f"expected HH:MM, got {text!r}") from None


def parse_utc_offset(text: str) -> timezone:
    """Parse a fixed "+HH:MM" / "-HH:MM" offset."""
    if len(text) != 6 or text[0] not in "+-" or text[3] != ":":
        raise ConfigError(f"expected +HH:MM offset, got {text!r}")
    try:
        delta = timedelta(hours=int(text[1:3]), minutes=int(text[4:6]))
    except ValueError:
        raise ConfigError(f"expected +HH:MM offset, got {text!r}") from None
    return timezone(-delta if text[0] == "-" else delta)


def snapshot_context(source_address: IPv4Address, now: datetime,
                     config: ContextConfig) -> ContextSnapshot:
    """Classify a request instant and source address.

    Aware instants are converted to the configured offset; naive ones are
    taken to be in it already.
    """
    if now.tzinfo is None:
        local = now
    else:
        local = now.astimezone(config.utc_offset)
    in_hours = (
        local.weekday() in config.working_days
        and config.day_start <= local.time() < config.day_end
    )
    on_site = any(source_address in net for net in config.trusted_networks)
    return ContextSnapshot(now, source_address, in_hours, on_site)


def evaluate_plausibility(snapshot: ContextSnapshot) -> ContextVerdict:
    """A situation is plausible iff it is in working hours AND on site."""
    reasons = set()
    if not snapshot.in_working_hours:
        reasons.add(ImplausibilityReason.OUTSIDE_WORKING_HOURS)
    if not snapshot.on_site:
        reasons.add(ImplausibilityReason.OFF_SITE)
    return ContextVerdict(plausible=not reasons, reasons=frozenset(reasons))
