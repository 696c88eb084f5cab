from __future__ import annotations

from datetime import datetime, time, timezone
from ipaddress import IPv4Address, IPv4Network

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctxradius.context import (
    ConfigError,
    ContextConfig,
    ContextSnapshot,
    ContextVerdict,
    ImplausibilityReason,
    evaluate_plausibility,
    parse_utc_offset,
    snapshot_context,
)

UTC = timezone.utc


def office_config(**overrides) -> ContextConfig:
    kwargs = dict(
        working_days=frozenset(range(5)),  # Mon-Fri
        day_start=time(8, 0),
        day_end=time(18, 0),
        utc_offset=UTC,
        trusted_networks=(IPv4Network("10.0.0.0/8"),),
    )
    kwargs.update(overrides)
    return ContextConfig(**kwargs)


# 2026-08-04 is a Tuesday
TUE_10H = datetime(2026, 8, 4, 10, 0, tzinfo=UTC)
TUE_02H = datetime(2026, 8, 4, 2, 0, tzinfo=UTC)


def test_inside_hours_and_network():
    snap = snapshot_context(IPv4Address("10.0.0.5"), TUE_10H, office_config())
    assert snap.in_working_hours and snap.on_site


def test_night_request_out_of_hours():
    snap = snapshot_context(IPv4Address("10.0.0.5"), TUE_02H, office_config())
    assert not snap.in_working_hours


def test_untrusted_source_off_site():
    snap = snapshot_context(IPv4Address("203.0.113.7"), TUE_10H, office_config())
    assert not snap.on_site


def test_weekend_out_of_hours():
    sat = datetime(2026, 8, 8, 10, 0, tzinfo=UTC)
    assert not snapshot_context(IPv4Address("10.0.0.5"), sat, office_config()).in_working_hours


def test_boundary_half_open():
    cfg = office_config()
    at_start = TUE_10H.replace(hour=8, minute=0)
    at_end = TUE_10H.replace(hour=18, minute=0)
    assert snapshot_context(IPv4Address("10.0.0.5"), at_start, cfg).in_working_hours
    assert not snapshot_context(IPv4Address("10.0.0.5"), at_end, cfg).in_working_hours


def test_offset_shifts_local_time():
    # 17:30 UTC is 19:30 at +02:00, past the 18:00 end of day
    cfg = office_config(utc_offset=parse_utc_offset("+02:00"))
    late = datetime(2026, 8, 4, 17, 30, tzinfo=UTC)
    assert not snapshot_context(IPv4Address("10.0.0.5"), late, cfg).in_working_hours
    cfg_utc = office_config()
    assert snapshot_context(IPv4Address("10.0.0.5"), late, cfg_utc).in_working_hours


def test_determinism():
    args = (IPv4Address("10.1.2.3"), TUE_10H, office_config())
    assert snapshot_context(*args) == snapshot_context(*args)


@pytest.mark.parametrize("bad", [
    dict(working_days=frozenset()),
    dict(day_start=time(18, 0), day_end=time(8, 0)),
    dict(day_start=time(9, 0), day_end=time(9, 0)),
    dict(trusted_networks=()),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        office_config(**bad)


def test_from_dict():
    cfg = ContextConfig.from_dict({
        "working_days": ["Monday", "tuesday", "Friday"],
        "day_start": "08:30",
        "day_end": "17:00",
        "timezone": "-05:00",
        "trusted_networks": ["10.0.0.0/8", "192.168.1.0/24"],
    })
    assert cfg.working_days == frozenset({0, 1, 4})
    assert cfg.day_start == time(8, 30)
    assert cfg.utc_offset.utcoffset(None).total_seconds() == -5 * 3600
    assert len(cfg.trusted_networks) == 2


@pytest.mark.parametrize("text", ["utc", "+2:00", "+0200", "+aa:bb"])
def test_bad_offset_rejected(text):
    with pytest.raises(ConfigError):
        parse_utc_offset(text)


@pytest.mark.parametrize("in_hours,on_site,expected_reasons", [
    (True, True, set()),
    (False, True, {ImplausibilityReason.OUTSIDE_WORKING_HOURS}),
    (True, False, {ImplausibilityReason.OFF_SITE}),
    (False, False, {ImplausibilityReason.OUTSIDE_WORKING_HOURS,
                    ImplausibilityReason.OFF_SITE}),
])
def test_plausibility_truth_table(in_hours, on_site, expected_reasons):
    snap = ContextSnapshot(TUE_10H, IPv4Address("10.0.0.5"), in_hours, on_site)
    verdict = evaluate_plausibility(snap)
    assert verdict.reasons == frozenset(expected_reasons)
    assert verdict.plausible == (not expected_reasons)


def test_verdict_consistency_enforced():
    with pytest.raises(ValueError):
        ContextVerdict(plausible=True, reasons=frozenset({ImplausibilityReason.OFF_SITE}))
    with pytest.raises(ValueError):
        ContextVerdict(plausible=False, reasons=frozenset())


@given(st.integers(min_value=0, max_value=2**32 - 1),
       st.integers(min_value=0, max_value=2**32 - 1),
       st.integers(min_value=0, max_value=32))
def test_adding_network_never_revokes_trust(addr_int, extra_net_int, extra_len):
    """Monotonicity: growing trusted_networks cannot turn on_site off."""
    address = IPv4Address(addr_int)
    base = office_config()
    extra = IPv4Network((extra_net_int, extra_len), strict=False)
    grown = office_config(trusted_networks=base.trusted_networks + (extra,))
    before = snapshot_context(address, TUE_10H, base).on_site
    after = snapshot_context(address, TUE_10H, grown).on_site
    assert not before or after
