"""Required-security policy: the 2x2 matrix over context verdict and action."""

from __future__ import annotations

from enum import Enum

from .context import ContextVerdict


class RequestedAction(Enum):
    DEFAULT_ACCESS = "default"
    ROOT_ACCESS = "root"


class SecurityLevel(Enum):
    # value doubles as the number of factors the level demands
    LOW = 1
    HIGH = 2

    @property
    def required_factors(self) -> int:
        return self.value


def required_security(verdict: ContextVerdict, action: RequestedAction) -> SecurityLevel:
    """High when the context is implausible or root access is requested;
    Low only for a plausible default-access request."""
    if not verdict.plausible or action is RequestedAction.ROOT_ACCESS:
        return SecurityLevel.HIGH
    return SecurityLevel.LOW
