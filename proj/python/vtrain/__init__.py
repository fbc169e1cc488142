"""Python access to the verifiable training core."""

import json

from . import _vtrain
from ._vtrain import (
    TAU_FLOOR,
    DomainError,
    Error,
    FormatError,
    IoError,
    ProtocolError,
    TrainConfig,
    epsilon,
    estimate,
    exponent_scale,
    inspect_log,
    merkle_root,
    pack5,
    rev,
    rnd,
    search_threshold,
    sha256,
    tau_ceiling,
    unpack5,
)

DOWN, IGNORE, UP = 0, 1, 2


def direction(x, b_r, tau=TAU_FLOOR):
    return _vtrain.direction(x, b_r, tau)


def train(config, log_path=None, profile=None):
    """Train and return the run report as a dict."""
    return json.loads(_vtrain.train(config, None if log_path is None else str(log_path), profile))


def audit(config, profile, log_path):
    """Replay a run against its log and return the audit report."""
    return json.loads(_vtrain.audit(config, profile, str(log_path)))


def audit_without_corrections(config, profile):
    return json.loads(_vtrain.audit_without_corrections(config, profile))


__all__ = [name for name in dir() if not name.startswith("_")]
