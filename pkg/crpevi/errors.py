"""Exceptions raised by the crpevi testbed."""

from __future__ import annotations


class CrPeviError(Exception):
    """Base error for the testbed."""


class InvalidMdpError(CrPeviError):
    """Error to indicate an MDP violates its probability or shape invariants."""


class PolicyMismatchError(CrPeviError):
    """Error to indicate a policy does not match the MDP dimensions."""


class DatasetError(CrPeviError):
    """Error to indicate a dataset breaks its ordering or length invariants."""


class DatasetParseError(DatasetError):
    """Error to indicate a malformed dataset or sidecar file."""

    def __init__(self, path: str, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


class AttackSpecError(CrPeviError):
    """Error to indicate an attack cannot be applied to the given data or MDP."""


class MissingTruthError(CrPeviError):
    """Error to indicate corruption accounting was asked for without a sidecar."""


class BackendError(CrPeviError):
    """Error to indicate a function-class backend received invalid input."""


class WeightIterationError(CrPeviError):
    """Error to indicate the weight iteration received bad input or did not stop."""


class SolverError(CrPeviError):
    """Error to indicate the backward induction cannot run on the given input."""


class ConfigError(CrPeviError):
    """Error to indicate a malformed sweep config."""

    def __init__(self, key: str | None, line: int | None, reason: str) -> None:
        where = f"line {line}" if line is not None else "config"
        what = f" key '{key}'" if key else ""
        super().__init__(f"{where}{what}: {reason}")
        self.key = key
        self.line = line
        self.reason = reason


class PlotError(CrPeviError):
    """Error to indicate a results table cannot be plotted."""
