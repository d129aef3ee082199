"""zCDP composition for Gaussian and multi-Gaussian releases.

A release with sensitivity D and noise scale s is rho-zCDP with
rho = D^2 / (2 s^2); rho adds up over a sequence, and
eps = rho + 2 sqrt(rho log(1/delta)) converts the total to (eps, delta)-DP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

SUPPORTED = ("analytic-gaussian", "multi-gaussian", "gaussian")


class UnsupportedMechanismError(ValueError):
    """The mechanism has no zCDP guarantee of the form D^2 / (2 s^2)."""


def entry_rho(delta_t: float, sigma_t: float) -> float:
    return delta_t * delta_t / (2.0 * sigma_t * sigma_t)


@dataclass(frozen=True)
class CompositionLedger:
    """Immutable record of composed releases.

    entries holds (sensitivity, sigma) pairs; rho_total is their summed rho.
    """

    entries: Tuple[Tuple[float, float], ...] = ()
    rho_total: float = 0.0

    def __post_init__(self):
        for d, s in self.entries:
            if not (d > 0 and s > 0):
                raise ValueError(f"entries need positive sensitivity and sigma, got ({d}, {s})")
        expected = math.fsum(entry_rho(d, s) for d, s in self.entries)
        if abs(self.rho_total - expected) > 1e-12 * max(1.0, expected):
            raise ValueError(f"rho_total {self.rho_total} does not match entries ({expected})")

    @classmethod
    def from_entries(cls, entries: Iterable[Tuple[float, float]]) -> "CompositionLedger":
        ledger = cls()
        for d, s in entries:
            ledger = ledger_add(ledger, d, s)
        return ledger

    def __len__(self) -> int:
        return len(self.entries)


def ledger_add(ledger: CompositionLedger, delta_t: float, sigma_t: float,
               mechanism: Optional[str] = None) -> CompositionLedger:
    """New ledger with one more release appended.

    Raises:
      ValueError: nonpositive or non-finite sensitivity or sigma.
      UnsupportedMechanismError: mechanism is given and has no zCDP bound
        (the quasi-Gaussian mixture).
    """
    if mechanism is not None and mechanism not in SUPPORTED:
        raise UnsupportedMechanismError(
            f"{mechanism!r} has no zCDP guarantee; only {SUPPORTED} can be composed")
    delta_t, sigma_t = float(delta_t), float(sigma_t)
    if not (math.isfinite(delta_t) and math.isfinite(sigma_t) and delta_t > 0 and sigma_t > 0):
        raise ValueError(f"sensitivity and sigma must be positive and finite, got ({delta_t}, {sigma_t})")
    entries = ledger.entries + ((delta_t, sigma_t),)
    # fsum over all entries keeps rho_total independent of insertion order.
    rho = math.fsum(entry_rho(d, s) for d, s in entries)
    return CompositionLedger(entries, rho)


def merge(a: CompositionLedger, b: CompositionLedger) -> CompositionLedger:
    entries = a.entries + b.entries
    return CompositionLedger(entries, math.fsum(entry_rho(d, s) for d, s in entries))


def rho_to_eps(rho: float, delta_tot: float) -> float:
    if not 0 < delta_tot < 1:
        raise ValueError(f"delta_tot must lie in (0, 1), got {delta_tot}")
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta_tot))


def ledger_to_dp(ledger: CompositionLedger, delta_tot: float) -> float:
    """eps_tot such that the composition is (eps_tot, delta_tot)-DP."""
    return rho_to_eps(ledger.rho_total, delta_tot)
