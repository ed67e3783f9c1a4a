"""Offline (full-future-knowledge) continuous-power oracles.

The static-channel oracle is the stretched-string rule: transmit at the
largest constant power that no energy-causality suffix constraint forbids.
The fading oracle computes per-slot water levels as the largest fixed point
of the causality bound; transmit power is (w - 1/gain)+.

Both dominate every online policy on every realization and are also the
reference the online threshold heuristics track in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .model import PowerRateSet

FIXED_POINT_WIDTH = 1e-10
FIXED_POINT_MAX_ITER = 100


@dataclass(frozen=True)
class OfflineSolution:
    """Continuous-power offline schedule for one realization.

    powers are chronological (index 0 is the first transmitted slot); margins
    hold the battery level left after each slot's consumption (>= 0 means the
    schedule is causal). water_levels is None for the static channel.
    """

    powers: np.ndarray
    total_bits: float
    margins: np.ndarray
    water_levels: np.ndarray | None = None


class WaterLevelResult(NamedTuple):
    level: float
    residual: float
    flagged: bool


def _rate_on_array(power_set: PowerRateSet, p_mw: np.ndarray, gamma=1.0) -> np.ndarray:
    received = np.asarray(gamma, dtype=float) * p_mw
    try:
        out = np.asarray(power_set.rate_fn(received), dtype=float)
        if out.shape == received.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([power_set.rate_fn(float(x)) for x in np.ravel(received)]).reshape(received.shape)


def offline_power_static(e_n: float, future_harvests: Sequence[float]) -> float:
    """Stretched-string power for the current slot.

    future_harvests are the known upcoming arrivals in chronological order
    (first entry lands at the end of the current slot); slots-to-go is
    1 + len(future_harvests).
    """
    if e_n < 0:
        raise ValueError("stored energy must be nonnegative")
    fh = [float(h) for h in future_harvests]
    if any(h < 0 for h in fh):
        raise ValueError("harvests must be nonnegative")
    rho = e_n
    acc = e_n
    for m, h in enumerate(fh, start=1):
        # constant power sustainable through the next m arrivals
        rho = min(rho, acc / (m + 1))
        acc += h
        rho = min(rho, acc / (m + 1))
    return rho


def solve_offline_static(e_start: float, harvests: Sequence[float],
                         power_set: PowerRateSet) -> OfflineSolution:
    """Full stretched-string schedule over N slots (len(harvests) = N - 1)."""
    harvests = [float(h) for h in harvests]
    n_slots = len(harvests) + 1
    powers = np.zeros(n_slots)
    margins = np.zeros(n_slots)
    e = float(e_start)
    for t in range(n_slots):
        rho = offline_power_static(e, harvests[t:])
        powers[t] = rho
        margins[t] = e - rho
        e = e - rho + (harvests[t] if t < n_slots - 1 else 0.0)
    bits = float(_rate_on_array(power_set, powers / power_set.slot_s).sum())
    return OfflineSolution(powers=powers, total_bits=bits, margins=margins)


def _rhs_suffix(w: float, e: float, ig_now: float, fut_h: np.ndarray,
                fut_ig: np.ndarray, m: int) -> float:
    """Causality bound on w using the last m future slots (a = n - m)."""
    head = e + ig_now - max(ig_now - w, 0.0)
    if m == 0:
        return head
    take_h = fut_h[:m].sum()
    take_ig = fut_ig[:m].sum()
    slack = np.maximum(fut_ig[:m] - w, 0.0).sum()
    return (head + take_h + take_ig - slack) / (m + 1)


def _largest_fixed_point(rhs, top: float) -> WaterLevelResult:
    """Largest w in [0, top] with w = rhs(w); rhs is nondecreasing, slope <= 1."""
    phi_top = top - rhs(top)
    if phi_top == 0.0:
        return WaterLevelResult(top, 0.0, False)
    if phi_top < 0.0:
        # bound exceeds the bracket: report the closer end, flagged
        phi_zero = -rhs(0.0)
        best = top if abs(phi_top) <= abs(phi_zero) else 0.0
        return WaterLevelResult(best, abs(best - rhs(best)), True)
    lo, hi = 0.0, top
    for _ in range(FIXED_POINT_MAX_ITER):
        if hi - lo <= FIXED_POINT_WIDTH:
            break
        mid = 0.5 * (lo + hi)
        if mid - rhs(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return WaterLevelResult(lo, abs(lo - rhs(lo)), False)


def expected_water_level(e_n: float, gamma_n: float,
                         mean_harvests: Sequence[float],
                         mean_inv_gains: Sequence[float],
                         exact_min_over_a: bool = False) -> WaterLevelResult:
    """Approximate E[water level] at slots-to-go n = 1 + len(mean_harvests).

    mean_harvests[k-1] and mean_inv_gains[k-1] are the conditional means for
    future slot k (k = 1 is the deadline slot). The default solves the
    all-remaining-slots average form; exact_min_over_a additionally minimizes
    over every suffix constraint so the approximation error is measurable.
    """
    if e_n < 0 or gamma_n <= 0:
        raise ValueError("need e_n >= 0 and gamma_n > 0")
    mh = np.asarray(mean_harvests, dtype=float)
    mig = np.asarray(mean_inv_gains, dtype=float)
    if mh.shape != mig.shape:
        raise ValueError("mean lists must have equal length")
    if np.any(mh < 0) or np.any(mig <= 0):
        raise ValueError("mean harvests must be >= 0 and mean inverse gains > 0")
    n = mh.size + 1
    ig_now = 1.0 / gamma_n
    top = e_n + ig_now
    # suffix helpers consume future slots nearest-first (k = n-1 first)
    fut_h = mh[::-1]
    fut_ig = mig[::-1]
    if exact_min_over_a:
        fps = [_largest_fixed_point(
            lambda w, m=m: _rhs_suffix(w, e_n, ig_now, fut_h, fut_ig, m), top)
            for m in range(n)]
        if any(r.flagged for r in fps):
            flagged = min((r for r in fps), key=lambda r: r.level)
            return WaterLevelResult(flagged.level, flagged.residual, True)
        return min(fps, key=lambda r: r.level)
    return _largest_fixed_point(
        lambda w: _rhs_suffix(w, e_n, ig_now, fut_h, fut_ig, n - 1), top)


def invert_water_level(target_rho: float, gamma_n: float,
                       mean_harvests: Sequence[float],
                       mean_inv_gains: Sequence[float],
                       e_max: float,
                       tol: float = 1e-9,
                       exact_min_over_a: bool = False) -> tuple[float, bool]:
    """Minimal energy whose expected water level reaches target_rho + 1/gamma.

    Bisection over [0, e_max]; returns (e_max, True) when the target is out of
    reach on the grid range. The n = 1 case inverts exactly to target_rho.
    """
    if target_rho < 0:
        raise ValueError("target power must be nonnegative")
    n = len(mean_harvests) + 1
    if n == 1:
        return (target_rho, False) if target_rho <= e_max else (e_max, True)
    want = target_rho + 1.0 / gamma_n

    def level(e: float) -> float:
        return expected_water_level(e, gamma_n, mean_harvests, mean_inv_gains,
                                    exact_min_over_a).level

    if level(0.0) >= want:
        return 0.0, False
    if level(e_max) < want:
        return e_max, True
    lo, hi = 0.0, float(e_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if level(mid) >= want:
            hi = mid
        else:
            lo = mid
    return hi, False


def solve_offline_fading(e_start: float, harvests: Sequence[float],
                         gains: Sequence[float],
                         power_set: PowerRateSet) -> OfflineSolution:
    """Directional-waterfilling schedule for one realized (harvest, gain) path.

    gains are chronological over the N slots; harvests are the N-1 arrivals
    between slots. Water levels are computed slot by slot from the realized
    future via the exact suffix-constraint fixed point.
    """
    harvests = np.asarray(harvests, dtype=float)
    gains = np.asarray(gains, dtype=float)
    if gains.size != harvests.size + 1:
        raise ValueError("need one gain per slot and one harvest between slots")
    n_slots = gains.size
    inv_gains = 1.0 / gains
    powers = np.zeros(n_slots)
    levels = np.zeros(n_slots)
    margins = np.zeros(n_slots)
    e = float(e_start)
    for t in range(n_slots):
        fut_h = harvests[t:]
        fut_ig = inv_gains[t + 1:]
        n = n_slots - t
        top = e + inv_gains[t]
        fps = [_largest_fixed_point(
            lambda w, m=m: _rhs_suffix(w, e, inv_gains[t], fut_h, fut_ig, m), top)
            for m in range(n)]
        w = min(r.level for r in fps)
        rho = min(max(w - inv_gains[t], 0.0), e)
        levels[t] = w
        powers[t] = rho
        margins[t] = e - rho
        e = e - rho + (harvests[t] if t < n_slots - 1 else 0.0)
    bits = float(_rate_on_array(power_set, powers / power_set.slot_s, gamma=gains).sum())
    return OfflineSolution(powers=powers, total_bits=bits, margins=margins,
                           water_levels=levels)


def offline_totals_static(e_start, harvests: np.ndarray,
                          power_set: PowerRateSet) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized stretched-string totals over realizations.

    harvests: (R, N-1) chronological arrivals. Returns (total_bits (R,),
    powers (R, N)). Matches solve_offline_static slot for slot.
    """
    harvests = np.asarray(harvests, dtype=float)
    reps, nm1 = harvests.shape
    n_slots = nm1 + 1
    e = np.broadcast_to(np.asarray(e_start, dtype=float), (reps,)).copy()
    csum = np.zeros((reps, n_slots))
    csum[:, 1:] = np.cumsum(harvests, axis=1)
    powers = np.zeros((reps, n_slots))
    for t in range(n_slots):
        n = n_slots - t
        rho = e.copy()
        if n > 1:
            ms = np.arange(1, n)
            terms = (e[:, None] + csum[:, t + ms] - csum[:, t None][:, 0:1]) / (ms + 1)
            rho = np.minimum(rho, terms.min(axis=1))
        powers[:, t] = rho
        e = e - rho + (harvests[:, t] if t < nm1 else 0.0)
    bits = _rate_on_array(power_set, powers / power_set.slot_s).sum(axis=1)
    return bits, powers


def offline_totals_fading(e_start, harvests: np.ndarray, gains: np.ndarray,
                          power_set: PowerRateSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized fading waterfilling totals over realizations.

    harvests: (R, N-1), gains: (R, N), both chronological. Returns
    (total_bits (R,), powers (R, N), water_levels (R, N)).
    """
    harvests = np.asarray(harvests, dtype=float)
    gains = np.asarray(gains, dtype=float)
    reps, n_slots = gains.shape
    inv_gains = 1.0 / gains
    e = np.broadcast_to(np.asarray(e_start, dtype=float), (reps,)).copy()
    powers = np.zeros((reps, n_slots))
    levels = np.zeros((reps, n_slots))
    for t in range(n_slots):
        n = n_slots - t
        ig_now = inv_gains[:, t]
        fut_h = harvests[:, t:]
        fut_ig = inv_gains[:, t + 1:]
        base = np.zeros((reps, n))
        base[:, 1:] = np.cumsum(fut_h + fut_ig, axis=1)
        denoms = np.arange(1, n + 1)
        top = e + ig_now
        lo = np.zeros(reps)
        hi = top.copy()
        for _ in range(FIXED_POINT_MAX_ITER):
            if float((hi - lo).max(initial=0.0)) <= FIXED_POINT_WIDTH:
                break
            mid = 0.5 * (lo + hi)
            slack = np.zeros((reps, n))
            slack[:, 1:] = np.cumsum(np.maximum(fut_ig - mid[:, None], 0.0), axis=1)
            head = (e + ig_now - np.maximum(ig_now - mid, 0.0))[:, None]
            rhs = (head + base - slack) / denoms
            below = mid - rhs.min(axis=1) <= 0.0
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        w = lo
        rho = np.minimum(np.maximum(w - ig_now, 0.0), e)
        levels[:, t] = w
        powers[:, t] = rho
        e = e - rho + (harvests[:, t] if t < n_slots - 1 else 0.0)
    bits = _rate_on_array(power_set, powers / power_set.slot_s, gamma=gains).sum(axis=1)
    return bits, powers, levels
