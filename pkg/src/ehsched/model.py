"""Problem primitives: harvest/channel Markov chains, power-rate set, energy grid.

All energies are in millijoules, powers in milliwatts, times in seconds.
Power levels are converted to per-slot energy drains (mW * slot seconds = mJ)
at construction so that scheduling arithmetic happens in one unit.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12

MODEL_SCHEMA_VERSION = 1


def _as_matrix(rows: Sequence[Sequence[float]], name: str) -> np.ndarray:
    m = np.asarray(rows, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if np.any(m < 0):
        raise ValueError(f"{name} has negative entries")
    bad = np.abs(m.sum(axis=1) - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        raise ValueError(f"{name} rows {np.flatnonzero(bad).tolist()} do not sum to 1")
    return m


def _stationary_distribution(p: np.ndarray) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic matrix, or raise."""
    s = p.shape[0]
    a = p.T - np.eye(s)
    # null space of (P^T - I); dimension > 1 means no unique distribution
    _, sv, vt = np.linalg.svd(a)
    tol = max(s, 10) * np.finfo(float).eps * (sv[0] if sv.size else 1.0)
    null_dim = int(np.sum(sv <= tol))
    if null_dim != 1:
        raise ValueError(
            "chain has no unique stationary distribution "
            f"(null space dimension {null_dim}; reducible transition structure)"
        )
    pi = vt[-1]
    pi = np.abs(pi)
    return pi / pi.sum()


class _MatrixPowerCache:
    """Lazily computed powers of a transition matrix, safe for shared readers."""

    def __init__(self, p: np.ndarray):
        self._p = p
        self._powers = {0: np.eye(p.shape[0]), 1: p}
        self._lock = threading.Lock()

    def power(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError("matrix power exponent must be >= 0")
        got = self._powers.get(k)
        if got is not None:
            return got
        with self._lock:
            kmax = max(self._powers)
            acc = self._powers[kmax]
            for i in range(kmax + 1, k + 1):
                acc = acc @ self._p
                self._powers[i] = acc
        return self._powers[k]


@dataclass(frozen=True)
class HarvestModel:
    """First-order Markov chain over per-slot harvest energies (mJ)."""

    states: tuple[float, ...]
    transitions: np.ndarray
    slot_s: float = 1.0
    _cache: _MatrixPowerCache = field(init=False, repr=False, compare=False)

    def __init__(self, states: Sequence[float], transitions: Sequence[Sequence[float]],
                 slot_s: float = 1.0):
        states = tuple(float(h) for h in states)
        if any(h < 0 for h in states):
            raise ValueError("harvest states must be nonnegative")
        if any(b <= a for a, b in zip(states, states[1:])):
            raise ValueError("harvest states must be strictly increasing")
        q = _as_matrix(transitions, "harvest transition matrix")
        if q.shape[0] != len(states):
            raise ValueError("transition matrix size does not match state count")
        if slot_s <= 0:
            raise ValueError("slot duration must be positive")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transitions", q)
        object.__setattr__(self, "slot_s", float(slot_s))
        object.__setattr__(self, "_cache", _MatrixPowerCache(q))

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_array(self) -> np.ndarray:
        return np.asarray(self.states, dtype=float)

    def transition_power(self, k: int) -> np.ndarray:
        return self._cache.power(k)

    def conditional_mean(self, current_state: int, lookahead: int) -> float:
        """E[harvest arriving `lookahead` slots ahead | current state]."""
        if lookahead < 1:
            raise ValueError("lookahead must be >= 1")
        row = self.transition_power(lookahead)[current_state]
        return float(row @ self.state_array())

    def stationary(self) -> np.ndarray:
        return _stationary_distribution(self.transitions)

    def stationary_mean(self) -> float:
        """Long-run mean harvest per slot (mJ)."""
        return float(self.stationary() @ self.state_array())

    def snapped_to(self, grid: "EnergyGrid") -> tuple["HarvestModel", float]:
        """Round states to the grid; returns (new model, max abs rounding error)."""
        snapped = [grid.snap(h) for h in self.states]
        err = max(abs(a - b) for a, b in zip(snapped, self.states))
        if any(b <= a for a, b in zip(snapped, snapped[1:])):
            raise ValueError("snapping harvest states to the grid merged distinct states; "
                             "use a finer quantum")
        return HarvestModel(snapped, self.transitions, self.slot_s), err


@dataclass(frozen=True)
class ChannelModel:
    """First-order Markov chain over channel power gains (dimensionless)."""

    gains: tuple[float, ...]
    transitions: np.ndarray
    _cache: _MatrixPowerCache = field(init=False, repr=False, compare=False)

    def __init__(self, gains: Sequence[float], transitions: Sequence[Sequence[float]]):
        gains = tuple(float(g) for g in gains)
        if any(g <= 0 for g in gains):
            raise ValueError("channel gains must be positive")
        if any(b <= a for a, b in zip(gains, gains[1:])):
            raise ValueError("channel gains must be strictly increasing")
        f = _as_matrix(transitions, "channel transition matrix")
        if f.shape[0] != len(gains):
            raise ValueError("transition matrix size does not match gain count")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "transitions", f)
        object.__setattr__(self, "_cache", _MatrixPowerCache(f))

    @classmethod
    def static(cls) -> "ChannelModel":
        """Degenerate single-state unit-gain channel (the non-fading problem)."""
        return cls([1.0], [[1.0]])

    @property
    def n_states(self) -> int:
        return len(self.gains)

    @property
    def is_static(self) -> bool:
        return len(self.gains) == 1 and abs(self.gains[0] - 1.0) < 1e-12

    def gain_array(self) -> np.ndarray:
        return np.asarray(self.gains, dtype=float)

    def transition_power(self, k: int) -> np.ndarray:
        return self._cache.power(k)

    def conditional_mean_inverse_gain(self, current_state: int, lookahead: int) -> float:
        """E[1/gain `lookahead` slots ahead | current state]."""
        if lookahead < 1:
            raise ValueError("lookahead must be >= 1")
        row = self.transition_power(lookahead)[current_state]
        return float(row @ (1.0 / self.gain_array()))

    def stationary(self) -> np.ndarray:
        return _stationary_distribution(self.transitions)


@dataclass(frozen=True)
class ShannonRate:
    """Bits per slot for received power p mW: W*T*log2(1 + p / (N0*W))."""

    bandwidth_hz: float = 40e6
    noise_psd_w_per_hz: float = 0.83e-9
    slot_s: float = 1.0

    @property
    def noise_power_mw(self) -> float:
        return self.noise_psd_w_per_hz * self.bandwidth_hz * 1000.0

    def __call__(self, received_mw: float) -> float:
        if received_mw < 0:
            raise ValueError("received power must be nonnegative")
        return self.bandwidth_hz * self.slot_s * math.log2(1.0 + received_mw / self.noise_power_mw)

    def to_config(self) -> dict:
        return {
            "form": "shannon",
            "bandwidth_hz": self.bandwidth_hz,
            "noise_psd_w_per_hz": self.noise_psd_w_per_hz,
        }


class PowerRateSet:
    """Ordered discrete power levels with the per-slot rate map.

    `rate_fn` maps received power (mW) to bits per full slot and must be
    strictly increasing and strictly concave with rate_fn(0) = 0; both are
    checked numerically over the level set at construction.
    """

    def __init__(self, levels_mw: Sequence[float], rate_fn: Callable[[float], float],
                 slot_s: float = 1.0, includes_idle: bool = False):
        levels = tuple(float(p) for p in levels_mw)
        if not levels:
            raise ValueError("power set needs at least one level")
        if any(p <= 0 for p in levels):
            raise ValueError("power levels must be positive")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("power levels must be strictly increasing")
        if slot_s <= 0:
            raise ValueError("slot duration must be positive")
        if abs(rate_fn(0.0)) > 1e-12:
            raise ValueError("rate function must satisfy g(0) = 0")
        rates = [rate_fn(p) for p in levels]
        if any(r <= 0 for r in rates) or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("rate function must be strictly increasing over the levels")
        eff = [r / p for r, p in zip(rates, levels)]
        for i, (a, b) in enumerate(zip(eff, eff[1:])):
            if b >= a:
                raise ValueError(
                    "throughput per energy must strictly decrease across levels; "
                    f"violated by levels {levels[i]} and {levels[i + 1]} mW"
                )
        self.levels_mw = levels
        self.rate_fn = rate_fn
        self.slot_s = float(slot_s)
        self.includes_idle = bool(includes_idle)
        self.drains = tuple(p * self.slot_s for p in levels)

    @property
    def n_levels(self) -> int:
        return len(self.levels_mw)

    @property
    def rho_min_mw(self) -> float:
        return self.levels_mw[0]

    @property
    def rho_max_mw(self) -> float:
        return self.levels_mw[-1]

    @property
    def drain_min(self) -> float:
        return self.drains[0]

    @property
    def drain_max(self) -> float:
        return self.drains[-1]

    def drain_array(self) -> np.ndarray:
        return np.asarray(self.drains, dtype=float)

    def rate(self, rho_mw: float, gamma: float = 1.0) -> float:
        """Full-slot bits at transmit power rho_mw through gain gamma."""
        return self.rate_fn(gamma * rho_mw)

    def bits_delivered(self, e: float, rho: float, gamma: float = 1.0) -> float:
        """Bits sent in one slot with stored energy e and per-slot drain rho (mJ).

        Allows partial-slot transmission when e < rho; rho = 0 means idle.
        """
        if e < 0:
            raise ValueError("stored energy must be nonnegative")
        if gamma <= 0:
            raise ValueError("channel gain must be positive")
        if rho < 0:
            raise ValueError("drain must be nonnegative")
        if rho == 0:
            return 0.0
        return self.rate_fn(gamma * rho / self.slot_s) * min(e / rho, 1.0)

    def to_config(self) -> dict:
        return {"levels_mW": list(self.levels_mw), "idle": self.includes_idle}


@dataclass(frozen=True)
class EnergyGrid:
    """Uniform energy quantization {0, eps, 2*eps, ..., max_energy}."""

    quantum: float = 1.0
    max_energy: float = 4096.0

    def __post_init__(self):
        if self.quantum <= 0:
            raise ValueError("grid quantum must be positive")
        if self.max_energy < self.quantum:
            raise ValueError("grid ceiling must be at least one quantum")
        if not self.is_on_grid(self.max_energy):
            raise ValueError("grid ceiling must be a multiple of the quantum")

    @property
    def n_points(self) -> int:
        return int(round(self.max_energy / self.quantum)) + 1

    def points(self) -> np.ndarray:
        return np.arange(self.n_points) * self.quantum

    def is_on_grid(self, value: float, tol: float = 1e-9) -> bool:
        ratio = value / self.quantum
        return abs(ratio - round(ratio)) <= tol * max(1.0, abs(ratio))

    def snap(self, value: float) -> float:
        return round(value / self.quantum) * self.quantum

    def index_of(self, e: float) -> int:
        """Nearest grid index, clamped into the grid range."""
        return min(max(int(round(e / self.quantum)), 0), self.n_points - 1)

    def require_on_grid(self, values: Sequence[float], what: str) -> None:
        off = [v for v in values if not self.is_on_grid(v)]
        if off:
            raise ValueError(f"{what} not on the {self.quantum} mJ grid: {off}")


def energy_update(e: float, rho: float, harvest: float, e_max: float = math.inf) -> float:
    """Next stored energy: (e - rho)+ + harvest, clamped to e_max.

    A clamp occurred iff the unclamped value exceeds e_max (callers that track
    clamp events compare against e_max themselves).
    """
    if e < 0 or harvest < 0 or rho < 0:
        raise ValueError("energy, drain and harvest must be nonnegative")
    return min(max(e - rho, 0.0) + harvest, e_max)


def bits_delivered(power_set: PowerRateSet, e: float, rho: float, gamma: float = 1.0) -> float:
    """Module-level alias for PowerRateSet.bits_delivered."""
    return power_set.bits_delivered(e, rho, gamma)


def conditional_mean_harvest(model: HarvestModel, current_state: int, lookahead: int) -> float:
    return model.conditional_mean(current_state, lookahead)


def stationary_mean_harvest(model: HarvestModel) -> float:
    return model.stationary_mean()


@dataclass(frozen=True)
class ModelBundle:
    """Everything that defines one scheduling problem instance."""

    harvest: HarvestModel
    channel: ChannelModel
    power_set: PowerRateSet
    grid: EnergyGrid

    def __post_init__(self):
        if abs(self.harvest.slot_s - self.power_set.slot_s) > 1e-12:
            raise ValueError("harvest model and power set disagree on slot duration")


def save_model_file(path, bundle: ModelBundle) -> None:
    """Write a model definition file (JSON schema, version-stamped)."""
    rate = bundle.power_set.rate_fn
    if not isinstance(rate, ShannonRate):
        raise ValueError("only shannon-form rate functions are serializable")
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "harvest": {
            "states_mJ": list(bundle.harvest.states),
            "transitions": bundle.harvest.transitions.tolist(),
            "slot_s": bundle.harvest.slot_s,
        },
        "channel": {
            "gains": list(bundle.channel.gains),
            "transitions": bundle.channel.transitions.tolist(),
        },
        "power_set": bundle.power_set.to_config(),
        "grid": {"quantum_mJ": bundle.grid.quantum, "max_mJ": bundle.grid.max_energy},
        "rate": rate.to_config(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model_file(path) -> ModelBundle:
    """Read a model definition file written by save_model_file (or by hand)."""
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version: {version!r}")
    try:
        h = doc["harvest"]
        harvest = HarvestModel(h["states_mJ"], h["transitions"], h.get("slot_s", 1.0))
        grid_doc = doc.get("grid", {})
        grid = EnergyGrid(grid_doc.get("quantum_mJ", 1.0), grid_doc.get("max_mJ", 4096.0))
        ch = doc.get("channel")
        channel = ChannelModel(ch["gains"], ch["transitions"]) if ch else ChannelModel.static()
        rate_doc = doc.get("rate", {})
        if rate_doc.get("form", "shannon") != "shannon":
            raise ValueError(f"unknown rate form: {rate_doc.get('form')!r}")
        rate = ShannonRate(
            bandwidth_hz=rate_doc.get("bandwidth_hz", 40e6),
            noise_psd_w_per_hz=rate_doc.get("noise_psd_w_per_hz", 0.83e-9),
            slot_s=harvest.slot_s,
        )
        ps = doc["power_set"]
        power_set = PowerRateSet(ps["levels_mW"], rate, slot_s=harvest.slot_s,
                                 includes_idle=bool(ps.get("idle", False)))
    except KeyError as exc:
        raise ValueError(f"model file missing required key: {exc}") from exc
    return ModelBundle(harvest, channel, power_set, grid)
