"""Exact finite-horizon solver over the quantized (energy, harvest[, gain]) space.

Backward induction with slots numbered back from the deadline (layer 1 is the
last slot). Decision tables break value ties toward the lower power level.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ChannelModel,
    EnergyGrid,
    HarvestModel,
    ModelBundle,
    PowerRateSet,
    ShannonRate,
)

TABLE_SCHEMA_VERSION = 1

# relative tolerance for classifying per-action value differences as strict
SIGN_TOL = 1e-9


def _action_drains(power_set: PowerRateSet) -> tuple[float, ...]:
    """Per-slot energy drains of the action set, idle (0) first when enabled."""
    base = power_set.drains
    return ((0.0,) + base) if power_set.includes_idle else base


def _action_levels_mw(power_set: PowerRateSet) -> tuple[float, ...]:
    base = power_set.levels_mw
    return ((0.0,) + base) if power_set.includes_idle else base


@dataclass
class ValueTable:
    """Stacked value/decision layers for slots-to-go n = 1..horizon.

    values[n-1, e_idx, h_idx, g_idx] is the maximum expected bits deliverable
    in the remaining n slots; decisions holds the argmax action index into
    `action_drains` (index 0 is idle when the power set enables it).
    """

    bundle: ModelBundle
    horizon: int
    values: np.ndarray
    decisions: np.ndarray
    action_drains: tuple[float, ...]
    action_levels_mw: tuple[float, ...]
    clamped_transitions: int = 0

    @property
    def grid(self) -> EnergyGrid:
        return self.bundle.grid

    @property
    def includes_idle(self) -> bool:
        return self.bundle.power_set.includes_idle

    def layer(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if not 1 <= n <= self.horizon:
            raise ValueError(f"layer {n} outside 1..{self.horizon}")
        return self.values[n - 1], self.decisions[n - 1]

    def value_at(self, n: int, e: float, h_idx: int = 0, g_idx: int = 0) -> float:
        vals, _ = self.layer(n)
        return float(vals[self.grid.index_of(e), h_idx, g_idx])

    def decision_at(self, n: int, e: float, h_idx: int = 0, g_idx: int = 0) -> int:
        _, dec = self.layer(n)
        return int(dec[self.grid.index_of(e), h_idx, g_idx])

    def drain_of(self, action_idx: int) -> float:
        return self.action_drains[action_idx]

    def save(self, path) -> None:
        save_table(path, self)

    def policy(self):
        return table_policy(self)


def _bits_matrix(power_set: PowerRateSet, grid: EnergyGrid, gains) -> np.ndarray:
    """bits[k, u, e]: one-slot bits for action k, gain state u, grid energy e."""
    drains = _action_drains(power_set)
    pts = grid.points()
    out = np.zeros((len(drains), len(gains), grid.n_points))
    for k, d in enumerate(drains):
        if d == 0.0:
            continue
        frac = np.minimum(pts / d, 1.0)
        p_mw = d / power_set.slot_s
        for u, gamma in enumerate(gains):
            out[k, u] = power_set.rate_fn(gamma * p_mw) * frac
    return out


def _next_index_table(power_set: PowerRateSet, harvest: HarvestModel,
                      grid: EnergyGrid) -> tuple[np.ndarray, int]:
    """next_idx[k, j, e]: grid index after action k and arrival of state j.

    Also returns the number of (k, j, e) transitions truncated at the ceiling.
    """
    drains = _action_drains(power_set)
    m = grid.n_points - 1
    d_idx = np.array([int(round(d / grid.quantum)) for d in drains])
    h_idx = np.array([int(round(h / grid.quantum)) for h in harvest.states])
    e_idx = np.arange(grid.n_points)
    raw = np.maximum(e_idx[None, None, :] - d_idx[:, None, None], 0) + h_idx[None, :, None]
    clamped = int(np.sum(raw > m))
    return np.minimum(raw, m).astype(np.int64), clamped


def terminal_layer(power_set: PowerRateSet, grid: EnergyGrid,
                   gamma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Last-slot values and argmax decisions over the grid for one gain.

    Equals the piecewise ramps-and-plateaus closed form of the one-slot value.
    """
    bits = _bits_matrix(power_set, grid, [gamma])[:, 0, :]
    return bits.max(axis=0), bits.argmax(axis=0).astype(np.int16)


def backward_induct(bundle: ModelBundle, horizon: int) -> ValueTable:
    """Solve the horizon-N problem exactly by backward induction."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    power_set, harvest, channel, grid = (
        bundle.power_set, bundle.harvest, bundle.channel, bundle.grid)
    grid.require_on_grid(power_set.drains, "per-slot drains")
    grid.require_on_grid(harvest.states, "harvest states")

    q = harvest.transitions
    f = channel.transitions
    gains = channel.gain_array()
    n_h, n_g, n_e = harvest.n_states, channel.n_states, grid.n_points

    bits = _bits_matrix(power_set, grid, gains)            # (K, Ug, E)
    next_idx, clamped = _next_index_table(power_set, harvest, grid)
    n_actions = bits.shape[0]

    values = np.empty((horizon, n_e, n_h, n_g))
    decisions = np.empty((horizon, n_e, n_h, n_g), dtype=np.int16)

    # layer 1: pure one-slot throughput, independent of the harvest state
    v1 = bits.max(axis=0).T                                # (E, Ug)
    d1 = bits.argmax(axis=0).T.astype(np.int16)
    values[0] = v1[:, None, :]
    decisions[0] = d1[:, None, :]

    per_action = np.empty((n_actions, n_e, n_h, n_g))
    for n in range(2, horizon + 1):
        v_prev = values[n - 2]
        # expectation over the next channel state given the current one
        ev = np.tensordot(v_prev, f, axes=([2], [1]))      # (E, H, Ug)
        for k in range(n_actions):
            succ = ev[next_idx[k], np.arange(n_h)[:, None], :]   # (H_j, E, Ug)
            cont = np.einsum("ij,jeu->eiu", q, succ)
            per_action[k] = bits[k].T[:, None, :] + cont
        values[n - 1] = per_action.max(axis=0)
        decisions[n - 1] = per_action.argmax(axis=0).astype(np.int16)

    return ValueTable(
        bundle=bundle,
        horizon=horizon,
        values=values,
        decisions=decisions,
        action_drains=_action_drains(power_set),
        action_levels_mw=_action_levels_mw(power_set),
        clamped_transitions=clamped,
    )


def _per_action_values(table: ValueTable, n: int) -> np.ndarray:
    """Recompute V_n(e, h, gamma, action) for one layer from the stored table."""
    bundle = table.bundle
    bits = _bits_matrix(bundle.power_set, bundle.grid, bundle.channel.gain_array())
    next_idx, _ = _next_index_table(bundle.power_set, bundle.harvest, bundle.grid)
    n_h = bundle.harvest.n_states
    n_actions = bits.shape[0]
    out = np.empty((n_actions, bundle.grid.n_points, n_h, bundle.channel.n_states))
    if n == 1:
        for k in range(n_actions):
            out[k] = bits[k].T[:, None, :]
        return out
    v_prev = table.values[n - 2]
    ev = np.tensordot(v_prev, bundle.channel.transitions, axes=([2], [1]))
    for k in range(n_actions):
        succ = ev[next_idx[k], np.arange(n_h)[:, None], :]
        out[k] = bits[k].T[:, None, :] + np.einsum("ij,jeu->eiu", bundle.harvest.transitions, succ)
    return out


@dataclass
class StructureReport:
    """Machine check of the solved table's threshold structure.

    Violations are diagnostics, never fatal: sign-switch anomalies can occur
    for some rate/level families and are reported rather than rejected.
    """

    theorem1_ok: bool = True
    theorem1_violations: list = field(default_factory=list)
    threshold_ok: bool = True
    threshold_violations: list = field(default_factory=list)
    assumption1_ok: bool = True
    assumption1_violations: list = field(default_factory=list)
    assumption1_violation_count: int = 0
    lemma_bounds_ok: bool = True
    lemma_bounds_violations: list = field(default_factory=list)
    cells_checked: int = 0

    MAX_RECORDED = 100

    @property
    def all_ok(self) -> bool:
        return (self.theorem1_ok and self.threshold_ok
                and self.assumption1_ok and self.lemma_bounds_ok)

    def to_dict(self) -> dict:
        return {
            "theorem1_ok": self.theorem1_ok,
            "theorem1_violations": self.theorem1_violations,
            "threshold_ok": self.threshold_ok,
            "threshold_violations": self.threshold_violations,
            "assumption1_ok": self.assumption1_ok,
            "assumption1_violations": self.assumption1_violations,
            "assumption1_violation_count": self.assumption1_violation_count,
            "lemma_bounds_ok": self.lemma_bounds_ok,
            "lemma_bounds_violations": self.lemma_bounds_violations,
            "cells_checked": self.cells_checked,
        }


def check_structure(table: ValueTable) -> StructureReport:
    """Verify threshold structure of the decided table; report, never abort.

    Checks: (a) lowest-level decisions below the smallest drain (static channel
    only), (b) decisions nondecreasing in energy, (c) top-level decisions in the
    abundant-energy region, (d) at most one minus-to-plus sign switch between
    any two per-action value curves, (e) the pairwise low/high-energy dominance
    bounds behind (b).
    """
    rep = StructureReport()
    bundle = table.bundle
    grid = bundle.grid
    pts = grid.points()
    drains = np.asarray(table.action_drains)
    drain_vals = drains[table.decisions]                   # decisions as drains
    gains = bundle.channel.gain_array()
    static = bundle.channel.is_static
    rep.cells_checked = int(table.decisions.size)

    d_min = bundle.power_set.drain_min
    d_max = bundle.power_set.drain_max
    nonzero = [k for k, d in enumerate(table.action_drains) if d > 0]

    def record(lst, item):
        if len(lst) < StructureReport.MAX_RECORDED:
            lst.append(item)

    for n in range(1, table.horizon + 1):
        dv = drain_vals[n - 1]                             # (E, H, Ug)

        # (a) Theorem-1 region: 0 < e < rho_min forces the minimum level
        if static:
            low = (pts > 0) & (pts < d_min)
            bad = dv[low] != d_min
            if np.any(bad):
                rep.theorem1_ok = False
                for e_i, h_i, g_i in zip(*np.nonzero(bad)):
                    record(rep.theorem1_violations,
                           (n, int(h_i), int(g_i), float(pts[low][e_i])))

        # (b) decisions nondecreasing in energy
        drops = np.nonzero(np.diff(dv, axis=0) < 0)
        if drops[0].size:
            rep.threshold_ok = False
            for e_i, h_i, g_i in zip(*drops):
                record(rep.threshold_violations,
                       (n, int(h_i), int(g_i), float(pts[e_i + 1])))

        # (c) Lemma-1 region: energy beyond any possible total drain
        region = pts > (n - 1) * d_max + d_max
        if np.any(region):
            bad = dv[region] != d_max
            if np.any(bad):
                rep.lemma_bounds_ok = False
                for e_i, h_i, g_i in zip(*np.nonzero(bad)):
                    record(rep.lemma_bounds_violations,
                           ("lemma1", n, int(h_i), int(g_i), float(pts[region][e_i])))

        # (d)+(e): pairwise per-action comparisons
        pa = _per_action_values(table, n)
        tol = SIGN_TOL * max(1.0, float(np.abs(table.values[n - 1]).max()))
        for a, k_hi in enumerate(nonzero):
            for k_lo in nonzero[:a]:
                diff = pa[k_hi] - pa[k_lo]                 # (E, H, Ug)
                pos_seen = np.maximum.accumulate(diff > tol, axis=0)
                switched = np.zeros_like(pos_seen)
                switched[1:] = pos_seen[:-1]
                viol = switched & (diff < -tol)
                cnt = int(viol.sum())
                if cnt:
                    rep.assumption1_ok = False
                    rep.assumption1_violation_count += cnt
                    for e_i, h_i, g_i in zip(*np.nonzero(viol)):
                        record(rep.assumption1_violations,
                               (n, int(h_i), int(g_i), float(pts[e_i]),
                                float(drains[k_hi]), float(drains[k_lo])))
                # Lemma-2 region: e <= (g(gamma rho')/g(gamma rho)) * drain_hi
                p_hi = table.action_levels_mw[k_hi]
                p_lo = table.action_levels_mw[k_lo]
                for g_i, gamma in enumerate(gains):
                    cut = (bundle.power_set.rate(p_lo, gamma)
                           / bundle.power_set.rate(p_hi, gamma)) * drains[k_hi]
                    region = pts <= cut
                    bad = diff[region, :, g_i] > tol
                    if np.any(bad):
                        rep.lemma_bounds_ok = False
                        for e_i, h_i in zip(*np.nonzero(bad)):
                            record(rep.lemma_bounds_violations,
                                   ("lemma2", n, int(h_i), int(g_i),
                                    float(pts[region][e_i]),
                                    float(drains[k_hi]), float(drains[k_lo])))
    return rep


def table_policy(table: ValueTable):
    """Wrap a solved table as an online policy (see the policies module)."""
    from .policies import TablePolicy

    return TablePolicy(table)


def _bundle_config(bundle: ModelBundle) -> dict:
    rate = bundle.power_set.rate_fn
    if not isinstance(rate, ShannonRate):
        raise ValueError("only shannon-form rate functions are serializable")
    return {
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


def _bundle_from_config(cfg: dict) -> ModelBundle:
    h = cfg["harvest"]
    harvest = HarvestModel(h["states_mJ"], h["transitions"], h["slot_s"])
    channel = ChannelModel(cfg["channel"]["gains"], cfg["channel"]["transitions"])
    rate = ShannonRate(cfg["rate"]["bandwidth_hz"], cfg["rate"]["noise_psd_w_per_hz"],
                       harvest.slot_s)
    ps = cfg["power_set"]
    power_set = PowerRateSet(ps["levels_mW"], rate, slot_s=harvest.slot_s,
                             includes_idle=bool(ps["idle"]))
    grid = EnergyGrid(cfg["grid"]["quantum_mJ"], cfg["grid"]["max_mJ"])
    return ModelBundle(harvest, channel, power_set, grid)


def power_set_hash(bundle: ModelBundle) -> str:
    cfg = _bundle_config(bundle)
    blob = json.dumps({"power_set": cfg["power_set"], "rate": cfg["rate"],
                       "slot_s": cfg["harvest"]["slot_s"]}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_table(path, table: ValueTable) -> None:
    """Dump a table: one JSON header line, then the two arrays in npy format."""
    header = {
        "schema_version": TABLE_SCHEMA_VERSION,
        "horizon": table.horizon,
        "model": _bundle_config(table.bundle),
        "action_drains": list(table.action_drains),
        "action_levels_mW": list(table.action_levels_mw),
        "power_set_hash": power_set_hash(table.bundle),
        "clamped_transitions": table.clamped_transitions,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        np.save(fh, table.values)
        np.save(fh, table.decisions)


def load_table(path) -> ValueTable:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("schema_version") != TABLE_SCHEMA_VERSION:
            raise ValueError(f"unsupported table schema version: "
                             f"{header.get('schema_version')!r}")
        values = np.load(fh)
        decisions = np.load(fh)
    bundle = _bundle_from_config(header["model"])
    return ValueTable(
        bundle=bundle,
        horizon=int(header["horizon"]),
        values=values,
        decisions=decisions,
        action_drains=tuple(header["action_drains"]),
        action_levels_mw=tuple(header["action_levels_mW"]),
        clamped_transitions=int(header["clamped_transitions"]),
    )
