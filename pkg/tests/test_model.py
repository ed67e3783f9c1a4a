import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehsched.model import (
    ChannelModel,
    EnergyGrid,
    HarvestModel,
    ModelBundle,
    PowerRateSet,
    ShannonRate,
    bits_delivered,
    conditional_mean_harvest,
    energy_update,
    load_model_file,
    save_model_file,
    stationary_mean_harvest,
)
from conftest import toy_rate

BURST_STATIONARY_MEAN = 256.0 / 6.0  # pi = (5/6, 1/6) from the q01/q10 balance


class TestBitsDelivered:
    def test_full_slot_when_energy_covers_drain(self, paper_pset):
        r = paper_pset.rate(100.0)
        assert paper_pset.bits_delivered(200.0, 100.0) == pytest.approx(r)

    def test_zero_energy_zero_bits(self, paper_pset):
        for rho in paper_pset.drains:
            assert paper_pset.bits_delivered(0.0, rho) == 0.0

    def test_partial_slot_fraction(self, paper_pset):
        # e=50, rho=100 mJ/slot -> half a slot at the 100 mW rate
        assert paper_pset.bits_delivered(50.0, 100.0) == pytest.approx(
            0.5 * paper_pset.rate(100.0))

    def test_idle_is_zero(self, paper_pset):
        assert paper_pset.bits_delivered(123.0, 0.0) == 0.0

    def test_domain_errors(self, paper_pset):
        with pytest.raises(ValueError):
            paper_pset.bits_delivered(-1.0, 5.0)
        with pytest.raises(ValueError):
            paper_pset.bits_delivered(1.0, 5.0, gamma=0.0)

    def test_module_alias(self, paper_pset):
        assert bits_delivered(paper_pset, 50.0, 100.0) == paper_pset.bits_delivered(50.0, 100.0)

    @given(e=st.floats(0, 5000), scale=st.floats(1.0, 4.0))
    @settings(max_examples=60, deadline=None)
    def test_nondecreasing_in_energy_and_gain(self, e, scale):
        pset = PowerRateSet((5, 10, 23, 26, 74, 100, 159, 256), ShannonRate())
        for rho in pset.drains:
            assert pset.bits_delivered(e * scale, rho) >= pset.bits_delivered(e, rho)
            assert pset.bits_delivered(e, rho, gamma=scale) >= pset.bits_delivered(e, rho)

    def test_nondecreasing_in_level_when_energy_ample(self, paper_pset):
        e = paper_pset.drain_max
        vals = [paper_pset.bits_delivered(e, d) for d in paper_pset.drains]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestEnergyUpdate:
    def test_arithmetic(self):
        assert energy_update(5, 3, 2) == 4

    def test_deficit_clamps_to_zero(self):
        assert energy_update(2, 5, 1) == 1

    def test_pure_accumulation(self):
        assert energy_update(0, 0, 256) == 256

    def test_ceiling_clamp(self):
        assert energy_update(4090, 0, 100, e_max=4096) == 4096

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            energy_update(-1, 0, 0)
        with pytest.raises(ValueError):
            energy_update(1, 0, -2)

    @given(e=st.floats(0, 1e4), rho=st.floats(0, 1e4), h=st.floats(0, 1e4),
           de=st.floats(0, 100), dh=st.floats(0, 100))
    @settings(max_examples=80, deadline=None)
    def test_monotone_and_at_least_harvest(self, e, rho, h, de, dh):
        out = energy_update(e, rho, h)
        assert out >= h
        assert energy_update(e + de, rho, h) >= out
        assert energy_update(e, rho, h + dh) >= out


class TestConditionalMean:
    def test_one_step_from_low_state(self, burst_model):
        # row (0.9, 0.1) against states (0, 256)
        assert conditional_mean_harvest(burst_model, 0, 1) == pytest.approx(25.6)

    def test_absorbing_state(self):
        m = HarvestModel((0.0, 7.0), ((1.0, 0.0), (0.5, 0.5)))
        assert m.conditional_mean(0, 1) == pytest.approx(0.0)

    def test_converges_to_stationary_mean(self, burst_model):
        assert burst_model.conditional_mean(0, 10_000) == pytest.approx(
            BURST_STATIONARY_MEAN, abs=1e-9)
        assert burst_model.conditional_mean(1, 10_000) == pytest.approx(
            BURST_STATIONARY_MEAN, abs=1e-9)

    def test_zero_lookahead_rejected(self, burst_model):
        with pytest.raises(ValueError):
            burst_model.conditional_mean(0, 0)

    def test_cache_matches_fresh_power(self, burst_model):
        q = np.asarray(burst_model.transitions)
        for k in (1, 3, 17):
            fresh = np.linalg.matrix_power(q, k)
            np.testing.assert_allclose(burst_model.transition_power(k), fresh, atol=1e-12)


class TestStationaryMean:
    def test_burst_model(self, burst_model):
        assert stationary_mean_harvest(burst_model) == pytest.approx(BURST_STATIONARY_MEAN)

    def test_single_state(self):
        m = HarvestModel((42.0,), ((1.0,),))
        assert m.stationary_mean() == 42.0

    def test_symmetric_two_state(self):
        m = HarvestModel((0.0, 20.0), ((0.7, 0.3), (0.3, 0.7)))
        assert m.stationary_mean() == pytest.approx(10.0)

    def test_reducible_chain_rejected(self):
        m = HarvestModel((0.0, 1.0), ((1.0, 0.0), (0.0, 1.0)))
        with pytest.raises(ValueError, match="stationary"):
            m.stationary_mean()


class TestModelValidation:
    def test_row_sum_enforced(self):
        with pytest.raises(ValueError, match="sum to 1"):
            HarvestModel((0.0, 1.0), ((0.9, 0.2), (0.5, 0.5)))

    def test_states_strictly_increasing(self):
        with pytest.raises(ValueError):
            HarvestModel((1.0, 1.0), ((0.5, 0.5), (0.5, 0.5)))

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            HarvestModel((0.0, 1.0), ((1.1, -0.1), (0.5, 0.5)))

    def test_channel_positive_gains(self):
        with pytest.raises(ValueError):
            ChannelModel((0.0, 1.0), ((0.5, 0.5), (0.5, 0.5)))

    def test_static_channel_is_static(self):
        assert ChannelModel.static().is_static
        assert not ChannelModel((0.5, 1.5), ((0.5, 0.5), (0.5, 0.5))).is_static


class TestPowerRateSet:
    def test_paper_set_snr(self, paper_pset):
        rate = paper_pset.rate_fn
        assert isinstance(rate, ShannonRate)
        assert 256.0 / rate.noise_power_mw == pytest.approx(7.7108, abs=1e-3)

    def test_efficiency_strictly_decreasing(self, paper_pset):
        eff = [paper_pset.rate(p) / p for p in paper_pset.levels_mw]
        assert all(b < a for a, b in zip(eff, eff[1:]))

    def test_duplicate_levels_rejected(self):
        with pytest.raises(ValueError):
            PowerRateSet((1.0, 1.0), toy_rate)

    def test_nonconcave_rate_rejected(self):
        with pytest.raises(ValueError, match="throughput per energy"):
            PowerRateSet((1.0, 2.0), lambda p: p * p)

    def test_drains_scale_with_slot(self):
        pset = PowerRateSet((5.0, 10.0), ShannonRate(slot_s=30.0), slot_s=30.0)
        assert pset.drains == (150.0, 300.0)

    def test_extremes_exposed(self, paper_pset):
        assert paper_pset.rho_min_mw == 5.0
        assert paper_pset.rho_max_mw == 256.0
        assert paper_pset.drain_min == 5.0
        assert paper_pset.drain_max == 256.0


class TestEnergyGrid:
    def test_points(self):
        g = EnergyGrid(quantum=2.0, max_energy=8.0)
        np.testing.assert_allclose(g.points(), [0, 2, 4, 6, 8])

    def test_index_rounds_and_clamps(self):
        g = EnergyGrid(quantum=1.0, max_energy=10.0)
        assert g.index_of(3.4) == 3
        assert g.index_of(3.6) == 4
        assert g.index_of(-5.0) == 0
        assert g.index_of(25.0) == 10

    def test_require_on_grid(self):
        g = EnergyGrid(quantum=1.0, max_energy=10.0)
        g.require_on_grid([0.0, 3.0, 10.0], "drains")
        with pytest.raises(ValueError, match="drains"):
            g.require_on_grid([2.5], "drains")

    def test_snapped_model_reports_error(self, default_grid):
        m = HarvestModel((0.0, 10.4), ((0.9, 0.1), (0.5, 0.5)))
        snapped, err = m.snapped_to(default_grid)
        assert snapped.states == (0.0, 10.0)
        assert err == pytest.approx(0.4)


class TestModelFile:
    def test_round_trip(self, tmp_path, burst_bundle):
        path = tmp_path / "model.json"
        save_model_file(path, burst_bundle)
        loaded = load_model_file(path)
        assert loaded.harvest.states == burst_bundle.harvest.states
        np.testing.assert_allclose(loaded.harvest.transitions, burst_bundle.harvest.transitions)
        assert loaded.power_set.levels_mw == burst_bundle.power_set.levels_mw
        assert loaded.grid == burst_bundle.grid
        assert loaded.channel.is_static

    def test_missing_channel_defaults_static(self, tmp_path, burst_bundle):
        path = tmp_path / "model.json"
        save_model_file(path, burst_bundle)
        import json
        doc = json.loads(path.read_text())
        del doc["channel"]
        path.write_text(json.dumps(doc))
        assert load_model_file(path).channel.is_static

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"schema_version": 99}')
        with pytest.raises(ValueError, match="schema version"):
            load_model_file(path)

    def test_slot_mismatch_rejected(self, burst_model, static_channel, default_grid):
        pset = PowerRateSet((5.0,), ShannonRate(slot_s=30.0), slot_s=30.0)
        with pytest.raises(ValueError, match="slot"):
            ModelBundle(burst_model, static_channel, pset, default_grid)
