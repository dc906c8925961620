"""Packaged community configurations load and match their documented values."""

import json

import numpy as np
import pytest

from recopt.domain import PACKAGED_CONFIGS, load_config
from recopt.simulator import initial_state


class TestPackagedConfigs:
    def test_all_packaged_names_load(self):
        for name in PACKAGED_CONFIGS:
            config = load_config(name)
            assert config.name == name
            assert config.base_consumption.shape[0] >= config.grid.horizon

    def test_unknown_name_raises(self):
        with pytest.raises(ValueError):
            load_config("rec99")

    def test_load_from_explicit_path(self, tmp_path):
        config = load_config("rec2")
        raw = {
            "name": "copy",
            "tariffs": {
                "buy": [0.1], "sell": [0.01], "offtake_peak": 1.0,
                "injection_peak": 1.0, "rec_buy_fee": 0.0, "rec_sell_fee": 0.0,
            },
            "time_grid": {
                "step_hours": 1.0, "steps_per_market": 2,
                "markets_per_billing": 2, "horizon": 4,
            },
            "profiles_csv": "p.csv",
        }
        (tmp_path / "p.csv").write_text(
            "m1:consumption\n" + "\n".join(["0.5"] * 4) + "\n"
        )
        path = tmp_path / "custom.json"
        path.write_text(json.dumps(raw))
        custom = load_config(str(path))
        assert custom.name == "copy"
        assert custom.member_count == 1
        assert config.member_count == 2


class TestRec2Values:
    def setup_method(self):
        self.config = load_config("rec2")

    def test_prices_and_fees(self):
        tariffs = self.config.tariffs
        assert np.allclose(tariffs.buy, [0.10, 0.12])
        assert np.allclose(tariffs.sell, [0.01, 0.01])
        assert tariffs.offtake_peak == 1.0
        assert tariffs.injection_peak == 1.0
        assert abs(tariffs.rec_buy_fee - 0.03) < 1e-12
        assert abs(tariffs.rec_sell_fee - 0.01) < 1e-12

    def test_time_grid(self):
        grid = self.config.grid
        assert grid.step_hours == 1.0
        assert grid.steps_per_market == 4
        assert grid.markets_per_billing == 5
        assert grid.horizon == 101
        assert abs(grid.discount - 0.9995) < 1e-12

    def test_battery(self):
        (battery,) = self.config.batteries
        assert battery.owner == 1  # second member
        assert battery.capacity_kwh == 1.0
        assert battery.max_charge_kw == 0.05
        assert battery.max_discharge_kw == 0.10
        assert battery.eff_charge == 1.0
        assert battery.eff_discharge == 1.0

    def test_noise(self):
        noise = self.config.noise
        assert abs(noise.correlation - 0.5) < 1e-12
        assert abs(noise.sigma - 0.3) < 1e-12
        assert not noise.relative

    def test_initial_soc_half_capacity(self):
        state = initial_state(self.config)
        assert abs(state.soc[0] - 0.5) < 1e-12

    def test_profile_shapes(self):
        cons = self.config.base_consumption
        prod = self.config.base_production
        assert not prod[:, 0].any()  # first member never produces
        assert not cons[:, 1].any()  # second member never consumes
        assert np.all(cons[:, 0] >= 0.25) and np.all(cons[:, 0] <= 0.45)
        assert prod[:6, 1].max() == 0.0  # solar is dark at midnight
        assert prod[:, 1].max() > 1.0


class TestRec7Values:
    def setup_method(self):
        self.config = load_config("rec7")

    def test_prices_and_fees(self):
        tariffs = self.config.tariffs
        assert np.allclose(
            tariffs.buy,
            [0.214907, 0.208757, 0.202735, 0.20846, 0.20846, 0.206301, 0.210234],
        )
        assert np.allclose(
            tariffs.sell,
            [0.075388, 0.075152, 0.076381, 0.077213, 0.078153, 0.080649, 0.081928],
        )
        assert abs(tariffs.offtake_peak - 1.210) < 1e-12
        assert abs(tariffs.injection_peak - 1.210) < 1e-12
        assert abs(tariffs.rec_buy_fee - 0.143) < 1e-12
        assert abs(tariffs.rec_sell_fee - 0.126) < 1e-12

    def test_time_grid(self):
        grid = self.config.grid
        assert abs(grid.step_hours - 0.05) < 1e-12  # three minutes
        assert grid.steps_per_market == 5
        assert grid.markets_per_billing == 45
        assert grid.horizon == 721
        assert abs(grid.discount - 0.99993) < 1e-12

    def test_battery(self):
        (battery,) = self.config.batteries
        assert battery.owner == 0  # first member
        assert battery.capacity_kwh == 5256.0
        assert battery.max_charge_kw == 525.0
        assert battery.max_discharge_kw == 1051.0
        assert abs(battery.eff_charge - 0.88) < 1e-12
        assert abs(battery.eff_discharge - 0.71) < 1e-12

    def test_initial_soc_half_capacity(self):
        state = initial_state(self.config)
        assert abs(state.soc[0] - 2628.0) < 1e-9

    def test_member_roles(self):
        cons = self.config.base_consumption
        prod = self.config.base_production
        assert not cons[:, 0].any() and not prod[:, 0].any()  # battery host
        for member in (1, 2, 3, 4):
            assert cons[:, member].min() > 0.0
            assert not prod[:, member].any()
        for member in (5, 6):
            assert cons[:, member].any()
            assert prod[:, member].any()
            assert np.all(np.minimum(cons[:, member], prod[:, member]) == 0.0)

    def test_relative_noise(self):
        noise = self.config.noise
        assert noise.relative
        assert abs(noise.sigma - 0.3) < 1e-12
        assert abs(noise.correlation - 0.5) < 1e-12


class TestRec7Variants:
    def test_literal_720_horizon(self):
        config = load_config("rec7-720")
        assert config.grid.horizon == 720
        assert config.grid.markets_per_billing == 45

    def test_desk_scale_covers_one_billing_period(self):
        config = load_config("rec7-desk")
        assert config.grid.horizon == 90
        assert config.grid.steps_per_market == 5
        assert config.grid.markets_per_billing == 18
        assert config.grid.steps_per_billing == 90

    def test_variants_share_prices_with_rec7(self):
        base = load_config("rec7")
        for name in ("rec7-720", "rec7-desk"):
            other = load_config(name)
            assert np.allclose(other.tariffs.buy, base.tariffs.buy)
            assert np.allclose(other.tariffs.sell, base.tariffs.sell)
            assert other.batteries == base.batteries
