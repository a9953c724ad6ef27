import json

import numpy as np
import pytest

from droope.cli import main
from droope.errors import ScenarioError
from droope.metrics import headroom_csv, headroom_markdown, headroom_table
from droope.network import solve_power_flow
from droope.scenario import (BUILTINS, load_scenario, scenario_from_dict)


class TestBuiltinScenarios:
    def test_case_a_dispatch(self):
        scen = load_scenario("3bus-caseA")
        sg = scen.device("sg1")
        gfm = scen.device("gfm3")
        assert sg.kind == "sg" and sg.p_set is None  # slack machine
        assert gfm.p_set == 0.05
        pf = solve_power_flow(scen.network, scen.dispatch_map())
        assert pf.injections[1].real == pytest.approx(0.73, abs=0.01)

    def test_case_b_and_c_dispatches(self):
        assert load_scenario("3bus-caseB").device("gfm3").p_set == 0.50
        assert load_scenario("3bus-caseC").device("gfm3").p_set == 0.95

    def test_nine_bus_case_c_configuration(self):
        scen = load_scenario("9bus-caseC")
        kinds = {d.name: d.kind for d in scen.devices}
        assert kinds == {"gen1": "gfm_droop_e", "gen2": "sg",
                         "gen3": "gfm_droop_e"}
        mw = {d.name: (None if d.p_set is None
                       else d.p_set * d.params.rating_mva)
              for d in scen.devices}
        assert mw["gen1"] == pytest.approx(71.5)
        assert mw["gen3"] == pytest.approx(85.0)
        assert mw["gen2"] is None  # slack, dispatch from the power flow
        pf = solve_power_flow(scen.network, scen.dispatch_map())
        assert pf.injections[2].real * 100 == pytest.approx(163.0, abs=8.0)
        assert all(d.power_sharing.enabled for d in scen.devices
                   if d.kind == "gfm_droop_e")

    def test_empty_events_valid(self):
        import dataclasses
        scen = dataclasses.replace(load_scenario("3bus-caseA"), events=())
        assert scen.events == ()

    @pytest.mark.parametrize("name", sorted(BUILTINS))
    def test_round_trip_identity(self, name):
        scen = load_scenario(name)
        again = scenario_from_dict(json.loads(scen.to_json()))
        assert again == scen
        assert again.to_json() == scen.to_json()


class TestScenarioValidation:
    def _minimal(self):
        return {
            "name": "mini",
            "base": {"system_mva": 100.0},
            "buses": [
                {"id": 1, "kind": "slack", "voltage_setpoint": 1.0},
                {"id": 2, "kind": "pq"},
            ],
            "branches": [{"from": 1, "to": 2, "x": 0.1}],
            "loads": [{"bus": 2, "p": 0.5, "q": 0.1}],
            "devices": [{"name": "g1", "bus": 1, "kind": "sg"}],
        }

    def test_minimal_loads_with_defaults(self):
        scen = scenario_from_dict(self._minimal())
        assert scen.sim.dt == 0.001
        assert scen.f_nominal_hz == 60.0
        assert scen.network.bases.base_rad_per_s == 377.0

    def test_unknown_top_level_key(self):
        d = self._minimal()
        d["surprise"] = 1
        with pytest.raises(ScenarioError, match="surprise"):
            scenario_from_dict(d)

    def test_unknown_param_key_labelled(self):
        d = self._minimal()
        d["devices"][0]["params"] = {"h": 3.0, "nonsense": 1}
        with pytest.raises(ScenarioError, match=r"devices\[0\].params"):
            scenario_from_dict(d)

    def test_bad_bus_kind_labelled(self):
        d = self._minimal()
        d["buses"][1]["kind"] = "mystery"
        with pytest.raises(ScenarioError, match=r"buses\[1\].kind"):
            scenario_from_dict(d)

    def test_non_numeric_field(self):
        d = self._minimal()
        d["loads"][0]["p"] = "lots"
        with pytest.raises(ScenarioError, match=r"loads\[0\].p"):
            scenario_from_dict(d)

    def test_slack_device_with_dispatch_rejected(self):
        d = self._minimal()
        d["devices"][0]["p_set"] = 0.5
        with pytest.raises(ScenarioError, match="slack"):
            scenario_from_dict(d)

    def test_second_device_on_bus_rejected(self):
        d = self._minimal()
        d["devices"].append({"name": "g2", "bus": 1, "kind": "sg"})
        with pytest.raises(ScenarioError, match="second device"):
            scenario_from_dict(d)

    def test_unschedulable_event_rejected(self):
        d = self._minimal()
        d["events"] = [{"t": 1.0, "kind": "gate_armed"}]
        with pytest.raises(ScenarioError, match="events"):
            scenario_from_dict(d)

    def test_unknown_source_rejected(self):
        with pytest.raises(ScenarioError, match="neither a built-in"):
            load_scenario("no-such-scenario")

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "mini.json"
        path.write_text(json.dumps(self._minimal()))
        assert load_scenario(path).name == "mini"
        assert load_scenario(str(path)).name == "mini"

    def test_invalid_json_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{\n  not json\n}")
        with pytest.raises(ScenarioError, match="line"):
            load_scenario(path)


class TestCommandLine:
    def test_powerflow_prints_solution(self, capsys):
        assert main(["powerflow", "--scenario", "3bus-caseB"]) == 0
        out = capsys.readouterr().out
        assert "converged" in out
        assert "0.50000000" in out

    def test_simulate_writes_trace_and_stats(self, tmp_path, capsys):
        rc = main(["simulate", "--scenario", "3bus-caseA",
                   "--out", str(tmp_path), "--t-end", "0.5"])
        assert rc == 0
        trace = (tmp_path / "3bus-caseA_trace.csv").read_text()
        assert trace.splitlines()[0].startswith("t,dev_sg1_f_hz")
        assert len(trace.splitlines()) == 502
        stats = json.loads((tmp_path / "3bus-caseA_stats.json").read_text())
        assert stats["source"] == "sg"
        assert stats["window_s"] == 0.1

    def test_simulate_deterministic_output(self, tmp_path):
        outs = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            main(["simulate", "--scenario", "3bus-caseA", "--out", str(d),
                  "--t-end", "0.3"])
            outs.append((d / "3bus-caseA_trace.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_droop_curve_with_ufls_annotation(self, tmp_path):
        rc = main(["droop-curve", "--scenario", "3bus-caseA",
                   "--out", str(tmp_path), "--pset", "0.2,0.73"])
        assert rc == 0
        lines = (tmp_path / "3bus-caseA_droop_curve.csv").read_text().splitlines()
        assert lines[0] == "p_set,p,f_droop_e_hz,f_static5_hz,below_ufls_59hz"
        assert len(lines) == 1 + 2 * 201
        flags = {row.split(",")[-1] for row in lines[1:]}
        assert flags == {"0", "1"}  # the curve crosses 59 Hz at full output
        # spot value: at p = p_set the deviation is zero
        row = next(r for r in lines[1:]
                   if r.startswith("0.2,0.2,"))
        assert float(row.split(",")[2]) == 60.0

    def test_eig_sweep_csv(self, tmp_path):
        rc = main(["eig-sweep", "--scenario", "3bus-caseA",
                   "--out", str(tmp_path),
                   "--from", "0.2", "--to", "0.24", "--step", "0.01"])
        assert rc == 0
        lines = (tmp_path / "3bus-caseA_modes.csv").read_text().splitlines()
        assert lines[0].startswith("p_set,track,re,im,zeta,freq_hz")
        assert len(lines) == 1 + 5 * 11

    def test_report_table_one_byte_identical(self, tmp_path):
        rc = main(["report", "--tables", "I", "--out", str(tmp_path)])
        assert rc == 0
        rows = headroom_table(p_set=0.2, delta_f_hz=[0.25, 0.50, 0.75])
        assert (tmp_path / "table_I.csv").read_text() == headroom_csv(rows)
        assert (tmp_path / "table_I.md").read_text() == headroom_markdown(rows)

    def test_unknown_scenario_is_input_error(self, capsys):
        assert main(["powerflow", "--scenario", "missing.json"]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["kind"] == "input"

    def test_numeric_failure_exit_code(self, tmp_path, capsys):
        bad = {
            "name": "collapse",
            "base": {"system_mva": 100.0},
            "buses": [
                {"id": 1, "kind": "slack", "voltage_setpoint": 1.0},
                {"id": 2, "kind": "pq"},
            ],
            "branches": [{"from": 1, "to": 2, "x": 0.5}],
            "loads": [{"bus": 2, "p": 40.0, "q": 10.0}],
            "devices": [{"name": "g1", "bus": 1, "kind": "sg"}],
        }
        path = tmp_path / "collapse.json"
        path.write_text(json.dumps(bad))
        assert main(["powerflow", "--scenario", str(path)]) == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["kind"] == "numeric"

    def test_report_rejects_unknown_table(self, capsys):
        assert main(["report", "--tables", "IX"]) == 2
