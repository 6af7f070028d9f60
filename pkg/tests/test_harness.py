import csv
import json
import math

import pytest

from reclab import __version__
from reclab.harness import (ConfigError, ExperimentConfig, ExperimentReport, ScheduleClassError,
                            config_hash, csv_header, export_report, load_report,
                            run_convergence_experiment, run_experiment, run_sbc_experiment,
                            seed_rng, sprindzuk_envelope)


def _cfg(**kw):
    base = {"system": "gauss", "schedule": {"family": "power", "exponents": [0.5]}, "N": 2000,
            "ensemble": 4, "seed": 3}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def test_config_defaults():
    cfg = _cfg()
    assert cfg.ratio_tol == 0.10 and cfg.pass_fraction == 0.9
    assert cfg.envelope_C == 3 and cfg.envelope_eps == 0.5
    assert cfg.resolved_mode == "float64"
    assert _cfg(system="toral_diag23",
                schedule={"family": "power", "exponents": [0.2, 0.3]}).resolved_mode == "exact_modular"


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="colour"):
        _cfg(colour="red")


def test_every_offending_key_listed():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"system": "gauss", "schedule": {"family": "power"},
                                    "N": 0, "ensemble": "many"})
    msg = str(exc.value)
    assert "N" in msg and "ensemble" in msg


def test_config_semantic_checks():
    with pytest.raises(ConfigError):
        _cfg(schedule={"family": "power", "exponents": [0.5, 0.5]})
    with pytest.raises(ConfigError):
        _cfg(mode="exact_modular")
    with pytest.raises(ConfigError):
        _cfg(x0=[[0.3]])


def test_hash_ignores_execution_settings():
    assert _cfg().hash == _cfg(threads=4, out="x.json", format="csv").hash
    assert _cfg().hash != _cfg(seed=4).hash
    assert config_hash(_cfg()) == _cfg().hash


def test_seed_streams_are_independent_of_order():
    a = [seed_rng(7, i).random() for i in range(5)]
    b = [seed_rng(7, i).random() for i in reversed(range(5))][::-1]
    assert a == b
    assert len(set(a)) == 5


def test_sbc_report_fields():
    rep = run_sbc_experiment(_cfg(N=10**4))
    assert rep.experiment == "sbc" and rep.version == __version__
    assert len(rep.per_seed) == 4
    assert rep.iterations == 4 * 10**4
    agg = rep.aggregates
    assert 0 <= agg["within_fraction"] <= 1 and 0 <= agg["envelope_pass_rate"] <= 1
    assert set(agg["ratio_quantiles"]) == {"q05", "q25", "q50", "q75", "q95"}
    for row in rep.per_seed:
        assert row["error"] == pytest.approx(abs(row["ratio"] - row["h"]) / row["h"])
        assert row["final_normalizer"] == rep.normalizers[-1]
    assert set(rep.verdicts) == {"ratio", "envelope"}


def test_tiny_run_has_no_verdict():
    rep = run_sbc_experiment(_cfg(N=10, ensemble=1))
    assert rep.verdicts == {"ratio": None, "envelope": None}
    assert rep.passed
    assert rep.notes


def test_per_seed_records_reproducible():
    rep = run_sbc_experiment(_cfg(N=5000, ensemble=3))
    x0 = rep.per_seed[2]["x0"]
    again = run_sbc_experiment(_cfg(N=5000, ensemble=1, x0=[x0]))
    assert again.per_seed[0]["hits"] == rep.per_seed[2]["hits"]


def test_threads_do_not_change_bytes():
    a = run_sbc_experiment(_cfg(threads=1)).to_json()
    b = run_sbc_experiment(_cfg(threads=3)).to_json()
    assert a == b


def test_modular_seeds_share_one_modulus():
    cfg = _cfg(system="doubling", ensemble=3, N=3000)
    rep = run_sbc_experiment(cfg)
    assert rep.modulus is not None and rep.modulus.bit_length() == 61
    for row in rep.per_seed:
        assert row["x0_exact"][0].endswith(f"/{rep.modulus}")


def test_hat_target_is_one():
    rep = run_sbc_experiment(_cfg(hat=True))
    assert all(r["target"] == 1.0 for r in rep.per_seed)


def test_runners_refuse_wrong_schedule_class():
    with pytest.raises(ScheduleClassError):
        run_sbc_experiment(_cfg(schedule={"family": "power", "exponents": [2.0]}))
    with pytest.raises(ScheduleClassError):
        run_convergence_experiment(_cfg(experiment="convergence"))


def test_convergence_zero_schedule():
    rep = run_experiment(_cfg(experiment="convergence", tail_start=100,
                              schedule={"family": "power", "exponents": [0.5], "scales": [0.0]}))
    assert all(r["final_hits"] == 0 for r in rep.per_seed)
    assert rep.verdicts == {"tail": True}


def test_convergence_tail_counts():
    rep = run_convergence_experiment(_cfg(experiment="convergence", tail_start=100, max_hits=50,
                                          schedule={"family": "power", "exponents": [2.0]}))
    assert 100 in rep.checkpoints
    for row in rep.per_seed:
        assert 0 <= row["tail_hits"] <= row["final_hits"]
        if row["tail_hits"] == 0 and row["last_hit"] is not None:
            assert row["last_hit"] <= 100
    assert "total_hits" in rep.verdicts


def test_convergence_periodic_seed_is_seed_level_detail():
    # 1/3 is 2-periodic: every even time is an exact return, so the distance 0
    # lies inside every target; k = 1 hits because r_1 = 1
    rep = run_convergence_experiment(_cfg(
        system="doubling", experiment="convergence", ensemble=1, x0=[["1/3"]], N=1000,
        tail_start=10, schedule={"family": "power", "exponents": [2.0]}))
    row = rep.per_seed[0]
    assert row["final_hits"] == 1 + 500
    assert row["tail_hits"] == 495 and row["last_hit"] == 1000
    assert rep.verdicts == {"tail": False}


def test_envelope_exact_series_passes():
    series = {"checkpoints": [10, 100, 1000], "hits": [20, 200, 2000],
              "normalizers": [10.0, 100.0, 1000.0]}
    assert sprindzuk_envelope(series, 2.0, 0.01).passed


def test_envelope_arithmetic():
    # S = 0, h = 1: |0 - 100| <= 3 * 10 * ln(100)^2 passes, 10^6 > 3 * 10^3 * ln(10^6)^2 fails
    assert 3 * 10 * math.log(100) ** 2 > 100
    assert 3 * 1e3 * math.log(1e6) ** 2 < 1e6
    assert sprindzuk_envelope({"checkpoints": [1], "hits": [0], "normalizers": [100.0]}, 1.0).passed
    env = sprindzuk_envelope({"checkpoints": [1], "hits": [0], "normalizers": [1e6]}, 1.0)
    assert env.checks == [False] and not env.passed


def test_envelope_skips_early_and_tiny_checkpoints():
    series = {"checkpoints": [10, 500, 2000], "hits": [0, 0, 0], "normalizers": [2.0, 1e6, 1e6]}
    env = sprindzuk_envelope(series, 1.0, start=1000)
    assert env.checks == [None, None, False]


def test_json_round_trip(tmp_path):
    rep = run_sbc_experiment(_cfg())
    path = export_report(rep, tmp_path / "r.json")
    back = load_report(path)
    assert back == rep
    assert json.loads(path.read_text()) == rep.to_dict()


def test_csv_two_rows(tmp_path):
    rep = run_sbc_experiment(_cfg(system="toral_diag23", ensemble=2,
                                  schedule={"family": "power", "exponents": [0.2, 0.3]}))
    path = export_report(rep, tmp_path / "r.csv", "csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == csv_header(2)
    assert len(rows) == 3
    assert float(rows[1][4]) == rep.per_seed[0]["final_hits"]
    assert float(rows[2][6]) == rep.per_seed[1]["ratio"]


def test_csv_empty_ensemble_is_header_only(tmp_path):
    rep = run_sbc_experiment(_cfg())
    empty = ExperimentReport(**{**rep.to_dict(), "per_seed": []})
    path = export_report(empty, tmp_path / "e.csv", "csv")
    assert path.read_text() == ",".join(csv_header(1)) + "\n"


def test_export_errors_carry_path(tmp_path):
    rep = run_sbc_experiment(_cfg(N=10, ensemble=1))
    bad = tmp_path / "missing" / "r.json"
    with pytest.raises(OSError, match="missing"):
        export_report(rep, bad)
    with pytest.raises(OSError, match="nothere"):
        load_report(tmp_path / "nothere.json")
