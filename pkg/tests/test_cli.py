import csv
import json

import numpy as np
import pytest

from ctmc_debt.cli import build_parser, main

CURVE = "t,discount\n0.26,0.986944\n0.47,0.976019\n0.72,0.964123\n0.97,0.953152\n"


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def vasicek_cfg(tmp_path):
    return write(tmp_path / "vasicek.json", {
        "model": {"model": "vasicek", "kappa": 1.0, "theta": 0.04, "sigma": 0.2, "r0": 0.04},
        "grid": {"m": 120}, "dt": 0.25, "scheme": "upwind",
        "instruments": [{"id": "z4", "type": "zcb", "maturity": 4.0},
                        {"id": "z0", "type": "zcb", "maturity": 0.0},
                        {"id": "c", "type": "bond_option", "expiry": 1.0, "maturity": 2.0,
                         "strike": 0.95}]})


@pytest.fixture
def hw_cfg(tmp_path):
    (tmp_path / "curve.csv").write_text(CURVE)
    return write(tmp_path / "hw.json", {
        "model": {"model": "hull_white", "kappa": 1.0, "sigma": 0.2, "r0": 0.04,
                  "theta": "calibrate"},
        "curve": "curve.csv", "grid": {"m": 60}, "dt": 0.01, "scheme": "upwind",
        "instruments": [{"type": "zcb", "maturity": 0.97},
                        {"type": "callable_putable", "face": 100, "coupon_rate": 0.05,
                         "frequency": 2, "maturity": 0.97, "call": 100.0}]})


def test_price_writes_csv_and_manifest(tmp_path, vasicek_cfg):
    out = tmp_path / "out"
    assert main(["price", "--config", vasicek_cfg, "--out", str(out)]) == 0
    recs = rows(out / "prices.csv")
    assert [r["id"] for r in recs] == ["z4", "z0", "c"]
    assert recs[1]["value"] == "1.000000000"
    assert len(recs[0]["value"].split(".")[1]) == 9
    assert float(recs[0]["value_full"]) == pytest.approx(0.8964877, abs=5e-6)
    assert recs[0]["method"] == "homogeneous"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "price"
    assert manifest["resolved"]["m"] == 120
    assert any(t["phase"].startswith("price:") for t in manifest["timings"])


def test_full_precision_column_round_trips(tmp_path, vasicek_cfg):
    out = tmp_path / "out"
    main(["price", "--config", vasicek_cfg, "--out", str(out)])
    value = float(rows(out / "prices.csv")[0]["value_full"])
    assert f"{value:.17g}" == rows(out / "prices.csv")[0]["value_full"]


def test_rerun_reproduces_values(tmp_path, vasicek_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["price", "--config", vasicek_cfg, "--out", str(a)])
    main(["price", "--config", vasicek_cfg, "--out", str(b)])
    assert [r["value_full"] for r in rows(a / "prices.csv")] == \
        [r["value_full"] for r in rows(b / "prices.csv")]


def test_grid_override_flag(tmp_path, vasicek_cfg):
    out = tmp_path / "out"
    main(["price", "--config", vasicek_cfg, "--out", str(out), "--m", "200"])
    assert rows(out / "prices.csv")[0]["m"] == "200"


def test_calibrate_reports_residuals(tmp_path, hw_cfg):
    out = tmp_path / "cal"
    assert main(["calibrate", "--config", hw_cfg, "--out", str(out)]) == 0
    res = rows(out / "residuals.csv")
    assert len(res) == 4
    assert max(abs(float(r["residual"])) for r in res) < 1e-10
    theta = rows(out / "theta.csv")
    assert [float(r["t_n"]) for r in theta] == [0.26, 0.47, 0.72, 0.97]


def test_calibrate_flat_curve_zero_volatility(tmp_path):
    curve = tmp_path / "flat.csv"
    t = np.arange(1, 5) * 0.5
    curve.write_text("t,discount\n" + "".join(f"{x},{float(np.exp(-0.03 * x))!r}\n" for x in t))
    cfg = write(tmp_path / "hl.json", {
        "model": {"model": "ho_lee", "sigma": 0.0, "r0": 0.03, "theta": "calibrate"},
        "grid": {"m": 40, "bounds": [-0.5, 0.5]}, "dt": 0.25})
    out = tmp_path / "cal"
    assert main(["calibrate", "--config", cfg, "--curve", str(curve), "--out", str(out)]) == 0
    assert all(float(r["theta_star"]) == 0.0 for r in rows(out / "theta.csv"))


def test_calibration_failure_exits_nonzero(tmp_path, capsys):
    curve = tmp_path / "steep.csv"
    curve.write_text("t,discount\n0.5,0.9\n1.0,0.8\n")
    cfg = write(tmp_path / "hl.json", {
        "model": {"model": "ho_lee", "sigma": 0.0, "r0": 0.03, "theta": "calibrate"},
        "grid": {"m": 20, "bounds": [-0.5, 0.5]}, "dt": 0.25})
    code = main(["calibrate", "--config", cfg, "--curve", str(curve), "--out", str(tmp_path / "o")])
    assert code != 0
    assert "t=0.5" in capsys.readouterr().err


def test_price_callable_with_calibration(tmp_path, hw_cfg):
    out = tmp_path / "out"
    assert main(["price", "--config", hw_cfg, "--out", str(out)]) == 0
    recs = rows(out / "prices.csv")
    assert float(recs[0]["value_full"]) == pytest.approx(0.953152, abs=1e-10)
    assert recs[1]["method"] == "backward_induction"
    assert float(recs[1]["value"]) <= 100.0 + 1e-9


def test_unknown_instrument_type(tmp_path, vasicek_cfg):
    inst = write(tmp_path / "inst.json", [{"type": "swaption", "maturity": 1.0}])
    code = main(["price", "--config", vasicek_cfg, "--instruments", inst, "--out", str(tmp_path)])
    assert code == 2


def test_convergence_study(tmp_path, vasicek_cfg):
    out = tmp_path / "conv"
    assert main(["convergence", "--config", vasicek_cfg, "--m-list", "50,100,200",
                 "--out", str(out)]) == 0
    recs = rows(out / "study.csv")
    assert [int(r["m"]) for r in recs] == [50, 100, 200]
    assert recs[0]["rate"] == ""
    assert float(recs[2]["rate"]) == pytest.approx(2.0, abs=0.2)
    assert recs[0]["benchmark_source"] == "analytic"


def test_convergence_single_size_has_empty_rate(tmp_path, vasicek_cfg):
    out = tmp_path / "conv"
    main(["convergence", "--config", vasicek_cfg, "--m-list", "100", "--out", str(out)])
    assert rows(out / "study.csv")[0]["rate"] == ""


def test_convergence_without_any_benchmark(tmp_path):
    cfg = write(tmp_path / "bk.json", {
        "model": {"model": "black_karasinski", "kappa": 0.5, "sigma": 0.2, "r0": 0.04,
                  "theta": 0.0},
        "dt": 0.5, "instruments": [{"type": "zcb", "maturity": 1.0}]})
    code = main(["convergence", "--config", cfg, "--m-list", "40,60", "--no-self-benchmark",
                 "--out", str(tmp_path / "c")])
    assert code == 2


def test_parser_lists_subcommands():
    parser = build_parser()
    args = parser.parse_args(["price", "--config", "x.json", "--big-m", "80", "--dt", "0.01"])
    assert args.big_m == 80 and args.dt == 0.01
    with pytest.raises(SystemExit):
        parser.parse_args(["plot", "--config", "x.json"])
