"""Command-line interface tests: exit codes, config precedence, metadata,
output determinism.  All invocations run in-process through
parse_and_dispatch, so stdout/stderr and the filesystem are observable."""

import json
import math

import pytest

from levyheat import __version__
from levyheat.cli import SCHEMA, SEED_ENV, parse_and_dispatch
from levyheat.mcstats import load_rows

SMALL = ["--set", "m_space=16", "--set", "k_time=8", "--set", "horizon=0.2",
         "--set", "replicas=8"]


@pytest.fixture(autouse=True)
def clean_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def run_cli(args, tmp_path, sub_dir="out"):
    out = tmp_path / sub_dir
    code = parse_and_dispatch(args + ["--out", str(out)])
    return code, out


def rows_by_quantity(path):
    return {r["quantity"]: r for r in load_rows(str(path))}


# ---------------------------------------------------------------------------
# check-exponent


def test_check_exponent_admissible(tmp_path, capsys):
    code, out = run_cli(["check-exponent", "--alpha", "2", "--beta", "2"],
                        tmp_path)
    assert code == 0
    text = capsys.readouterr().out
    assert "theta=1 admissible=true" in text
    got = rows_by_quantity(out / "check_exponent.csv")
    assert got["theta"]["value"] == pytest.approx(1.0, abs=1e-12)
    assert got["admissible"]["value"] == 1.0


def test_check_exponent_boundary(tmp_path, capsys):
    code, out = run_cli(
        ["check-exponent", "--alpha", str(4.0 / 3.0), "--beta", "2"], tmp_path)
    assert code == 0
    assert "admissible=true" in capsys.readouterr().out
    got = rows_by_quantity(out / "check_exponent.csv")
    assert abs(got["theta"]["value"]) < 1e-12


def test_check_exponent_inadmissible(tmp_path, capsys):
    code, out = run_cli(["check-exponent", "--alpha", "1.2", "--beta", "2"],
                        tmp_path)
    assert code == 0
    assert "admissible=false" in capsys.readouterr().out
    got = rows_by_quantity(out / "check_exponent.csv")
    assert got["admissible"]["value"] == 0.0
    assert got["theta"]["value"] < 0.0


def test_check_exponent_out_of_range(tmp_path, capsys):
    code, _ = run_cli(["check-exponent", "--alpha", "0.9", "--beta", "2"],
                      tmp_path)
    assert code == 1
    assert capsys.readouterr().err.startswith("levyheat:error:config:")


# ---------------------------------------------------------------------------
# exit codes


def test_unknown_flag_is_config_error(tmp_path, capsys):
    code = parse_and_dispatch(["kernel", "--frobnicate"])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("levyheat:error:config:")
    assert not (tmp_path / "kernel.csv").exists()


def test_unknown_config_key(tmp_path, capsys):
    code, _ = run_cli(["simulate", "--set", "warp=9"], tmp_path)
    assert code == 1
    assert "warp" in capsys.readouterr().err


def test_bad_value_type(tmp_path, capsys):
    code, _ = run_cli(["simulate", "--set", "m_space=many"], tmp_path)
    assert code == 1
    assert capsys.readouterr().err.startswith("levyheat:error:config:")


def test_missing_subcommand(capsys):
    assert parse_and_dispatch([]) == 1
    assert capsys.readouterr().err.startswith("levyheat:error:config:")


def test_help_exits_zero(capsys):
    assert parse_and_dispatch(["--help"]) == 0
    text = capsys.readouterr().out
    for name in ("kernel", "simulate", "picard", "malliavin", "smallball",
                 "density", "check-exponent"):
        assert name in text
    assert SEED_ENV in text


def test_blowup_is_numerical_error(tmp_path, capsys):
    code, _ = run_cli(["simulate"] + SMALL + ["--set", "u0=sin",
                                              "--set", "u0_amp=1e13"],
                      tmp_path)
    assert code == 2
    assert capsys.readouterr().err.startswith("levyheat:error:numerical:")


def test_unwritable_output_is_io_error(capsys):
    code = parse_and_dispatch(
        ["check-exponent", "--alpha", "2", "--out", "/dev/null/nested"])
    assert code == 3
    assert capsys.readouterr().err.startswith("levyheat:error:io:")


# ---------------------------------------------------------------------------
# kernel subcommand


def test_kernel_slope_row(tmp_path):
    code, out = run_cli(["kernel", "--set", "alpha=1.5"], tmp_path)
    assert code == 0
    got = rows_by_quantity(out / "kernel.csv")
    assert got["kernel_norm_slope"]["value"] == pytest.approx(-2.0 / 3.0,
                                                              rel=0.03)
    meta = json.loads((out / "kernel.meta.json").read_text())
    assert meta["config"]["alpha"] == 1.5


# ---------------------------------------------------------------------------
# metadata contract


def test_metadata_echoes_full_schema(tmp_path):
    code, out = run_cli(["simulate"] + SMALL, tmp_path)
    assert code == 0
    meta = json.loads((out / "simulate.meta.json").read_text())
    assert set(meta["config"]) == set(SCHEMA)
    assert meta["config"]["m_space"] == 16
    assert meta["config"]["sigma"] == "shifted_sine"
    assert meta["seed"] == 0
    assert meta["seed_source"] == "default"
    assert meta["version"] == __version__
    assert meta["rng_scheme"].startswith("philox4x64/")
    assert meta["outputs"] == ["simulate.csv"]
    assert meta["format"] == "csv"
    assert len(meta["run_id"]) == 12
    # nothing machine- or time-dependent may leak in
    assert "workers" not in meta
    assert not any("time" in k or "date" in k for k in meta)


def test_simulate_rows(tmp_path):
    code, out = run_cli(["simulate"] + SMALL, tmp_path)
    assert code == 0
    got = rows_by_quantity(out / "simulate.csv")
    assert set(got) == {"u_mean", "u_var", "u_blowups"}
    assert got["u_var"]["value"] > 0.0
    assert got["u_blowups"]["value"] == 0.0
    assert got["u_mean"]["replica_count"] == 8
    assert got["u_mean"]["t"] == 0.2


# ---------------------------------------------------------------------------
# seed precedence


def test_seed_precedence_chain(tmp_path, monkeypatch):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# manifest\nseed = 11\nm_space=16\nk_time=8\n"
                        "horizon=0.2\nreplicas=8\n")
    base = ["simulate", "--config", str(cfg_file)]

    code, out = run_cli(base, tmp_path, "a")
    meta = json.loads((out / "simulate.meta.json").read_text())
    assert (meta["seed"], meta["seed_source"]) == (11, "config")

    code, out = run_cli(base + ["--set", "seed=22"], tmp_path, "b")
    meta = json.loads((out / "simulate.meta.json").read_text())
    assert (meta["seed"], meta["seed_source"]) == (22, "set")

    code, out = run_cli(base + ["--set", "seed=22", "--seed", "33"],
                        tmp_path, "c")
    meta = json.loads((out / "simulate.meta.json").read_text())
    assert (meta["seed"], meta["seed_source"]) == (33, "flag")

    monkeypatch.setenv(SEED_ENV, "44")
    code, out = run_cli(base + ["--set", "seed=22", "--seed", "33"],
                        tmp_path, "d")
    meta = json.loads((out / "simulate.meta.json").read_text())
    assert (meta["seed"], meta["seed_source"]) == (44, "env")


def test_env_seed_must_be_integer(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(SEED_ENV, "banana")
    code, _ = run_cli(["simulate"] + SMALL, tmp_path)
    assert code == 1
    assert SEED_ENV in capsys.readouterr().err


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("m_space 16\n")
    code, _ = run_cli(["simulate", "--config", str(bad)], tmp_path)
    assert code == 1
    code, _ = run_cli(["simulate", "--config", str(tmp_path / "absent.cfg")],
                      tmp_path)
    assert code == 1
    unknown = tmp_path / "unknown.cfg"
    unknown.write_text("gamma=3\n")
    code, _ = run_cli(["simulate", "--config", str(unknown)], tmp_path)
    assert code == 1


# ---------------------------------------------------------------------------
# determinism


def test_rerun_byte_identical(tmp_path):
    args = ["smallball"] + SMALL + ["--set", "levels=0.25,0.5,0.75"]
    _, out_a = run_cli(args, tmp_path, "a")
    _, out_b = run_cli(args, tmp_path, "b")
    assert (out_a / "smallball.csv").read_bytes() == \
        (out_b / "smallball.csv").read_bytes()
    assert (out_a / "smallball.meta.json").read_bytes() == \
        (out_b / "smallball.meta.json").read_bytes()


def test_worker_count_never_changes_bytes(tmp_path):
    args = ["smallball"] + SMALL + ["--set", "levels=0.25,0.5,0.75"]
    _, out_a = run_cli(args + ["--workers", "1"], tmp_path, "w1")
    _, out_b = run_cli(args + ["--workers", "8"], tmp_path, "w8")
    assert (out_a / "smallball.csv").read_bytes() == \
        (out_b / "smallball.csv").read_bytes()
    assert (out_a / "smallball.meta.json").read_bytes() == \
        (out_b / "smallball.meta.json").read_bytes()


def test_run_id_tracks_config(tmp_path):
    _, out_a = run_cli(["simulate"] + SMALL, tmp_path, "a")
    _, out_b = run_cli(["simulate"] + SMALL, tmp_path, "b")
    _, out_c = run_cli(["simulate"] + SMALL + ["--seed", "9"], tmp_path, "c")
    id_a = json.loads((out_a / "simulate.meta.json").read_text())["run_id"]
    id_b = json.loads((out_b / "simulate.meta.json").read_text())["run_id"]
    id_c = json.loads((out_c / "simulate.meta.json").read_text())["run_id"]
    assert id_a == id_b
    assert id_a != id_c


# ---------------------------------------------------------------------------
# other subcommands end to end


def test_picard_subcommand(tmp_path):
    code, out = run_cli(["picard"] + SMALL + ["--set", "picard_n=3",
                                              "--set", "replicas=16"],
                        tmp_path)
    assert code == 0
    got = rows_by_quantity(out / "picard.csv")
    assert "picard_diff/n=0" in got
    assert "picard_ratio/n=1" in got
    meta = json.loads((out / "picard.meta.json").read_text())
    assert "contracting" in meta


def test_malliavin_subcommand(tmp_path):
    code, out = run_cli(["malliavin"] + SMALL + ["--set", "deltas=0.05,0.1"],
                        tmp_path)
    assert code == 0
    got = rows_by_quantity(out / "malliavin.csv")
    assert got["hnorm_mean"]["value"] > 0.0
    assert "hnorm_tail_mean/delta=5.000000e-02" in got
    assert any(q.startswith("negative_moment/p=2") for q in got)


def test_smallball_subcommand_rows(tmp_path):
    code, out = run_cli(["smallball"] + SMALL, tmp_path)
    assert code == 0
    got = rows_by_quantity(out / "smallball.csv")
    freqs = {q: r for q, r in got.items() if q.startswith("smallball_freq/")}
    assert freqs
    for r in freqs.values():
        assert 0.0 <= r["value"] <= 1.0
    assert any(q.startswith("negative_moment/") for q in got)
    meta = json.loads((out / "smallball.meta.json").read_text())
    assert meta["c_fit"] > 0


def test_smallball_needs_nondegenerate_sigma(tmp_path, capsys):
    code, _ = run_cli(["smallball"] + SMALL + ["--set", "sigma=zero"],
                      tmp_path)
    assert code == 1
    assert "kappa" in capsys.readouterr().err


def test_density_subcommand(tmp_path):
    code, out = run_cli(["density"] + SMALL + ["--set", "replicas=64"],
                        tmp_path)
    assert code == 0
    got = rows_by_quantity(out / "density.csv")
    assert got["density_integral"]["value"] == pytest.approx(1.0, abs=1e-3)
    assert got["density_bandwidth"]["value"] > 0.0
    assert "density_max_d1" in got


def test_density_degenerate_point_mass(tmp_path, capsys):
    # sigma = 0 with zero initial data keeps u identically zero
    code, out = run_cli(["density"] + SMALL + ["--set", "sigma=zero"],
                        tmp_path)
    assert code == 0
    assert "point mass" in capsys.readouterr().out
    got = rows_by_quantity(out / "density.csv")
    assert set(got) == {"density_point_mass"}
    assert got["density_point_mass"]["value"] == 0.0


def test_json_format(tmp_path):
    code, out = run_cli(["simulate"] + SMALL + ["--format", "json"], tmp_path)
    assert code == 0
    payload = json.loads((out / "simulate.json").read_text())
    assert payload["schema"] == "levyheat csv schema v1"
    assert {r["quantity"] for r in payload["rows"]} == \
        {"u_mean", "u_var", "u_blowups"}
    got = load_rows(str(out / "simulate.json"))
    assert got == payload["rows"]


def test_probe_must_be_on_grid(tmp_path, capsys):
    code, _ = run_cli(["simulate"] + SMALL + ["--set", "probe_x=1.0"],
                      tmp_path)
    assert code == 1
    assert capsys.readouterr().err.startswith("levyheat:error:config:")
