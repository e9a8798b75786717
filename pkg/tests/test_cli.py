import dataclasses
import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldgbspde import cli
from ldgbspde.cli import (CSV_HEADER, NON_SEMANTIC, ConfigError, RunConfig, RunError, RunReport, emit_profile,
                          expand_grid, filter_configs, load_report, main, preset_configs, run, sweep)
from ldgbspde.meshspace import make_space
from ldgbspde.projection import project_l2
from ldgbspde.problems import example1

GOLDEN = Path(__file__).parent / "golden"


def fast_lsmc(**kw):
    base = dict(backend="lsmc", N=6, k=1, dt=0.1, seed=0, lsmc_paths=500, lsmc_degree=3, record_timing=False)
    base.update(kw)
    return RunConfig(**base)


configs = st.builds(
    RunConfig,
    problem=st.sampled_from(["example1", "example2"]),
    k=st.integers(1, 8),
    N=st.integers(2, 10_000),
    dt=st.floats(1e-4, 0.5),
    backend=st.sampled_from(["dbdp", "lsmc"]),
    basis=st.sampled_from(["legendre", "lagrange"]),
    quad_order=st.one_of(st.none(), st.integers(9, 32)),
    flux=st.sampled_from(["u-minus", "u-plus"]),
    seed=st.integers(0, 2**63 - 1),
    lsmc_paths=st.integers(1, 10**6),
    dbdp_lr=st.floats(1e-6, 1.0),
    dbdp_beta2=st.floats(0.0, 0.999999),
    dbdp_terminal_steps=st.one_of(st.none(), st.integers(1, 5000)),
    dbdp_warm_start=st.booleans(),
    out_dir=st.one_of(st.none(), st.text("abc/_-", min_size=1, max_size=12)),
)


@given(configs)
def test_config_round_trip(cfg):
    cfg.validate()
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def _alternative(value):
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + 1
    if isinstance(value, float):
        return value * 0.5
    if value is None:
        return 3
    return value + "x"


@pytest.mark.parametrize("name", [f.name for f in dataclasses.fields(RunConfig)])
def test_hash_changes_iff_semantic_field_changes(name):
    cfg = RunConfig(seed=1)
    changed = dataclasses.replace(cfg, **{name: _alternative(getattr(cfg, name))})
    if name in NON_SEMANTIC:
        assert changed.config_hash() == cfg.config_hash()
    else:
        assert changed.config_hash() != cfg.config_hash()


def test_hash_is_git_blob_hash():
    import hashlib
    cfg = RunConfig(seed=5)
    body = cfg.semantic_text().encode()
    assert cfg.config_hash() == hashlib.sha1(b"blob " + str(len(body)).encode() + b"\0" + body).hexdigest()


def test_config_grammar_errors():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_text("colour = red\n")
    with pytest.raises(ConfigError, match="repeated"):
        RunConfig.from_text("k = 2\nk = 3\n")
    with pytest.raises(ConfigError, match="expected"):
        RunConfig.from_text("k 2\n")
    with pytest.raises(ConfigError, match="parse"):
        RunConfig.from_text("k = two\n")
    cfg = RunConfig.from_text("# comment\n\nk = 3\nquad_order = none\ndbdp_warm_start = false\n")
    assert (cfg.k, cfg.quad_order, cfg.dbdp_warm_start) == (3, None, False)


def test_seed_is_mandatory_and_ranges_checked():
    with pytest.raises(ConfigError, match="seed"):
        RunConfig().validate()
    for bad in (dict(k=0), dict(N=1), dict(dt=0.0), dict(backend="mc"), dict(problem="nope"), dict(dt=0.7)):
        with pytest.raises(ConfigError):
            RunConfig(seed=0, **bad).validate()


def test_csv_header_matches_golden():
    assert (GOLDEN / "header.csv").read_text() == CSV_HEADER + "\n"


def test_tiny_lsmc_run_completes(tmp_path):
    rep = run(fast_lsmc(lsmc_paths=10, lsmc_degree=1, out_dir=str(tmp_path / "out")))
    assert rep.status == "ok" and np.isfinite(rep.R_E)
    lines = (tmp_path / "out" / "result.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 2
    data = json.loads((tmp_path / "out" / "report.json").read_text())
    assert data["config_hash"] == rep.config_hash and data["version"] == "0.1.0"
    assert len(data["history"]) == 5


def test_failed_run_carries_config_and_cleans_up(tmp_path):
    out = tmp_path / "new"
    with pytest.raises(RunError) as info:
        run(fast_lsmc(lsmc_paths=3, lsmc_degree=6, out_dir=str(out)))
    assert "RankDeficiencyError" in str(info.value)
    assert "lsmc_paths = 3" in str(info.value)
    assert info.value.config.lsmc_paths == 3
    assert not out.exists()


def test_sweep_records_failures_as_rows(tmp_path):
    csv = tmp_path / "s.csv"
    reports = sweep([fast_lsmc(), fast_lsmc(lsmc_paths=3, lsmc_degree=6)], str(csv))
    assert [r.status for r in reports] == ["ok", "failed"]
    rows = csv.read_text().splitlines()
    assert rows[0] == CSV_HEADER and len(rows) == 3
    assert rows[2].split(",")[6] == "nan"
    side = json.loads(Path(str(csv) + ".json").read_text())
    assert side[1]["status"] == "failed" and "RankDeficiencyError" in side[1]["error"]


def test_sweep_rejects_empty():
    with pytest.raises(ConfigError, match="no runnable configs"):
        sweep(filter_configs([fast_lsmc()], ["N=99"]), "unused.csv")


def test_lsmc_sweep_byte_identical(tmp_path):
    cfgs = expand_grid([fast_lsmc()], ["N=4,6", "seed=0,1"])
    assert len(cfgs) == 4
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    sweep(cfgs, str(a))
    sweep(cfgs, str(b), jobs=2)
    assert a.read_bytes() == b.read_bytes()
    assert Path(str(a) + ".json").read_bytes() == Path(str(b) + ".json").read_bytes()


def test_preset_grid():
    cfgs = preset_configs("table1", RunConfig(seed=0))
    assert len(cfgs) == 12
    assert {c.problem for c in cfgs} == {"example1"}
    assert [(c.dt, c.N) for c in cfgs[:6]] == cli.TABLE_GRID
    assert len(filter_configs(cfgs, ["k=3", "dt=0.0167"])) == 2
    with pytest.raises(ConfigError):
        preset_configs("table9", RunConfig(seed=0))


def _projection_report(N=20, k=2):
    pb = example1()
    space = make_space(pb.b, N, k)
    coef = project_l2(pb.u0, space).coef
    cfg = RunConfig(seed=0, N=N, k=k)
    return RunReport(config=cfg.to_dict(), config_hash=cfg.config_hash(), status="ok", R_E=0.0,
                     wall_seconds=0.0, u0_coef=coef.tolist())


def test_profile_of_exact_projection(tmp_path):
    rep = _projection_report()
    path = tmp_path / "p.csv"
    emit_profile(rep, 512, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "x,u_h,u0" and len(lines) == 513
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert data[0, 0] == 0.0 and data[-1, 0] == pytest.approx(2 * np.pi)
    # cellwise quadratic projection of cos on h = 2 pi / 20: pointwise error well below h^3
    assert np.max(np.abs(data[:, 1] - data[:, 2])) <= (2 * np.pi / 20) ** 3


def test_profile_rejects_zero_points(tmp_path):
    with pytest.raises(ValueError):
        emit_profile(_projection_report(), 0, str(tmp_path / "p.csv"))


def test_main_run_sweep_profile(tmp_path, capsys):
    conf = tmp_path / "c.txt"
    conf.write_text("backend = lsmc\nN = 6\nk = 1\ndt = 0.1\nseed = 2\nlsmc_paths = 400\nlsmc_degree = 3\n")
    out = tmp_path / "run"
    assert main(["run", "--config", str(conf), "--lsmc-paths", "600", "--out-dir", str(out), "--no-timing"]) == 0
    rep = load_report(str(out / "report.json"))
    assert rep.config["lsmc_paths"] == 600 and rep.wall_seconds == 0.0
    assert capsys.readouterr().out.strip() == rep.csv_row()

    csv = tmp_path / "s.csv"
    assert main(["sweep", "--config", str(conf), "--grid", "k=1,2", "--csv", str(csv)]) == 0
    assert len(csv.read_text().splitlines()) == 3

    prof = tmp_path / "prof.csv"
    assert main(["profile", "--report", str(out / "report.json"), "--points", "16", "--out", str(prof)]) == 0
    assert len(prof.read_text().splitlines()) == 17
    assert main(["profile", "--report", str(out / "report.json"), "--points", "0", "--out", str(prof)]) == 1


def test_main_exit_codes(tmp_path, capsys):
    assert main(["run", "--backend", "lsmc"]) == 2  # no seed
    assert "seed is mandatory" in capsys.readouterr().err
    assert main(["run", "--seed", "0", "--backend", "lsmc", "--N", "4", "--k", "1", "--lsmc-paths", "3",
                 "--lsmc-degree", "6"]) == 1
    csv = tmp_path / "s.csv"
    assert main(["sweep", "--seed", "0", "--backend", "lsmc", "--N", "4", "--k", "1", "--lsmc-paths", "3",
                 "--lsmc-degree", "6", "--csv", str(csv)]) == 1
    assert csv.exists()
    assert main(["sweep", "--seed", "0", "--where", "k=5", "--csv", str(csv)]) == 2


def test_dbdp_run_example1():
    rep = run(RunConfig(problem="example1", k=2, N=10, dt=0.05, backend="dbdp", seed=0))
    assert rep.R_E <= 1e-2
    assert rep.settings["time_steps"] == 10
    assert [h["stage"] for h in rep.history] == list(range(9, -1, -1))
    # best-run profile: pointwise gap on 512 points
    path = os.path.join(os.environ.get("TMPDIR", "/tmp"), f"ldgbspde-profile-{os.getpid()}.csv")
    emit_profile(rep, 512, path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    os.remove(path)
    assert np.max(np.abs(data[:, 1] - data[:, 2])) <= 0.05


def test_dbdp_run_k3_N50_completes():
    """The finest published k=3 grid runs to completion and records R_E, however accurate."""
    rep = run(RunConfig(problem="example1", k=3, N=50, dt=0.05, backend="dbdp", seed=0))
    assert rep.status == "ok" and np.isfinite(rep.R_E)
    assert len(rep.u0_coef) == 4 and len(rep.u0_coef[0]) == 50
