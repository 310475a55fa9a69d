import hashlib
from pathlib import Path

import numpy as np
import pytest

from qndsim import cli
from qndsim import hilbert as hl
from qndsim import trajectories as tr
from qndsim.config import build_model, build_sde, load_config
from qndsim.errors import ConfigError

GAUSSIAN_TABLE = """
[instrument]
kind = gaussian
r = 0
t = 1.0
hbar = 1.0
initial = 1

[output]
dir = {out}
"""

COUNTING_TABLE = """
[instrument]
kind = counting
l = {l}
t = {t}
initial = {initial}

[output]
dir = {out}
"""

SIMULATE = """
[model]
hbar = 1.0
h = 0,0; 0,0
l = {l}
unraveling = {unraveling}
initial = {initial}

[sde]
t_final = {t_final}
dt = {dt}
seed = {seed}
scheme = {scheme}
record_stride = {stride}

[ensemble]
n_paths = {n_paths}

[output]
dir = {out}
"""

SHIFT = """
[shift]
r = 0,0; 0,1
partition = -0.5:0.5, 0.5:1.5
pointer_size = 8
c = sigmax
n_random = 5
seed = 7
p_points = 64

[output]
dir = {out}
"""

ORACLE_DIFF = SIMULATE + """
[oracle_compare]
dt_values = 0.004, 0.002, 0.001
"""

STATS = SIMULATE + """
[ensemble_stats]
times = 0.25, 0.5, 1.0
"""


def write_config(tmp_path, text, name="run.ini", **kw):
    path = tmp_path / name
    path.write_text(text.format(**kw))
    return str(path)


def tree_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def read_table(path: Path):
    header, rows = {}, []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key.strip()] = val
        elif line.strip():
            rows.append(line.split(","))
    return header, rows


class TestInstrumentTable:
    def test_gaussian_scalar_integrates_to_one(self, tmp_path):
        cfgp = write_config(tmp_path, GAUSSIAN_TABLE, out=tmp_path / "out")
        assert cli.main(["instrument-table", "--config", cfgp]) == 0
        header, rows = read_table(tmp_path / "out" / "instrument_table.csv")
        assert abs(float(header["density_total"]) - 1.0) <= 1e-6
        ys = np.array([float(r[0]) for r in rows])
        gs = np.array([float(r[1]) for r in rows])
        h = 2 * np.pi
        np.testing.assert_allclose(gs, np.sqrt(1 / h) * np.exp(-np.pi * ys ** 2 / h),
                                   atol=1e-12)
        assert (tmp_path / "out" / "instrument_table.png").exists()

    def test_counting_identity_is_poisson(self, tmp_path):
        cfgp = write_config(tmp_path, COUNTING_TABLE, l="1,0; 0,1", t="2.0",
                            initial="1,0", out=tmp_path / "out")
        assert cli.main(["instrument-table", "--config", cfgp]) == 0
        _, rows = read_table(tmp_path / "out" / "instrument_table.csv")
        ns = np.array([int(r[0]) for r in rows])
        ps = np.array([float(r[1]) for r in rows])
        from scipy.stats import poisson
        np.testing.assert_allclose(ps, poisson.pmf(ns, 2.0), atol=1e-12)

    def test_counting_eigenstate_poisson_closure(self, tmp_path):
        cfgp = write_config(tmp_path, COUNTING_TABLE, l="2,0; 0,2", t="1.0",
                            initial="1,0", out=tmp_path / "out")
        assert cli.main(["instrument-table", "--config", cfgp]) == 0
        _, rows = read_table(tmp_path / "out" / "instrument_table.csv")
        ps = np.array([float(r[1]) for r in rows])
        from scipy.stats import poisson
        np.testing.assert_allclose(ps, poisson.pmf(np.arange(len(ps)), 4.0),
                                   rtol=1e-9, atol=1e-15)

    def test_bad_kind_diagnostic_names_field(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, GAUSSIAN_TABLE.replace("gaussian", "fourier"),
                            out=tmp_path / "out")
        assert cli.main(["instrument-table", "--config", cfgp]) == 2
        assert "[instrument] kind" in capsys.readouterr().err


class TestSimulate:
    def test_single_free_path_unitary(self, tmp_path):
        cfgp = write_config(tmp_path, SIMULATE, l="0,0; 0,0",
                            unraveling="diffusive", initial="1,0",
                            t_final="1.0", dt="0.01", seed="5",
                            scheme="euler_maruyama", stride="10", n_paths="1",
                            out=tmp_path / "out")
        assert cli.main(["simulate", "--config", cfgp]) == 0
        rec = tr.load_trajectory(tmp_path / "out" / "traj_00000.csv")
        np.testing.assert_allclose(rec.weight, np.ones(11), atol=0)
        header, rows = read_table(tmp_path / "out" / "manifest.csv")
        assert header["failed_paths"] == "0"
        assert rows == [["0", "ok", "traj_00000.csv"]]
        assert (tmp_path / "out" / "trajectories.png").exists()

    def test_counting_counts_replay_generator(self, tmp_path):
        cfgp = write_config(tmp_path, SIMULATE, l="0.5,0; 0,1.5",
                            unraveling="counting", initial="0.707,0.707",
                            t_final="2.0", dt="0.01", seed="31",
                            scheme="exact_piecewise", stride="20", n_paths="4",
                            out=tmp_path / "out")
        assert cli.main(["simulate", "--config", cfgp]) == 0
        sde = tr.SDEConfig(t_final=2.0, dt=0.01, seed=31,
                           scheme=tr.EXACT_PIECEWISE, record_stride=20)
        for stream in range(4):
            rec = tr.load_trajectory(tmp_path / "out" / f"traj_{stream:05d}.csv")
            jumps = tr.poisson_path(sde, stream)
            for t, n in zip(rec.times, rec.output):
                assert n == np.sum(jumps <= t)

    def test_blowup_flagged_nonzero_exit(self, tmp_path):
        cfgp = write_config(tmp_path, SIMULATE, l="0,0; 0,10",
                            unraveling="diffusive", initial="0,1",
                            t_final="20.0", dt="0.1", seed="1",
                            scheme="euler_maruyama", stride="1", n_paths="2",
                            out=tmp_path / "out")
        with pytest.warns(UserWarning):
            assert cli.main(["simulate", "--config", cfgp]) == 1
        header, rows = read_table(tmp_path / "out" / "manifest.csv")
        assert int(header["failed_paths"]) >= 1
        assert any(r[1] == "blowup" for r in rows)

    def test_paths_and_seed_overrides(self, tmp_path):
        cfgp = write_config(tmp_path, SIMULATE, l="0,0; 0,1",
                            unraveling="diffusive", initial="1,0",
                            t_final="0.5", dt="0.01", seed="5",
                            scheme="euler_maruyama", stride="50", n_paths="1",
                            out=tmp_path / "out")
        assert cli.main(["simulate", "--config", cfgp, "--paths", "3",
                         "--seed", "99"]) == 0
        _, rows = read_table(tmp_path / "out" / "manifest.csv")
        assert len(rows) == 3
        rec = tr.load_trajectory(tmp_path / "out" / "traj_00002.csv")
        assert rec.seed == 99


class TestShiftCheck:
    def test_report_contents(self, tmp_path):
        cfgp = write_config(tmp_path, SHIFT, out=tmp_path / "out")
        assert cli.main(["shift-check", "--config", cfgp]) == 0
        _, rows = read_table(tmp_path / "out" / "shift_check.csv")
        table = {(r[0], r[1]): float(r[2]) for r in rows}
        assert table[("unitarity_defect", "")] <= 1e-10
        assert table[("hcomm", "sigmax")] <= 1e-12
        assert table[("icomm", "sigmax")] >= 1e-3
        for j in range(5):
            assert table[("hcomm", f"random_{j:02d}")] <= 1e-12
        assert table[("char_max_error", "")] <= 1e-10
        assert (tmp_path / "out" / "characteristic.png").exists()

    def test_pointer_too_small_fails(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, SHIFT.replace("pointer_size = 8",
                                                    "pointer_size = 2"),
                            out=tmp_path / "out")
        assert cli.main(["shift-check", "--config", cfgp]) == 1
        assert "pointer" in capsys.readouterr().err


class TestEnsembleStats:
    def test_reports_and_tolerances(self, tmp_path):
        cfgp = write_config(tmp_path, STATS, l="0,0; 0,0.5",
                            unraveling="diffusive", initial="0.707,0.707",
                            t_final="1.0", dt="0.002", seed="42",
                            scheme="euler_maruyama", stride="25", n_paths="800",
                            out=tmp_path / "out")
        assert cli.main(["ensemble-stats", "--config", cfgp]) == 0
        header, rows = read_table(tmp_path / "out" / "rho_compare.csv")
        assert [float(r[0]) for r in rows] == [0.25, 0.5, 1.0]
        budget = float(header["trace_distance_budget"])
        assert all(float(r[1]) <= budget for r in rows)
        hh, hr = read_table(tmp_path / "out" / "output_hist.csv")
        masses = np.array([float(r[1]) for r in hr])
        assert abs(masses.sum() - 1.0) <= 1e-12
        assert (tmp_path / "out" / "rho_compare.png").exists()
        assert (tmp_path / "out" / "output_hist.png").exists()

    def test_free_model_distance_is_tiny(self, tmp_path):
        cfgp = write_config(tmp_path, STATS, l="0,0; 0,0",
                            unraveling="diffusive", initial="0.6,0.8",
                            t_final="1.0", dt="0.01", seed="42",
                            scheme="euler_maruyama", stride="25", n_paths="3",
                            out=tmp_path / "out")
        assert cli.main(["ensemble-stats", "--config", cfgp]) == 0
        _, rows = read_table(tmp_path / "out" / "rho_compare.csv")
        assert all(float(r[1]) <= 1e-10 for r in rows)


class TestOracleCompare:
    def test_counting_exactness(self, tmp_path):
        cfgp = write_config(tmp_path, ORACLE_DIFF, l="0.5,0; 0,1.5",
                            unraveling="counting", initial="0.707,0.707",
                            t_final="2.0", dt="0.001", seed="13",
                            scheme="exact_piecewise", stride="100", n_paths="25",
                            out=tmp_path / "out")
        assert cli.main(["oracle-compare", "--config", cfgp]) == 0
        _, rows = read_table(tmp_path / "out" / "convergence.csv")
        assert len(rows) == 3
        assert all(float(r[1]) <= 1e-12 for r in rows)

    def test_diffusive_convergence_report(self, tmp_path):
        cfgp = write_config(tmp_path, ORACLE_DIFF, l="0,0; 0,1",
                            unraveling="diffusive", initial="0.707,0.707",
                            t_final="1.0", dt="0.001", seed="11",
                            scheme="euler_maruyama", stride="1", n_paths="100",
                            out=tmp_path / "out")
        assert cli.main(["oracle-compare", "--config", cfgp]) == 0
        header, rows = read_table(tmp_path / "out" / "convergence.csv")
        assert float(header["fitted_order"]) >= 0.5
        errs = [float(r[1]) for r in rows]
        assert errs == sorted(errs, reverse=True)
        assert (tmp_path / "out" / "convergence.png").exists()

    def test_regime_guard_exits_one(self, tmp_path, capsys):
        text = ORACLE_DIFF.replace("h = 0,0; 0,0", "h = 0.1,0; 0,-0.1")
        cfgp = write_config(tmp_path, text, l="0,0; 0,1",
                            unraveling="diffusive", initial="0.707,0.707",
                            t_final="1.0", dt="0.001", seed="11",
                            scheme="euler_maruyama", stride="1", n_paths="10",
                            out=tmp_path / "out")
        assert cli.main(["oracle-compare", "--config", cfgp]) == 1
        assert "H = 0" in capsys.readouterr().err


class TestDeterminism:
    @pytest.mark.parametrize("command,template,kw", [
        ("instrument-table", GAUSSIAN_TABLE, {}),
        ("simulate", SIMULATE,
         dict(l="0,0; 0,0.5", unraveling="diffusive", initial="0.707,0.707",
              t_final="0.5", dt="0.01", seed="21", scheme="euler_maruyama",
              stride="10", n_paths="3")),
        ("shift-check", SHIFT, {}),
        ("ensemble-stats", STATS,
         dict(l="0,0; 0,0.5", unraveling="diffusive", initial="0.707,0.707",
              t_final="1.0", dt="0.01", seed="21", scheme="euler_maruyama",
              stride="25", n_paths="50")),
        ("oracle-compare", ORACLE_DIFF,
         dict(l="0,0; 0,1", unraveling="diffusive", initial="0.707,0.707",
              t_final="1.0", dt="0.001", seed="11", scheme="euler_maruyama",
              stride="1", n_paths="20")),
    ])
    def test_byte_identical_reruns(self, tmp_path, command, template, kw):
        digests = []
        for run in ("a", "b"):
            out = tmp_path / run
            cfgp = write_config(tmp_path, template, name=f"{run}.ini",
                                out=out, **kw)
            assert cli.main([command, "--config", cfgp]) == 0
            digests.append(tree_digest(out))
        assert digests[0] == digests[1]


class TestConfigParsing:
    def test_matrix_file_reference(self, tmp_path):
        op = hl.Operator(np.array([[0, 1j], [-1j, 0]], dtype=complex))
        hl.save_operator(op, tmp_path / "L.txt")
        text = SIMULATE.format(l="@L.txt", unraveling="diffusive",
                               initial="1,0", t_final="0.5", dt="0.01",
                               seed="3", scheme="euler_maruyama", stride="10",
                               n_paths="1", out=tmp_path / "out")
        path = tmp_path / "run.ini"
        path.write_text(text)
        cfg = load_config(path)
        model = build_model(cfg)
        assert np.array_equal(model.L.mat, op.mat)

    def test_missing_seed_is_an_error(self, tmp_path, capsys):
        text = SIMULATE.format(l="0,0; 0,1", unraveling="diffusive",
                               initial="1,0", t_final="0.5", dt="0.01",
                               seed="3", scheme="euler_maruyama", stride="10",
                               n_paths="1", out=tmp_path / "out")
        text = "\n".join(ln for ln in text.splitlines()
                         if not ln.startswith("seed"))
        (tmp_path / "run.ini").write_text(text)
        assert cli.main(["simulate", "--config", str(tmp_path / "run.ini")]) == 2
        assert "[sde] seed" in capsys.readouterr().err

    def test_unknown_field_rejected(self, tmp_path):
        (tmp_path / "run.ini").write_text("[sde]\nwobble = 3\n")
        with pytest.raises(ConfigError, match=r"\[sde\] wobble"):
            load_config(tmp_path / "run.ini")

    def test_dimension_mismatch_diagnostic(self, tmp_path):
        text = SIMULATE.format(l="0,0; 0,1", unraveling="diffusive",
                               initial="1,0,0", t_final="0.5", dt="0.01",
                               seed="3", scheme="euler_maruyama", stride="10",
                               n_paths="1", out=tmp_path / "out")
        (tmp_path / "run.ini").write_text(text)
        with pytest.raises(ConfigError, match="inconsistent dimensions"):
            build_model(load_config(tmp_path / "run.ini"))

    def test_state_normalized_on_load(self, tmp_path):
        text = SIMULATE.format(l="0,0; 0,1", unraveling="diffusive",
                               initial="3,4", t_final="0.5", dt="0.01",
                               seed="3", scheme="euler_maruyama", stride="10",
                               n_paths="1", out=tmp_path / "out")
        (tmp_path / "run.ini").write_text(text)
        model = build_model(load_config(tmp_path / "run.ini"))
        np.testing.assert_allclose(model.initial.vec, [0.6, 0.8], atol=1e-15)

    def test_complex_entries(self, tmp_path):
        text = SIMULATE.format(l="0, 0.5-0.5j; 0.5+0.5j, 0",
                               unraveling="diffusive", initial="1,0",
                               t_final="0.5", dt="0.01", seed="3",
                               scheme="euler_maruyama", stride="10",
                               n_paths="1", out=tmp_path / "out")
        (tmp_path / "run.ini").write_text(text)
        model = build_model(load_config(tmp_path / "run.ini"))
        assert model.L.mat[0, 1] == 0.5 - 0.5j
        assert model.L.is_hermitian()

    def test_hash_changes_with_overrides(self, tmp_path):
        cfgp = write_config(tmp_path, SHIFT, out=tmp_path / "out")
        a = load_config(cfgp)
        b = load_config(cfgp, {("shift", "seed"): 123})
        assert a.hash() != b.hash()
        assert a.hash() == load_config(cfgp).hash()

    def test_sde_config_roundtrip(self, tmp_path):
        text = SIMULATE.format(l="0,0; 0,1", unraveling="diffusive",
                               initial="1,0", t_final="2.0", dt="0.004",
                               seed="3", scheme="euler_maruyama", stride="100",
                               n_paths="1", out=tmp_path / "out")
        (tmp_path / "run.ini").write_text(text)
        sde = build_sde(load_config(tmp_path / "run.ini"))
        assert sde.n_steps == 500
        assert sde.record_times[-1] == pytest.approx(2.0)
