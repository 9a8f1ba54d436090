"""End-to-end and unit tests for the command-line interface."""

import dataclasses
import json

import numpy as np
import pytest

from pitpinn import cli
from pitpinn.cli import (ConfigError, build_parser, build_train_config,
                         load_hyperparameters, main)
from pitpinn.metrics import FieldSnapshot, export_snapshot, import_snapshot_csv
from pitpinn.refsolver import TimeStepUnderflow
from pitpinn.scenarios import builtin_scenario, scenario_to_file
from pitpinn.training import NonFiniteLoss

TINY_HYPER = """\
[meta]
schema_version = 1

[hyperparameters]
m_f = 4
sigma_x = 2.0
sigma_t = 0.4
m_w = 8
m_h = 2
N_g = 4 3 3
N_b = 12
N_i = 8
S_s = 1
alpha_w = 0.5
eta = 0.0005
"""


def write_tiny_hyper(tmp_path):
    path = tmp_path / "hyper.ini"
    path.write_text(TINY_HYPER)
    return str(path)


def write_short_scenario(tmp_path, t_end=0.002):
    scen = dataclasses.replace(builtin_scenario("2d-2pit"), t_end=t_end)
    path = tmp_path / "short.ini"
    scenario_to_file(scen, str(path))
    return str(path)


def write_series(tmp_path, name, times=(0.25, 0.5), phi_value=0.5, nx=4):
    x = np.linspace(0.0, 1.0, nx)
    y = np.linspace(0.0, 0.5, 3)
    run = tmp_path / name
    (run / "snapshots").mkdir(parents=True)
    for i, t in enumerate(times):
        snap = FieldSnapshot(time=t, axes=(x, y),
                             phi=np.full((nx, 3), phi_value),
                             c=np.zeros((nx, 3)))
        export_snapshot(snap, str(run / "snapshots" / f"snap_{i:03d}.csv"),
                        fmt="csv")
    return str(run)


class TestParser:
    def test_train_arguments(self):
        args = build_parser().parse_args(
            ["train", "2d-2pit", "--out", "o", "--seed", "7", "--steps", "3",
             "--times", "0.5,1.0", "--resolution", "9x5",
             "--config", "h.ini", "--workers", "2"])
        assert args.command == "train"
        assert args.func is cli.cmd_train
        assert args.scenario == "2d-2pit"
        assert (args.seed, args.steps, args.workers) == (7, 3, 2)

    def test_out_is_required(self, capsys):
        with pytest.raises(SystemExit) as err:
            build_parser().parse_args(["train", "2d-2pit"])
        assert err.value.code == 2
        capsys.readouterr()

    def test_command_is_required(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])
        capsys.readouterr()

    def test_compare_takes_two_run_directories(self):
        args = build_parser().parse_args(["compare", "a", "b"])
        assert (args.pinn_run, args.reference_run) == ("a", "b")
        assert args.out is None


class TestHyperparameterFile:
    def test_full_file_parsed_with_types(self, tmp_path):
        hyper = load_hyperparameters(write_tiny_hyper(tmp_path))
        assert hyper == {"m_f": 4, "sigma_x": 2.0, "sigma_t": 0.4,
                         "m_w": 8, "m_h": 2, "N_g": (4, 3, 3),
                         "N_b": 12, "N_i": 8, "S_s": 1,
                         "alpha_w": 0.5, "eta": 5.0e-4}
        assert isinstance(hyper["m_f"], int)
        assert isinstance(hyper["N_g"], tuple)

    def test_subset_of_keys_is_allowed(self, tmp_path):
        path = tmp_path / "h.ini"
        path.write_text("[hyperparameters]\nm_w = 16\n")
        assert load_hyperparameters(str(path)) == {"m_w": 16}

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "h.ini"
        path.write_text("[hyperparameters]\nm_q = 16\n")
        with pytest.raises(ConfigError, match="m_q"):
            load_hyperparameters(str(path))

    def test_keys_are_case_sensitive(self, tmp_path):
        path = tmp_path / "h.ini"
        path.write_text("[hyperparameters]\nn_g = 4 3 3\n")
        with pytest.raises(ConfigError, match="n_g"):
            load_hyperparameters(str(path))

    def test_missing_section(self, tmp_path):
        path = tmp_path / "h.ini"
        path.write_text("[meta]\nschema_version = 1\n")
        with pytest.raises(ConfigError, match="hyperparameters"):
            load_hyperparameters(str(path))

    def test_bad_schema_version(self, tmp_path):
        path = tmp_path / "h.ini"
        path.write_text("[meta]\nschema_version = 2\n"
                        "[hyperparameters]\nm_w = 8\n")
        with pytest.raises(ConfigError, match="schema_version"):
            load_hyperparameters(str(path))

    def test_non_numeric_value(self, tmp_path):
        path = tmp_path / "h.ini"
        path.write_text("[hyperparameters]\nm_w = eight\n")
        with pytest.raises(ConfigError):
            load_hyperparameters(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_hyperparameters(str(tmp_path / "absent.ini"))


class TestBuildTrainConfig:
    def test_defaults_without_file(self):
        cfg = build_train_config(builtin_scenario("2d-2pit"), {},
                                 steps=None, workers=1)
        assert (cfg.s_max, cfg.s_s) == (1000, 25)
        assert cfg.stagger
        assert (cfg.alpha_w, cfg.eta0) == (0.5, 5.0e-4)
        net = cfg.network
        assert (net.m_f, net.m_w, net.m_h) == (64, 128, 6)
        assert (net.sigma_x, net.sigma_t) == (2.0, 0.4)
        assert net.fourier and net.modified_mlp and net.hard_constraints
        assert cfg.sampling.general_counts == (40, 20, 30)
        assert (cfg.sampling.n_b, cfg.sampling.n_i) == (500, 800)

    def test_hyper_values_override_defaults(self, tmp_path):
        hyper = load_hyperparameters(write_tiny_hyper(tmp_path))
        cfg = build_train_config(builtin_scenario("2d-2pit"), hyper,
                                 steps=7, workers=2)
        assert (cfg.s_max, cfg.s_s, cfg.workers) == (7, 1, 2)
        assert (cfg.network.m_f, cfg.network.m_w, cfg.network.m_h) == (4, 8, 2)
        assert cfg.sampling.general_counts == (4, 3, 3)
        assert (cfg.sampling.n_b, cfg.sampling.n_i) == (12, 8)

    def test_default_counts_depend_on_scenario(self):
        one = build_train_config(builtin_scenario("3d-1pit"), {}, None, 1)
        two = build_train_config(builtin_scenario("3d-2pit"), {}, None, 1)
        assert one.sampling.general_counts == (20, 20, 15, 30)
        assert two.sampling.general_counts == (30, 20, 15, 30)

    @pytest.mark.parametrize("variant,off", [
        ("sharp", ()),
        ("no-stagger", ("stagger",)),
        ("no-hard-constraints", ("hard_constraints",)),
        ("no-modified-mlp", ("modified_mlp",)),
        ("no-fourier", ("fourier",)),
        ("plain", ("stagger", "hard_constraints", "modified_mlp", "fourier")),
    ])
    def test_variant_switches_exactly_its_flags(self, variant, off):
        cfg = build_train_config(builtin_scenario("2d-2pit"), {}, None, 1,
                                 variant=variant)
        flags = {"stagger": cfg.stagger,
                 "hard_constraints": cfg.network.hard_constraints,
                 "modified_mlp": cfg.network.modified_mlp,
                 "fourier": cfg.network.fourier}
        for name, value in flags.items():
            assert value == (name not in off)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError, match="variant"):
            build_train_config(builtin_scenario("2d-2pit"), {}, None, 1,
                               variant="bogus")


@pytest.fixture(scope="module")
def train_run(tmp_path_factory):
    """One tiny training invocation shared by the inspection tests."""
    tmp = tmp_path_factory.mktemp("cli_train")
    hyper = write_tiny_hyper(tmp)
    out = tmp / "run"
    code = main(["train", "2d-2pit", "--out", str(out), "--seed", "3",
                 "--steps", "2", "--config", hyper,
                 "--times", "0.5,1.0", "--resolution", "6x4"])
    assert code == 0
    return out


class TestTrainCommand:
    def test_manifest_describes_the_run(self, train_run):
        manifest = json.loads((train_run / "manifest.json").read_text())
        assert manifest["schema_version"] == 1
        assert manifest["command"] == "train"
        assert manifest["seed"] == 3
        assert manifest["build"].startswith("pitpinn ")
        assert "created" in manifest
        assert manifest["config"]["s_max"] == 2
        assert manifest["config"]["network"]["m_f"] == 4
        assert manifest["eval_resolution"] == [6, 4]
        assert manifest["scenario"]["dim"] == 2
        assert manifest["scenario"]["l_c"] == 1.0e-4

    def test_artifacts_present(self, train_run):
        for name in ("checkpoint_initial.bin", "checkpoint_final.bin",
                     "history.tsv"):
            assert (train_run / name).exists()
        for i in range(2):
            assert (train_run / "snapshots" / f"snap_{i:03d}.csv").exists()
            assert (train_run / "snapshots" / f"snap_{i:03d}.vtk").exists()

    def test_history_has_one_row_per_step(self, train_run):
        lines = (train_run / "history.tsv").read_text().splitlines()
        assert lines[0].startswith("step\t")
        assert len(lines) == 3

    def test_snapshots_carry_requested_times(self, train_run):
        snap0 = import_snapshot_csv(str(train_run / "snapshots" /
                                        "snap_000.csv"))
        snap1 = import_snapshot_csv(str(train_run / "snapshots" /
                                        "snap_001.csv"))
        assert (snap0.time, snap1.time) == (0.5, 1.0)
        assert snap1.phi.shape == (6, 4)
        assert np.all(np.isfinite(snap1.phi)) and np.all(np.isfinite(snap1.c))

    def test_identical_invocations_reproduce_artifacts(self, train_run,
                                                       tmp_path):
        hyper = write_tiny_hyper(tmp_path)
        out = tmp_path / "again"
        code = main(["train", "2d-2pit", "--out", str(out), "--seed", "3",
                     "--steps", "2", "--config", hyper,
                     "--times", "0.5,1.0", "--resolution", "6x4"])
        assert code == 0
        for name in ("checkpoint_final.bin", "history.tsv"):
            assert (out / name).read_bytes() == \
                (train_run / name).read_bytes()
        assert (out / "snapshots" / "snap_001.csv").read_bytes() == \
            (train_run / "snapshots" / "snap_001.csv").read_bytes()

    def test_seed_changes_the_result(self, train_run, tmp_path):
        hyper = write_tiny_hyper(tmp_path)
        out = tmp_path / "other"
        code = main(["train", "2d-2pit", "--out", str(out), "--seed", "4",
                     "--steps", "2", "--config", hyper,
                     "--times", "0.5,1.0", "--resolution", "6x4"])
        assert code == 0
        assert (out / "checkpoint_final.bin").read_bytes() != \
            (train_run / "checkpoint_final.bin").read_bytes()

    def test_zero_steps_still_exports(self, tmp_path):
        hyper = write_tiny_hyper(tmp_path)
        out = tmp_path / "zero"
        code = main(["train", "2d-2pit", "--out", str(out), "--seed", "0",
                     "--steps", "0", "--config", hyper,
                     "--times", "1.0", "--resolution", "5x3"])
        assert code == 0
        lines = (out / "history.tsv").read_text().splitlines()
        assert len(lines) == 1
        assert (out / "snapshots" / "snap_000.csv").exists()
        assert (out / "checkpoint_initial.bin").read_bytes() == \
            (out / "checkpoint_final.bin").read_bytes()


class TestReferenceCommand:
    def test_short_solve_end_to_end(self, tmp_path, capsys):
        scen_file = write_short_scenario(tmp_path, t_end=0.002)
        out = tmp_path / "ref"
        code = main(["reference", scen_file, "--out", str(out),
                     "--times", "0,0.002", "--resolution", "41x21"])
        assert code == 0
        snap0 = import_snapshot_csv(str(out / "snapshots" / "snap_000.csv"))
        assert snap0.time == 0.0
        assert snap0.phi.shape == (41, 21)
        assert snap0.phi.max() > 0.99 and snap0.phi.min() < 0.35
        snap1 = import_snapshot_csv(str(out / "snapshots" / "snap_001.csv"))
        assert snap1.time == pytest.approx(0.002)
        steps = (out / "steps.tsv").read_text().splitlines()
        assert steps[0] == "time\tdt\tnewton_iters"
        assert len(steps) >= 2
        trace = (out / "dt_trace.txt").read_text().split()
        assert trace and set(trace) <= {"1.5", "1", "0.5"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "reference"
        assert "steps in" in capsys.readouterr().out


class TestCompareCommand:
    def test_self_comparison_is_zero(self, tmp_path, capsys):
        run = write_series(tmp_path, "a")
        out = tmp_path / "rep"
        code = main(["compare", run, run, "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["max_rms"] == 0.0
        assert report["space_time_rms"] == 0.0
        assert "max rms" in capsys.readouterr().out

    def test_constant_offset_is_reported(self, tmp_path, capsys):
        a = write_series(tmp_path, "a", phi_value=0.75)
        b = write_series(tmp_path, "b", phi_value=0.5)
        code = main(["compare", a, b, "--out", str(tmp_path / "rep")])
        assert code == 0
        report = json.loads((tmp_path / "rep" / "report.json").read_text())
        assert report["max_rms"] == pytest.approx(0.25)
        capsys.readouterr()

    def test_report_defaults_into_first_run(self, tmp_path, capsys):
        run = write_series(tmp_path, "a")
        code = main(["compare", run, run])
        assert code == 0
        assert (tmp_path / "a" / "report.json").exists()
        capsys.readouterr()

    def test_grid_mismatch_exits_4(self, tmp_path, capsys):
        a = write_series(tmp_path, "a", nx=4)
        b = write_series(tmp_path, "b", nx=5)
        code = main(["compare", a, b, "--out", str(tmp_path / "rep")])
        assert code == 4
        assert "error:" in capsys.readouterr().err

    def test_missing_snapshot_directory_exits_4(self, tmp_path, capsys):
        a = write_series(tmp_path, "a")
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["compare", a, str(empty), "--out",
                     str(tmp_path / "rep")])
        assert code == 4
        assert "snapshots" in capsys.readouterr().err


class TestAblateCommand:
    def test_single_variant_table(self, tmp_path, capsys):
        scen_file = write_short_scenario(tmp_path, t_end=0.002)
        hyper = write_tiny_hyper(tmp_path)
        out = tmp_path / "abl"
        code = main(["ablate", scen_file, "--out", str(out), "--seed", "1",
                     "--steps", "1", "--config", hyper,
                     "--variants", "plain",
                     "--times", "0.002", "--resolution", "41x21"])
        assert code == 0
        table = (out / "ablation.tsv").read_text().splitlines()
        assert table[0] == "variant\tfinal_rms\twall_s"
        assert len(table) == 2
        fields = table[1].split("\t")
        assert fields[0] == "plain"
        assert float(fields[1]) >= 0.0 and float(fields[2]) >= 0.0
        assert (out / "plain" / "snapshots" / "snap_000.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["variants"] == ["plain"]
        assert "training variant plain" in capsys.readouterr().out

    def test_unknown_variant_exits_config(self, tmp_path, capsys):
        code = main(["ablate", "2d-2pit", "--out", str(tmp_path / "o"),
                     "--variants", "warp"])
        assert code == 2
        assert "warp" in capsys.readouterr().err


class TestExitCodes:
    def test_unknown_scenario(self, tmp_path, capsys):
        code = main(["train", "no-such", "--out", str(tmp_path / "o")])
        assert code == 2
        assert "no-such" in capsys.readouterr().err

    def test_bad_times(self, tmp_path, capsys):
        code = main(["train", "2d-2pit", "--out", str(tmp_path / "o"),
                     "--times", "soon"])
        assert code == 2
        capsys.readouterr()

    def test_empty_times(self, tmp_path, capsys):
        code = main(["train", "2d-2pit", "--out", str(tmp_path / "o"),
                     "--times", " "])
        assert code == 2
        capsys.readouterr()

    def test_resolution_needs_one_count_per_axis(self, tmp_path, capsys):
        code = main(["train", "2d-2pit", "--out", str(tmp_path / "o"),
                     "--resolution", "10"])
        assert code == 2
        capsys.readouterr()

    def test_resolution_counts_must_be_at_least_2(self, tmp_path, capsys):
        code = main(["train", "2d-2pit", "--out", str(tmp_path / "o"),
                     "--resolution", "1x5"])
        assert code == 2
        capsys.readouterr()

    def test_bad_config_file(self, tmp_path, capsys):
        bad = tmp_path / "h.ini"
        bad.write_text("[hyperparameters]\nwidth = 9\n")
        code = main(["train", "2d-2pit", "--out", str(tmp_path / "o"),
                     "--config", str(bad)])
        assert code == 2
        assert "width" in capsys.readouterr().err

    def test_nonfinite_loss_exits_3_after_manifest(self, tmp_path,
                                                   monkeypatch, capsys):
        def explode(*args, **kwargs):
            raise NonFiniteLoss("loss became non-finite at step 0")

        monkeypatch.setattr(cli, "train", explode)
        out = tmp_path / "o"
        code = main(["train", "2d-2pit", "--out", str(out), "--steps", "1"])
        assert code == 3
        # the manifest must land before any compute so a dead run is
        # still identifiable
        assert (out / "manifest.json").exists()
        assert "non-finite" in capsys.readouterr().err

    def test_timestep_underflow_exits_1(self, tmp_path, monkeypatch, capsys):
        def stall(*args, **kwargs):
            raise TimeStepUnderflow("dt fell below its floor")

        monkeypatch.setattr(cli, "solve_reference", stall)
        code = main(["reference", "2d-2pit", "--out", str(tmp_path / "o")])
        assert code == 1
        assert "floor" in capsys.readouterr().err
