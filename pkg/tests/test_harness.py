import csv
import dataclasses
import json

import numpy as np
import pytest

from vns.cli import main
from vns.harness import coupled as coupled_mod
from vns.harness import sweep as sweep_mod
from vns.functionals import dissipation_integral
from vns.harness.config import ConfigError, RunConfig, parse_config
from vns.harness.coupled import RunFailure, run_coupled
from vns.harness.sweep import fit_rate, run_sweep, write_plot_script
from vns.harness.validate import CHECKS, validate


def small(**kw):
    base = dict(n=16, N=4000, dt=0.01, T=0.1, u0_amplitude=0.2, epsilon=0.1, reference="none")
    base.update(kw)
    return RunConfig(**base).validate()


CONFIG_TEXT = """
[fluid]
n = 16
dt = 0.01
t_final = 0.05   # five steps
u0 = mixed
[kinetic]
regime = fine
epsilon = 0.1
particles = 2000
[output]
snapshots = no
"""


class TestConfig:
    def test_parse(self):
        cfg = parse_config(CONFIG_TEXT)
        assert (cfg.n, cfg.N, cfg.T, cfg.regime, cfg.u0) == (16, 2000, 0.05, "fine", "mixed")
        assert cfg.snapshots is False
        assert cfg.n_steps == 5

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config("[fluid]\nnn = 16\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            parse_config("[solver]\nn = 16\n")

    def test_invalid_values(self):
        for text in ("[fluid]\nn = 12\n", "[kinetic]\nregime = heavy\n", "[sweep]\nepsilons = 0.1 0.2 0.05\n",
                     "[fluid]\ndt = abc\n", "[kinetic]\nepsilon = 0\n"):
            with pytest.raises(ConfigError):
                parse_config(text)

    def test_cadence_default(self):
        assert small(T=1.0, dt=1e-3).cadence_steps == 5
        assert small(T=0.1, dt=0.01).cadence_steps == 1

    def test_reference_auto(self):
        assert RunConfig(regime="fine").resolved_reference() == "ins"
        assert RunConfig(regime="light_fast").resolved_reference() == "tns"


class TestCli:
    def test_unknown_key_exit_code(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[kinetic]\nparticle = 10\n")
        assert main(["run", str(path)]) == 2

    def test_bad_arguments_exit_code(self):
        assert main(["frobnicate"]) == 2

    def test_run_writes_csv(self, tmp_path):
        path = tmp_path / "ok.cfg"
        path.write_text(CONFIG_TEXT + f"directory = {tmp_path / 'out'}\n")
        assert main(["run", "-q", str(path)]) == 0
        rows = list(csv.reader(open(tmp_path / "out" / "diagnostics.csv")))
        assert rows[0][0] == "t"
        assert len(rows) == 7

    def test_numerical_failure_exit_code(self, tmp_path):
        path = tmp_path / "cfl.cfg"
        path.write_text(
            "[fluid]\nn = 16\ndt = 0.5\nt_final = 1.0\nu0_amplitude = 5\n[kinetic]\nparticles = 100\n"
            f"[sweep]\nreference = none\n[output]\ndirectory = {tmp_path / 'o'}\n"
        )
        assert main(["run", "-q", str(path)]) == 1
        record = json.load(open(tmp_path / "o" / "error.json"))
        assert record["error"] == "CFLError"

    def test_validate_filter(self, capsys):
        assert main(["validate", "--filter", "projector"]) == 0
        assert "PASS" in capsys.readouterr().out
        assert main(["validate", "--filter", "no-such-check"]) == 2


class TestRateFit:
    def test_exact_power(self):
        eps = np.array([0.1, 0.05, 0.02, 0.01])
        fit = fit_rate(eps, eps**0.5)
        assert fit.slope == pytest.approx(0.5, abs=1e-12)
        assert fit.residual < 1e-12

    def test_linear_with_prefactor(self):
        eps = np.array([0.1, 0.05, 0.02])
        fit = fit_rate(eps, 3 * eps)
        assert fit.slope == pytest.approx(1.0, abs=1e-12)
        assert fit.intercept == pytest.approx(np.log(3.0), abs=1e-12)
        assert fit.prefactor == pytest.approx(3.0, rel=1e-12)

    def test_invariants(self):
        with pytest.raises(ValueError):
            fit_rate([0.1, 0.05], [1.0, 0.5])
        with pytest.raises(ValueError):
            fit_rate([0.05, 0.1, 0.01], [1.0, 0.5, 0.1])
        with pytest.raises(ValueError):
            fit_rate([0.1, 0.05, 0.01], [1.0, 0.0, 0.1])

    def test_plot_script(self, tmp_path):
        path = tmp_path / "p.gp"
        write_plot_script(path, "data/ratefit.csv", ("err_u",))
        text = path.read_text()
        assert "data/ratefit.csv" in text and "err_u" in text


class TestCoupled:
    def test_zero_data(self):
        cfg = small(u0="zero", rho0_mean=0.0, u0_mean=(0.0, 0.0))
        res = run_coupled(cfg)
        for rec in res.records:
            assert rec.energy == 0 and rec.dissipation == 0 and rec.modulated == 0
            assert rec.brinkman_l2 == 0 and rec.conc_p2 == 0 and rec.conc_p1 == 0
            assert all(v == 0 for v in rec.higher.values())
        assert np.all(res.series["energy"] == 0)

    def test_monokinetic_first_step_force(self):
        cfg = small(epsilon=1.0, u0="taylor_green", f0="monokinetic", rho0="uniform")
        res = run_coupled(dataclasses.replace(cfg, T=0.01))
        assert res.records[0].brinkman_l2 <= 1e-10

    def test_mass_and_momentum(self):
        res = run_coupled(small(u0="mixed", u0_mean=(0.2, -0.1), f0="maxwellian", theta=0.1, rho0="cosine"))
        assert np.all(res.series["mass"] == res.series["mass"][0])
        mom = np.asarray(res.series["momentum"])
        assert np.abs(mom - mom[0]).max() <= 1e-12 * np.abs(mom[0]).max()

    def test_energy_inequality(self):
        res = run_coupled(small(u0="mixed", f0="maxwellian", theta=0.1, rho0="cosine", T=0.2))
        E = res.series["energy"]
        integral = dissipation_integral(res.series["t"], res.series["dissipation"])
        assert np.all(E + integral <= E[0] * (1 + 1e-3))

    def test_kfk_splitting_runs(self):
        res = run_coupled(small(splitting="kfk", u0="mixed"))
        mom = np.asarray(res.series["momentum"])
        assert np.abs(mom - mom[0]).max() < 1e-12

    def test_determinism(self, tmp_path):
        cfg = small(u0="mixed", f0="maxwellian", theta=0.1, reference="tns", snapshots=False)
        run_coupled(dataclasses.replace(cfg, directory=str(tmp_path / "a")))
        run_coupled(dataclasses.replace(cfg, directory=str(tmp_path / "b")))
        a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
        assert a == (tmp_path / "b" / "diagnostics.csv").read_bytes()

    def test_restart_matches(self, tmp_path):
        cfg = small(u0="mixed", f0="maxwellian", theta=0.1, T=0.1, reference="none")
        full = run_coupled(dataclasses.replace(cfg, directory=str(tmp_path / "full"), snapshot_every=5))
        # the latest snapshot is the final one; resume from the mid-run snapshot instead
        part = tmp_path / "part"
        part.mkdir()
        for name in ("u_0000005.vnsf", "particles_0000005.vnsp", "state_0000005.json", "u_initial.vnsf"):
            (part / name).write_bytes((tmp_path / "full" / name).read_bytes())
        resumed = run_coupled(dataclasses.replace(cfg, restart_from=str(part)))
        scale = np.abs(full.u.values).max()
        assert np.abs(resumed.u.values - full.u.values).max() <= 1e-12 * scale
        assert np.abs(resumed.ensemble.velocities - full.ensemble.velocities).max() <= 1e-12
        assert resumed.records[-1].energy == pytest.approx(full.records[-1].energy, rel=1e-12)

    def test_reference_errors_recorded(self):
        res = run_coupled(small(u0="mixed", reference="tns", epsilon=0.05))
        assert res.records[0].err_u_l2 == 0.0
        assert res.records[0].err_rho_hm1 < 1e-14
        assert all(np.isfinite(r.err_u_l2) for r in res.records)

    def test_fine_key_trace(self):
        res = run_coupled(small(regime="fine", u0="mixed", fine_key=True, reference="none", T=0.05))
        assert len(res.fine_key.times) == 6
        assert set(res.fine_key.samples) == {2.0, 4.0}


class TestSweep:
    def test_small_sweep(self, tmp_path):
        cfg = small(u0="mixed", reference="tns", epsilons=(0.1, 0.05, 0.02), T=0.05, directory=str(tmp_path))
        res = run_sweep(cfg)
        assert res.epsilons == [0.1, 0.05, 0.02]
        assert "err_u" in res.fits
        rows = list(csv.reader(open(tmp_path / "ratefit.csv")))
        assert rows[0][0] == "epsilon"
        assert (tmp_path / "plot_rates.gp").exists()

    def test_reference_mismatch(self):
        with pytest.raises(ConfigError):
            run_sweep(small(regime="fine", reference="tns", epsilons=(0.1, 0.05, 0.02)))

    def test_partial_failure_preserved(self, tmp_path, monkeypatch):
        real = coupled_mod.run_coupled

        def flaky(cfg, reference=None, progress=None):
            if cfg.epsilon < 0.04:
                raise RunFailure({"error": "CFLError", "message": "injected", "step": 3})
            return real(cfg, reference=reference, progress=progress)

        monkeypatch.setattr(sweep_mod, "run_coupled", flaky)
        cfg = small(u0="mixed", reference="tns", epsilons=(0.1, 0.05, 0.02), T=0.05, directory=str(tmp_path))
        with pytest.raises(RunFailure) as info:
            run_sweep(cfg)
        assert info.value.record["completed"] == [0.1, 0.05]
        assert info.value.partial.epsilons == [0.1, 0.05]
        assert json.load(open(tmp_path / "error.json"))["message"] == "injected"
        assert (tmp_path / "eps_0.05" / "diagnostics.csv").exists()


class TestValidate:
    def test_selected_checks_pass(self):
        results = validate("w1_split")
        assert len(results) == 1 and results[0].passed

    def test_registry(self):
        assert {"taylor_green", "pusher_closed_form", "leray_projector", "jacobian_bound"} <= set(CHECKS)
