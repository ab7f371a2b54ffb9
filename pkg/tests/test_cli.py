import numpy as np
import pytest

from boltzlab import cli, reports
from boltzlab.transport import homogeneous_at

SMALL = """
[domain]
d = 1.0
T = 1.0
r_v = 4.0

[grid]
nt = 12
nx = 8
nv = 6

[probe]
n_source_nodes = 8
"""


class TestConfig:
    def test_defaults(self):
        cfg = cli.parse_config("")
        assert cfg.mode == "reconstruct"
        assert cfg.nt == 32 and cfg.d == 1.0

    def test_parse_serialize_idempotent(self):
        cfg = cli.parse_config(SMALL)
        text = cli.serialize_config(cfg)
        cfg2 = cli.parse_config(text)
        assert cli.serialize_config(cfg2) == text

    def test_kernel_params_passthrough(self):
        cfg = cli.parse_config("[kernel]\nphi_amplitude = 0.1\npsi_width = 3.0\n")
        assert cfg.phi_params == {"amplitude": 0.1}
        assert cfg.psi_params == {"width": 3.0}
        text = cli.serialize_config(cfg)
        assert "phi_amplitude = 0.1" in text
        assert cli.parse_config(text).phi_params == {"amplitude": 0.1}

    def test_unknown_section(self):
        with pytest.raises(cli.ConfigError, match="section"):
            cli.parse_config("[nonsense]\nx = 1\n")

    def test_unknown_key(self):
        with pytest.raises(cli.ConfigError, match="unknown config key"):
            cli.parse_config("[domain]\nradius = 2\n")

    def test_bad_value(self):
        with pytest.raises(cli.ConfigError, match="bad value"):
            cli.parse_config("[grid]\nnt = fast\n")

    def test_bad_mode(self):
        with pytest.raises(cli.ConfigError, match="mode"):
            cli.parse_config("[run]\nmode = dance\n")

    def test_deltas_list(self):
        cfg = cli.parse_config("[noise]\ndeltas = 1e-2, 1e-4 1e-6\n")
        assert cfg.deltas == [1e-2, 1e-4, 1e-6]


def test_invalid_preset_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[kernel]\npsi = psi_nope\n")
    status = cli.main(["selftest", "--config", str(p), "--out", str(tmp_path)])
    assert status == 2
    assert "[kernel]" in capsys.readouterr().err


def test_selftest_mode(tmp_path):
    p = tmp_path / "cfg.ini"
    p.write_text(SMALL)
    status = cli.main(["selftest", "--config", str(p), "--out", str(tmp_path)])
    assert status == 0
    rows = reports.read_csv_rows(str(tmp_path / "selftest.csv"))
    assert all(r["status"] == "pass" for r in rows)
    manifest = (tmp_path / "manifest.json").read_text()
    assert "config_hash" in manifest


def test_forward_mode_free_transport(tmp_path):
    # with a vanishing amplitude the kernel is inert and every measurement is
    # the free-streaming data trace, which is computable in closed form
    p = tmp_path / "cfg.ini"
    p.write_text(SMALL + "\n[kernel]\nphi = phi_zero\n")
    status = cli.main(["forward", "--config", str(p), "--out", str(tmp_path)])
    assert status == 0
    rows = reports.read_csv_rows(str(tmp_path / "forward_measurements.csv"))
    assert len(rows) > 0

    cfg = cli.parse_config(p.read_text())
    op = cli._build_operator(cfg)
    smallness = cli._smallness(cfg, op)
    eps = cli._probe_eps(cfg, smallness)
    from boltzlab.linearize import probe_data
    from boltzlab.transport import combine_data

    d1, d2 = probe_data(cfg.v_star())
    data = combine_data(d1, eps, d2, eps)
    for r in rows[:50]:
        t = np.array([float(r["t"])])
        x = np.array([[float(r["x1"]), float(r["x2"])]])
        v = np.array([[float(r["v1"]), float(r["v2"])]])
        want = homogeneous_at(op.grid.domain, data, t, x, v)[0]
        assert abs(float(r["value"]) - want) < 1e-12


def test_identity_check_mode(tmp_path):
    p = tmp_path / "cfg.ini"
    p.write_text(SMALL)
    status = cli.main(["identity-check", "--config", str(p), "--out", str(tmp_path)])
    assert status == 0
    rows = reports.read_csv_rows(str(tmp_path / "integral_identity.csv"))
    assert len(rows) == 1
    assert float(rows[0]["residual"]) < 0.2


def test_missing_config_file(capsys):
    status = cli.main(["selftest", "--config", "/nonexistent/path.ini"])
    assert status == 2
    assert "cannot read config" in capsys.readouterr().err
