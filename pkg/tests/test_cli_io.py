import json

import numpy as np
import pytest

from ccdinject import cli
from ccdinject import experiments as ex
from ccdinject import io as cio
from ccdinject.attack import extract_luminance, read_envelope_csv, read_iq
from ccdinject.sensor import SensorConfig

TINY_SENSOR = {"cols_total": 72, "rows_total": 56, "cols_effective": 64, "rows_effective": 48,
               "exposure_time": 10.0}


def write_config(path, **sections):
    path.write_text(json.dumps(sections))
    return path


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


# -- Netpbm -------------------------------------------------------------------------

def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
    cio.write_ppm(tmp_path / "a.ppm", img)
    back = cio.read_netpbm(tmp_path / "a.ppm")
    assert back.dtype == np.uint8
    np.testing.assert_array_equal(back, img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")


def test_pgm_sixteen_bit_round_trip(tmp_path):
    raw = np.random.default_rng(1).integers(0, 4096, (4, 6)).astype(np.uint16)
    cio.write_pgm(tmp_path / "r.pgm", raw, 4095)
    data = (tmp_path / "r.pgm").read_bytes()
    assert data.startswith(b"P5\n6 4\n4095\n") and len(data) == len(b"P5\n6 4\n4095\n") + 48
    np.testing.assert_array_equal(cio.read_netpbm(tmp_path / "r.pgm"), raw)


def test_pam_keeps_alpha(tmp_path):
    img = np.random.default_rng(2).integers(0, 256, (3, 4, 4)).astype(np.uint8)
    cio.write_pam(tmp_path / "g.pam", img)
    back = cio.read_image(tmp_path / "g.pam")
    np.testing.assert_array_equal(back, img)


def test_netpbm_header_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03")
    np.testing.assert_array_equal(cio.read_netpbm(tmp_path / "c.ppm"), [[[1, 2, 3]]])


def test_netpbm_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        cio.write_ppm(tmp_path / "x.ppm", np.zeros((2, 2)))
    with pytest.raises(ValueError):
        cio.write_pgm(tmp_path / "x.pgm", np.full((2, 2), 300), 255)
    (tmp_path / "t.ppm").write_bytes(b"P6\n4 4\n255\n\x00")
    with pytest.raises(ValueError):
        cio.read_netpbm(tmp_path / "t.ppm")
    (tmp_path / "p.png").write_bytes(b"\x89PNG")
    with pytest.raises(ValueError):
        cio.read_netpbm(tmp_path / "p.png")


# -- configs ------------------------------------------------------------------------

def test_sensor_from_dict_overlays_profile():
    cfg = cio.sensor_from_dict({"profile": "cctv-desk", "gain_index": 3,
                                "susceptibility": {"bandwidth_hz": 8e6}})
    assert cfg.name == "cctv-desk" and cfg.gain_index == 3
    assert cfg.susceptibility.bandwidth_hz == 8e6
    assert cfg.susceptibility.resonant_hz == 341e6


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        cio.sensor_from_dict({"gain": 3})
    with pytest.raises(ValueError):
        cio.sensor_from_dict({"profile": "no-such-camera"})
    with pytest.raises(ValueError):
        cio.channel_from_dict({"power": 1.0})


def test_load_json_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        cio.load_json(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ValueError):
        cio.load_json(tmp_path / "bad.json")


def test_config_dump_round_trip():
    cfg = SensorConfig(gain_index=7)
    data = json.loads(cio.dumps(cfg))
    data.pop("name")
    assert cio.sensor_from_dict(data) == cfg.replace(name=SensorConfig().name)


# -- CLI ----------------------------------------------------------------------------

def test_capture_one_dark_frame(tmp_path):
    out = tmp_path / "cap"
    assert cli.main(["--quiet", "--out", str(out), "capture"]) == 0
    frame = cio.read_netpbm(out / "frame_0000.ppm")
    assert frame.shape == (240, 320, 3)
    assert frame.mean() < 0.02 * 255  # dark current only
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 0 and man["attack"] == "none" and man["command"] == "capture"


def test_capture_is_byte_identical(tmp_path):
    args = ["--quiet", "--seed", "5", "capture", "--frames", "2", "--attack", "gaussian-noise"]
    assert cli.main(["--out", str(tmp_path / "a")] + args) == 0
    assert cli.main(["--out", str(tmp_path / "b")] + args) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_missing_config_fails_without_output(tmp_path, capsys):
    out = tmp_path / "never"
    rc = cli.main(["--config", str(tmp_path / "nope.json"), "--out", str(out), "capture"])
    assert rc != 0
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []
    assert "not found" in capsys.readouterr().err


def test_invalid_config_value_fails(tmp_path):
    cfg = write_config(tmp_path / "c.json", sensor={"gain_index": 99})
    assert cli.main(["--quiet", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "capture"]) == 2
    assert not (tmp_path / "o").exists()


def test_unknown_subcommand_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["teleport"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def _tiny_sweep(tmp_path, out, extra=()):
    cfg = write_config(tmp_path / "tiny.json", sensor=TINY_SENSOR,
                       plan={"metrics": ["ssim", "l2", "uqi"], "malicious": 3})
    return cli.main(["--quiet", "--config", str(cfg), "--out", str(out), "sweep-frequency",
                     "--values", "150,190,230", "--gains", "29", *extra])


def test_sweep_csv_three_points(tmp_path):
    out = tmp_path / "s"
    assert _tiny_sweep(tmp_path, out) == 0
    text = (out / "sweep_frequency.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == ",".join(ex.CSV_FIELDS)
    assert len(lines) == 5 and lines[-1] == f"{ex.CSV_FOOTER},3"
    rows, complete = ex.read_sweep_csv(text)
    assert complete and [r["swept_value"] for r in rows] == [150.0, 190.0, 230.0]
    man = json.loads((out / "sweep_frequency.manifest.json").read_text())
    assert man["points"] == 3 and man["plan"]["malicious"] == 3


def test_sweep_is_byte_identical(tmp_path):
    assert _tiny_sweep(tmp_path, tmp_path / "a") == 0
    assert _tiny_sweep(tmp_path, tmp_path / "b") == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_interrupted_sweep_has_no_footer(tmp_path, monkeypatch):
    real = ex.run_point
    calls = []

    def flaky(plan, value, gain):
        calls.append(value)
        if len(calls) == 3:
            raise KeyboardInterrupt
        return real(plan, value, gain)

    monkeypatch.setattr(ex, "run_point", flaky)
    out = tmp_path / "s"
    with pytest.raises(KeyboardInterrupt):
        _tiny_sweep(tmp_path, out)
    text = (out / "sweep_frequency.csv").read_text()
    rows, complete = ex.read_sweep_csv(text)
    assert not complete and len(rows) == 2
    assert ex.CSV_FOOTER not in text


def test_sweep_rejects_unknown_plan_field(tmp_path):
    cfg = write_config(tmp_path / "c.json", plan={"frames": 3})
    assert cli.main(["--quiet", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "sweep-power"]) == 2


def test_export_iq_single_white_pixel(tmp_path):
    cio.write_ppm(tmp_path / "w.ppm", np.full((1, 1, 3), 255, np.uint8))
    cfg = write_config(tmp_path / "one.json",
                       sensor={"cols_total": 1, "rows_total": 1, "cols_effective": 1,
                               "rows_effective": 1, "col_offset": 0, "row_offset": 0,
                               "frame_rate": 1.0})
    out = tmp_path / "iq"
    assert cli.main(["--quiet", "--config", str(cfg), "--out", str(out), "export-iq",
                     "--image", str(tmp_path / "w.ppm"), "--envelope-csv"]) == 0
    raw = np.frombuffer((out / "attack.iq").read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(raw, [1.0, 0.0])
    iq, meta = read_iq(out / "attack.iq")
    assert meta == {"sample_rate": 1.0, "carrier_hz": 190e6, "symbol_rate": 1.0, "length": 1}
    assert meta == json.loads((out / "attack.iq.json").read_text())
    np.testing.assert_array_equal(iq, [1.0 + 0j])


def test_export_iq_envelope_matches_luminance(tmp_path):
    img = np.random.default_rng(3).integers(0, 256, (30, 40, 3)).astype(np.uint8)
    cio.write_ppm(tmp_path / "img.ppm", img)
    out = tmp_path / "iq"
    assert cli.main(["--quiet", "--out", str(out), "export-iq", "--image",
                     str(tmp_path / "img.ppm"), "--envelope-csv", "--iq-rate", "2e6",
                     "--symbol-rate", "1e6"]) == 0
    env = read_envelope_csv(out / "envelope.csv")
    np.testing.assert_array_equal(env, extract_luminance(img, 328, 248))
    _, meta = read_iq(out / "attack.iq")
    assert meta["sample_rate"] == 2e6 and meta["symbol_rate"] == 1e6


def test_export_iq_rejects_oversized_image(tmp_path):
    cio.write_ppm(tmp_path / "big.ppm", np.zeros((300, 400, 3), np.uint8))
    out = tmp_path / "iq"
    assert cli.main(["--quiet", "--out", str(out), "export-iq", "--image",
                     str(tmp_path / "big.ppm")]) == 2
    assert not out.exists()


def test_barcode_one_row_per_grid_point(tmp_path):
    cfg = write_config(tmp_path / "b.json", barcode={"frames": 2})
    out = tmp_path / "bc"
    assert cli.main(["--quiet", "--config", str(cfg), "--out", str(out), "barcode",
                     "--exposures", "20000,33000", "--gains", "0,9"]) == 0
    lines = (out / "barcode.csv").read_text().splitlines()
    # Header, then a clean and an attacked row per (exposure, gain), then the footer.
    assert len(lines) == 1 + 2 * 2 * 2 + 1
    grid = {tuple(line.split(",")[:2]) for line in lines[1:-1]}
    assert grid == {("20000", "0"), ("20000", "9"), ("33000", "0"), ("33000", "9")}
    frames = (out / "barcode_frames.csv").read_text().splitlines()
    assert frames[0] == "exposure_time,gain_index,frame_index,attack_on,n_decoded,digits"
    # Two frames per clean/attacked row.
    assert len(frames) == 1 + 8 * 2 + 1 and frames[-1] == f"{ex.CSV_FOOTER},16"
    first = frames[1].split(",")
    assert int(first[4]) == (0 if first[5] == "" else len(first[5].split(";")))


def test_defend_reports_false_positive_rate(tmp_path):
    cfg = write_config(tmp_path / "d.json", sensor=TINY_SENSOR)
    out = tmp_path / "d"
    assert cli.main(["--quiet", "--config", str(cfg), "--out", str(out), "defend",
                     "--frames", "100"]) == 0
    lines = (out / "defend.csv").read_text().splitlines()
    header, row = lines[0].split(","), lines[1].split(",")
    fp = row[header.index("false_positive_rate")]
    assert fp != "" and float(fp) <= 0.01


def test_inject_writes_registration(tmp_path):
    cfg = write_config(tmp_path / "i.json", sensor=dict(TINY_SENSOR, gain_index=29))
    cio.write_pam(tmp_path / "glyph.pam", ex.glyph_image(60, 40))
    out = tmp_path / "inj"
    assert cli.main(["--quiet", "--config", str(cfg), "--out", str(out), "inject",
                     "--image", str(tmp_path / "glyph.pam"), "--offset", "0",
                     "--noise-free"]) == 0
    reg = json.loads((out / "registration.json").read_text())
    assert reg["lag_samples"] == [0, 0] and min(reg["ncc_zero_lag"]) >= 0.8
    assert (out / "attacked_0001.ppm").is_file() and (out / "unattacked_0000.ppm").is_file()
