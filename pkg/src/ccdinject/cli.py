"""``ccdinject`` command-line interface.

Every run is fully determined by the config file, flags and seed; each
subcommand writes a ``manifest.json`` next to its outputs recording all
three. Inputs are validated before anything is written.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import shutil
import sys
import tempfile
from pathlib import Path

from . import __version__
from . import experiments as ex
from . import io as cio
from . import profiles
from .attack import (AttackSignal, extract_luminance, gaussian_noise_signal, modulate, resample,
                     write_envelope_csv, write_iq)
from .coupling import ChannelConfig, friis_received_power
from .sensor import AttackScenario, Scene, capture_sequence, derive_seed

log = logging.getLogger("ccdinject")


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccdinject", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", type=Path, help="JSON config (sensor/channel/plan sections)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    c = sub.add_parser("capture", help="capture frames, optionally under attack")
    c.add_argument("--frames", type=int, default=1)
    c.add_argument("--attack", choices=("none",) + ex.SOURCES, default="none")
    c.add_argument("--image", type=Path, help="PPM/PAM image for --attack image")
    c.add_argument("--scene", choices=("dark", "bright", "barcode"), default="dark")
    c.add_argument("--offset", type=float, help="attack offset in readout ticks (default random)")
    c.add_argument("--carrier-mhz", type=float)

    for axis in ("frequency", "power", "distance"):
        s = sub.add_parser(f"sweep-{axis}", help=f"{axis} sweep to CSV")
        s.add_argument("--values", type=_floats, help="explicit axis values")
        s.add_argument("--start", type=float)
        s.add_argument("--stop", type=float)
        s.add_argument("--step", type=float)
        s.add_argument("--gains", type=_ints, help="gain indices, one series each")
        s.add_argument("--legitimate", type=int)
        s.add_argument("--malicious", type=int)
        s.add_argument("--source", choices=ex.SOURCES)
        s.add_argument("--image", type=Path)
        s.set_defaults(axis=axis)

    i = sub.add_parser("inject", help="fine-grained image injection with registration report")
    i.add_argument("--image", type=Path, help="PPM/PAM image (default: built-in glyph)")
    i.add_argument("--frames", type=int, default=2)
    i.add_argument("--offset", type=float, help="attack offset; 0 = synchronized")
    i.add_argument("--noise-free", action="store_true")

    b = sub.add_parser("barcode", help="barcode detection campaign")
    b.add_argument("--frames", type=int, help="frames per class and grid point")
    b.add_argument("--exposures", type=_floats)
    b.add_argument("--gains", type=_ints)

    d = sub.add_parser("defend", help="exposure-drop injection detector")
    d.add_argument("--attack", choices=("off", "on"), default="off")
    d.add_argument("--scene", choices=("dark", "bright"), default="dark")
    d.add_argument("--frames", type=int, default=1000, help="stream length")
    d.add_argument("--probe-probability", type=float, default=0.1)
    d.add_argument("--threshold", type=float, help="ADC counts (default: calibrated)")

    e = sub.add_parser("export-iq", help="turn an image into a transmittable IQ file")
    e.add_argument("--image", type=Path, required=True)
    e.add_argument("--iq-rate", type=float, help="SDR sample rate (default: symbol rate)")
    e.add_argument("--symbol-rate", type=float, help="default: sensor readout rate")
    e.add_argument("--carrier-mhz", type=float)
    e.add_argument("--envelope-csv", action="store_true", help="also dump the envelope")
    return p


# -- config resolution -----------------------------------------------------------

def load_sections(args) -> dict:
    return cio.load_json(args.config) if args.config else {}


def resolve_sensor(cfg: dict, default):
    return cio.sensor_from_dict(cfg.get("sensor", {}), default)


def resolve_channel(cfg: dict, carrier_mhz=None) -> ChannelConfig:
    ch = cio.channel_from_dict(cfg.get("channel", {}))
    if carrier_mhz is not None:
        ch = dataclasses.replace(ch, carrier_hz=carrier_mhz * 1e6)
    return ch


def _need_image(path):
    if path is None:
        raise UsageError("--image is required for an image attack")
    if not Path(path).is_file():
        raise FileNotFoundError(f"image not found: {path}")
    return cio.read_image(path)


def _prepare_out(out: Path):
    out.mkdir(parents=True, exist_ok=True)


class _Staged:
    """Collect outputs in a scratch directory and move them into place on success."""

    def __init__(self, out: Path):
        self.out = out
        out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))

    def path(self, name):
        return self.tmp / name

    def commit(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for f in sorted(self.tmp.iterdir()):
            f.replace(self.out / f.name)
        self.tmp.rmdir()

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def manifest(args, **fields) -> str:
    base = {
        "command": args.command,
        "seed": args.seed,
        "version": __version__,
        "calibration_version": profiles.CALIBRATION_VERSION,
        "config_file": str(args.config) if args.config else None,
    }
    base.update(fields)
    return cio.dumps(base)


# -- subcommands ---------------------------------------------------------------------

def cmd_capture(args, cfg):
    sensor = resolve_sensor(cfg, profiles.dfm_desk())
    channel = resolve_channel(cfg, args.carrier_mhz)
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    if args.scene == "bright":
        scene = profiles.bright_scene(sensor)
    elif args.scene == "barcode":
        scene = ex.barcode_scene(sensor)
    else:
        scene = Scene.dark(sensor)
    attack = None
    if args.attack != "none":
        image = _need_image(args.image) if args.attack == "image" else None
        plan = ex.ExperimentPlan("frequency", values=(channel.carrier_hz / 1e6,), sensor=sensor,
                                 channel=channel, source=args.attack, image=image,
                                 master_seed=args.seed)
        signal = ex.build_attack_signal(plan, sensor, channel.carrier_hz, args.seed)
        attack = AttackScenario(signal, channel, offset=args.offset)
    cap = capture_sequence(scene, sensor, attack, args.frames, args.seed)
    st = _Staged(args.out)
    try:
        names = []
        for k, (rgb, raw) in enumerate(zip(cap.rgb, cap.raw)):
            cio.write_ppm(st.path(f"frame_{k:04d}.ppm"), rgb, sensor.full_scale)
            cio.write_pgm(st.path(f"raw_{k:04d}.pgm"), raw, sensor.full_scale)
            names.append(f"frame_{k:04d}.ppm")
        st.path("manifest.json").write_text(manifest(
            args, sensor=sensor, channel=channel, attack=args.attack, scene=args.scene,
            offset_samples=cap.offset_samples, frame_starts=cap.frame_starts, frames=names))
        st.commit()
    except BaseException:
        st.abort()
        raise
    log.info("wrote %d frame(s) to %s", args.frames, args.out)


def _sweep_plan(args, cfg) -> ex.ExperimentPlan:
    defaults = {"frequency": profiles.frequency_plan, "power": profiles.power_plan,
                "distance": profiles.distance_plan}[args.axis]
    base = defaults()
    sensor = resolve_sensor(cfg, base.sensor)
    changes = dict(cfg.get("plan", {}))
    allowed = {f.name for f in dataclasses.fields(ex.ExperimentPlan)}
    allowed -= {"sensor", "channel", "image", "scene", "axis"}
    bad = set(changes) - allowed
    if bad:
        raise ValueError(f"unsupported plan field(s): {', '.join(sorted(bad))}")
    for key in ("values", "gains"):
        if key in changes and changes[key] is not None:
            changes[key] = tuple(changes[key])
    for key in ("values", "start", "stop", "step", "gains", "legitimate", "malicious", "source"):
        v = getattr(args, key)
        if v is not None:
            changes[key] = v
    if any(k in changes for k in ("start", "stop", "step")) and "values" not in changes:
        changes["values"] = None
        for k in ("start", "stop", "step"):
            changes.setdefault(k, getattr(base, k))
    if changes.get("source", base.source) == "image":
        changes["image"] = _need_image(args.image)
    return dataclasses.replace(base, sensor=sensor, channel=resolve_channel(cfg),
                               master_seed=args.seed, **changes)


def cmd_sweep(args, cfg):
    plan = _sweep_plan(args, cfg)
    _prepare_out(args.out)
    csv_path = args.out / f"sweep_{args.axis}.csv"
    done = []
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(ex.CSV_FIELDS) + "\n")
        fh.flush()

        def stream(row):
            done.append(row)
            fh.write(",".join(ex.format_row(row)) + "\n")
            fh.flush()
            log.info("%s=%g gain=%d ssim=%.4f delta=%.4f", row.axis, row.swept_value,
                     row.gain_index, row.ssim, row.delta_ssim)

        rows = ex.run_sweep(plan, stream)
    # Streamed rows arrive in completion order; the final file is sorted.
    cio.write_text_atomic(csv_path, ex.sweep_csv(rows))
    (args.out / f"sweep_{args.axis}.manifest.json").write_text(manifest(
        args, plan=dataclasses.replace(plan, image=None), points=len(rows)))
    log.info("wrote %d rows to %s", len(rows), csv_path)


def cmd_inject(args, cfg):
    sensor = resolve_sensor(cfg, profiles.dfm_desk(gain_index=29))
    channel = resolve_channel(cfg)
    image = _need_image(args.image) if args.image else ex.glyph_image()
    if args.frames < 2:
        raise UsageError("--frames must be >= 2 to measure drift")
    plan = ex.ExperimentPlan("frequency", values=(channel.carrier_hz / 1e6,), sensor=sensor,
                             channel=channel, master_seed=args.seed)
    rep = ex.pattern_injection(image, plan, args.frames, args.offset, args.noise_free)
    st = _Staged(args.out)
    try:
        for k, (a, u) in enumerate(zip(rep.attacked, rep.unattacked)):
            cio.write_ppm(st.path(f"attacked_{k:04d}.ppm"), a, sensor.full_scale)
            cio.write_ppm(st.path(f"unattacked_{k:04d}.ppm"), u, sensor.full_scale)
        st.path("registration.json").write_text(cio.dumps({
            "offset_samples": rep.offset_samples, "ncc_zero_lag": rep.ncc_zero_lag,
            "lag_samples": rep.lag_samples, "xy_offset": rep.xy_offset,
            "peak_ncc": rep.peak_ncc, "drift_samples": rep.drift_samples}))
        st.path("manifest.json").write_text(manifest(
            args, sensor=sensor, channel=channel, image=str(args.image) if args.image else "glyph",
            noise_free=args.noise_free, offset=args.offset))
        st.commit()
    except BaseException:
        st.abort()
        raise
    log.info("peak NCC %.3f at (x, y) = %s", rep.peak_ncc[0], rep.xy_offset[0])


def cmd_barcode(args, cfg):
    changes = dict(cfg.get("barcode", {}))
    allowed = {f.name for f in dataclasses.fields(ex.BarcodeCampaign)} - {"sensor", "channel"}
    bad = set(changes) - allowed
    if bad:
        raise ValueError(f"unsupported barcode field(s): {', '.join(sorted(bad))}")
    for key in ("exposures", "gains", "codes"):
        if key in changes:
            changes[key] = tuple(changes[key])
    for key in ("frames", "exposures", "gains"):
        v = getattr(args, key)
        if v is not None:
            changes[key] = v
    camp = profiles.barcode_campaign_default(
        sensor=resolve_sensor(cfg, profiles.barcode_sensor()), channel=resolve_channel(cfg),
        master_seed=args.seed, **changes)
    if camp.frames < 1:
        raise UsageError("--frames must be >= 1")
    rows = ex.barcode_campaign(camp)
    _prepare_out(args.out)
    cio.write_text_atomic(args.out / "barcode.csv", ex.barcode_csv(rows, camp.codes))
    cio.write_text_atomic(args.out / "barcode_frames.csv", ex.barcode_frames_csv(rows))
    (args.out / "barcode.manifest.json").write_text(manifest(args, campaign=camp))
    for r in rows:
        log.info("exp=%g gain=%d attack=%d detection=%.3f", r.exposure_time, r.gain_index,
                 r.attack_on, r.detection_rate)


def cmd_defend(args, cfg):
    sensor = resolve_sensor(cfg, profiles.dfm_desk())
    channel = resolve_channel(cfg)
    if args.frames < 1 or not 0 < args.probe_probability <= 1:
        raise UsageError("need --frames >= 1 and 0 < --probe-probability <= 1")
    attack = None
    if args.attack == "on":
        env = gaussian_noise_signal(sensor.n_pixels, derive_seed(args.seed, "defend-noise"))
        attack = AttackScenario(AttackSignal(env, sensor.sample_rate, channel.carrier_hz), channel)
    scene = profiles.bright_scene(sensor) if args.scene == "bright" else Scene.dark(sensor)
    stream = profiles.detector_stream(attack, scene, sensor=sensor, n_frames=args.frames,
                                      probe_probability=args.probe_probability, seed=args.seed)
    threshold = args.threshold
    if threshold is None:
        threshold = ex.calibrate_threshold(dataclasses.replace(stream, scene=Scene.dark(sensor)))
    rep = ex.exposure_drop_detector(stream, threshold)
    _prepare_out(args.out)
    cio.write_text_atomic(args.out / "defend.csv",
                          ex.detector_csv([(f"{args.scene}-attack-{args.attack}", rep)]))
    (args.out / "defend.manifest.json").write_text(manifest(
        args, sensor=sensor, channel=channel, scene=args.scene, attack=args.attack,
        threshold=threshold, probe_frames=list(rep.probe_frames)))
    rate = rep.true_positive_rate if rep.attack_on else rep.false_positive_rate
    log.info("%d probes, %s rate %.3f", len(rep.flags), "TP" if rep.attack_on else "FP", rate)


def cmd_export_iq(args, cfg):
    sensor = resolve_sensor(cfg, profiles.dfm_desk())
    channel = resolve_channel(cfg, args.carrier_mhz)
    image = _need_image(args.image)
    env = extract_luminance(image, sensor.cols_total, sensor.rows_total)
    symbol_rate = args.symbol_rate or sensor.sample_rate
    iq_rate = args.iq_rate or symbol_rate
    tx = resample(env, sensor.sample_rate, symbol_rate)
    iq = modulate(tx, symbol_rate, channel.carrier_hz, iq_rate)
    st = _Staged(args.out)
    try:
        write_iq(st.path("attack.iq"), iq, iq_rate, channel.carrier_hz, symbol_rate)
        if args.envelope_csv:
            write_envelope_csv(st.path("envelope.csv"), env)
        st.path("manifest.json").write_text(manifest(
            args, sensor=sensor, channel=channel, image=str(args.image),
            received_power_dbm=friis_received_power(channel)))
        st.commit()
    except BaseException:
        st.abort()
        raise
    log.info("wrote %d IQ samples at %g S/s", iq.size, iq_rate)


COMMANDS = {
    "capture": cmd_capture, "sweep-frequency": cmd_sweep, "sweep-power": cmd_sweep,
    "sweep-distance": cmd_sweep, "inject": cmd_inject, "barcode": cmd_barcode,
    "defend": cmd_defend, "export-iq": cmd_export_iq,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_sections(args)
        COMMANDS[args.command](args, cfg)
    except (UsageError, ValueError, FileNotFoundError, KeyError, TypeError) as exc:
        print(f"ccdinject: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
