"""Command-line entry point: ``dgmpsim {estimate,sweep,replay,validate-config}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .channel import generate_channel, load_realization, save_realization
from .config import ConfigError, SystemConfig, bundled_config, dump_config, load_config
from .estimators import SCHEMES, reconstruct_channel, run_estimator, save_estimate
from .evaluation import ber_16qam, nmse, spectral_efficiency
from .experiment import (DEFAULT_SNR_VALUES, RunManifest, default_n_bits, read_summary_csv, rerun_manifest,
                         snr_key, stream, trial_seed, write_sweep)
from .pilots import assemble_measurement, generate_pilots, load_measurement, save_measurement

PRESETS = ("paper", "desk")


def resolve_config(name: str | None) -> SystemConfig:
    """A file path, or one of the bundled preset names; the desk preset by default."""
    if name is None:
        return bundled_config("desk")
    if name in PRESETS and not Path(name).exists():
        return bundled_config(name)
    return load_config(name)


def _list(kind):
    def parse(text: str):
        try:
            return [kind(item) for item in text.split(",") if item.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _check_schemes(schemes):
    unknown = [s for s in schemes if s not in SCHEMES]
    if unknown:
        raise ValueError(f"unknown schemes {unknown}; choose from {','.join(SCHEMES)}")


def cmd_estimate(args) -> int:
    """One trial end-to-end (trial 0 of the seed tree), printing one metrics line per scheme."""
    cfg = resolve_config(args.config)
    if args.g_values:
        cfg = cfg.replace(n_symbols=args.g_values[0])
    if args.snr_values:
        cfg = cfg.replace(snr_db=args.snr_values[0])
    seed_master = cfg.rng_seed if args.seed is None else args.seed
    schemes = args.schemes or ["dgmp", "somp", "oracle"]
    _check_schemes(schemes)

    seed = trial_seed(seed_master, 0)
    G, snr = cfg.n_symbols, cfg.snr_db
    chan = generate_channel(cfg, stream(seed, 0))
    pilots = generate_pilots(cfg, stream(seed, 1, G))
    meas = assemble_measurement(pilots, chan, cfg, stream(seed, 2, G, snr_key(snr)))
    meas.meta["seeds"] = {"master": seed_master, "trial": 0, "trial_seed": seed}
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        save_measurement(out / "measurement", meas, cfg)
        save_realization(out / "channel.json", chan, cfg)
    for scheme in schemes:
        result = run_estimator(scheme, meas, cfg, chan)
        err = nmse(chan.freq_channels, reconstruct_channel(result, cfg))
        se = spectral_efficiency(chan, result, cfg, snr)
        ber = ber_16qam(chan, result, cfg, snr, default_n_bits(cfg), stream(seed, 3, snr_key(snr)))
        print(f"scheme={scheme} G={G} snr_db={snr:g} nmse={err:.6g} se_bpcu={se:.6g} ber={ber:.6g}")
        if out:
            save_estimate(out / f"estimate_{scheme}.json", result)
    return 0


def cmd_sweep(args) -> int:
    if args.manifest:
        manifest = RunManifest.from_json(Path(args.manifest).read_text())
        manifest = rerun_manifest(manifest, args.out, jobs=args.jobs)
    else:
        cfg = resolve_config(args.config)
        schemes = args.schemes or list(SCHEMES)
        _check_schemes(schemes)
        G_values = args.g_values or [cfg.n_symbols]
        snr_values = args.snr_values or list(DEFAULT_SNR_VALUES)
        manifest = write_sweep(args.out, cfg, schemes, G_values, snr_values, args.trials,
                               args.seed, args.jobs, args.n_bits, args.on_grid, args.training_snr)
    out = Path(args.out)
    print(f"wrote {out / manifest.outputs['trials']} and {out / manifest.outputs['summary']} "
          f"({manifest.wall_time_s:.1f} s)")
    for failure in manifest.failures:
        print(f"failed: {failure}", file=sys.stderr)
    if args.figures:
        from .plotting import plot_summary

        for path in plot_summary(read_summary_csv(out / manifest.outputs["summary"]), out):
            print(f"wrote {path}")
    return 0


def cmd_replay(args) -> int:
    meas, cfg = load_measurement(args.measurement)
    chan = None
    if args.channel:
        chan, chan_cfg = load_realization(args.channel)
        if chan_cfg.config_hash() != cfg.config_hash():
            raise ValueError("channel file was generated under a different config")
    result = run_estimator(args.scheme, meas, cfg, chan)
    save_estimate(args.out, result)
    line = f"scheme={args.scheme} wrote {args.out}"
    if chan is not None:
        line += f" nmse={nmse(chan.freq_channels, reconstruct_channel(result, cfg)):.6g}"
    print(line)
    return 0


def cmd_validate_config(args) -> int:
    cfg = resolve_config(args.config)
    print(dump_config(cfg), end="")
    print(f"# ok config_hash={cfg.config_hash()} measurements_per_subcarrier={cfg.n_measurements}")
    if args.json:
        print(json.dumps(cfg.to_dict(), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgmpsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="config file or bundled preset name (paper, desk); default desk")
        p.add_argument("--seed", type=int, help="master seed (default: rng_seed from the config)")
        p.add_argument("--schemes", type=_list(str), help=f"comma list from {','.join(SCHEMES)}")
        p.add_argument("--g-values", type=_list(int), help="comma list of training lengths G")
        p.add_argument("--snr-values", type=_list(float), help="comma list of SNRs in dB")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("estimate", help="run one trial and print NMSE/SE/BER")
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep writing trials.csv, summary.csv, manifest.json")
    common(p, out_required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--n-bits", type=int, help="16-QAM bits per trial and cell (multiple of 4*K*P)")
    p.add_argument("--on-grid", action="store_true", help="draw angles on the DFT grid")
    p.add_argument("--training-snr", type=float,
                   help="hold the uplink training SNR (dB) fixed; --snr-values then sets the downlink only")
    p.add_argument("--manifest", help="rerun the sweep recorded in this manifest.json")
    p.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="rerun an estimator on an exported measurement set")
    p.add_argument("--measurement", required=True, help="path of the exported measurement (.npz or .json)")
    p.add_argument("--scheme", default="dgmp", choices=SCHEMES)
    p.add_argument("--channel", help="channel JSON (needed for the oracle scheme and for NMSE)")
    p.add_argument("--out", required=True, help="estimate JSON to write")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("validate-config", help="parse and validate a config, print the normalized form")
    p.add_argument("--config", help="config file or bundled preset name")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "trials", 1) < 1:
        parser.error("--trials must be positive")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be positive")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"dgmpsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
