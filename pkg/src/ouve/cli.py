"""``ouve`` command line: simulate, mix, train, enhance, eval, bench.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

import argparse
import csv
import dataclasses
import logging
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .audio import generate_pair, make_manifest, read_manifest, read_wav, write_wav, ManifestEntry
from .config import RunConfig, load_config, substream
from .errors import DataError, NumericalError
from .metrics import si_sar, si_sdr, si_sir, snr_db
from .sampler import SamplerConfig, em_predictor_step, enhance
from .score import WEIGHTS_VERSION, AnalyticOracle, TinyScoreNet, load_weights, save_weights
from .sde import forward_paths, mean, sample_prior, snr_of_mean, std
from .spectral import to_compressed
from .training import smoothed, spectrogram_pairs, train

log = logging.getLogger("ouve")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
DEFAULT_GAMMAS = (0.5, 1.5, 5.0)
SIMULATE_COLUMNS = ("t", "mean_real", "mean_imag", "std", "snr_db", "gamma")
BENCH_COLUMNS = ("sampler", "settings", "nfe", "rtf", "si_sdr", "si_sir", "si_sar", "file")
EVAL_COLUMNS = ("file", "si_sdr", "si_sir", "si_sar", "snr_in", "snr_gain")
# (atol, rtol) pairs for the ODE rows of the bench grid
BENCH_ODE_TOLERANCES = ((1e-1, 1e-1), (1e-6, 1e-3))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def _write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _wav_names(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    names = sorted(p.name for p in directory.glob("*.wav"))
    if not names:
        raise DataError(f"no .wav files in {directory}")
    return names


def _load_model(args, cfg):
    p = cfg.sde()
    if args.weights is not None:
        return load_weights(args.weights, sde=p), "trained"
    return None, "oracle"


# simulate ----------------------------------------------------------------


def reverse_oracle_paths(x0, y, n_paths, p, n_steps, rng):
    """Reverse-SDE sample paths of the scalar process under the analytic score."""
    y_vec = np.full(n_paths, y, dtype=np.complex128)
    model = AnalyticOracle(np.full(n_paths, x0, dtype=np.complex128), p)
    ts = np.linspace(p.t_horizon, p.t_eps, n_steps + 1)
    x = sample_prior(y_vec, p, rng)
    states = [x]
    for k in range(n_steps):
        x = em_predictor_step(x, y_vec, ts[k], ts[k] - ts[k + 1], model, p, rng)
        states.append(x)
    return ts, np.array(states)


def _path_rows(ts, states):
    for t, row in zip(ts, states):
        for j, v in enumerate(row):
            yield (float(t), j, float(v.real), float(v.imag))


def cmd_simulate(args, cfg):
    if args.n_pairs < 1 or args.n_paths < 1 or args.n_grid < 2:
        raise DataError("simulate needs --n-pairs >= 1, --n-paths >= 1 and --n-grid >= 2")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = substream(cfg.seed, "solve")
    tp = cfg.transform()
    t_grid = np.linspace(0.0, cfg.t_horizon, args.n_grid)
    # SNR curves are averaged in dB over several pairs at the same input SNR
    pairs = [generate_pair(ManifestEntry(args.pair_seed + k, "harmonic", "white", args.pair_snr, 1.0, 0.0))
             for k in range(args.n_pairs)]
    mixture_snr = float(np.mean([snr_db(c, n) for c, _, n in pairs]))
    summary = []
    for g in args.gammas:
        p = dataclasses.replace(cfg.sde(), gamma=g)
        mu = mean(np.complex128(args.x0), np.complex128(args.y), t_grid, p)
        sd = std(t_grid, p)
        curve = np.mean([[snr for _, snr in snr_of_mean(c, y, t_grid, p, tp)] for c, y, _ in pairs], axis=0)
        rows = [(float(t), float(m.real), float(m.imag), float(s), float(snr), g)
                for t, m, s, snr in zip(t_grid, mu, sd, curve)]
        _write_csv(out / f"simulate_gamma{g:g}.csv", SIMULATE_COLUMNS, rows)
        fwd = forward_paths(args.x0, args.y, t_grid, args.n_paths, p, rng)
        _write_csv(out / f"forward_paths_gamma{g:g}.csv", ("t", "path", "real", "imag"), _path_rows(t_grid, fwd))
        ts, rev = reverse_oracle_paths(args.x0, args.y, args.n_paths, p, cfg.n_steps, rng)
        _write_csv(out / f"reverse_paths_gamma{g:g}.csv", ("t", "path", "real", "imag"), _path_rows(ts, rev))
        final = float(curve[-1])
        summary.append((g, mixture_snr, final, final - mixture_snr, float(np.mean(rev[-1]).real),
                        float(mean(np.complex128(args.x0), np.complex128(args.y), p.t_eps, p).real)))
        print(f"gamma={g:g}: SNR of mean at t={cfg.t_horizon:g} is {final:.3f} dB "
              f"({final - mixture_snr:+.3f} dB vs mixture)")
    _write_csv(out / "summary.csv", ("gamma", "mixture_snr_db", "final_snr_db", "gap_db",
                                     "reverse_terminal_mean", "mean_at_t_eps"), summary)
    return EXIT_OK


# mix -----------------------------------------------------------------------


def cmd_mix(args, cfg):
    out = Path(args.out_dir)
    if args.new is not None:
        rng = substream(cfg.seed, "mix")
        seeds = rng.choice(2**31, size=args.new, replace=False)
        entries = make_manifest(seeds, clean_kind=args.clean_kind, seed=int(rng.integers(2**31)))
        Path(args.manifest).parent.mkdir(parents=True, exist_ok=True)
        Path(args.manifest).write_text("\n".join(e.line() for e in entries) + "\n")
    entries = read_manifest(args.manifest)
    for sub in ("clean", "noisy", "noise"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for e in entries:
        clean, noisy, noise = generate_pair(e)
        write_wav(out / "clean" / f"{e.name}.wav", clean)
        write_wav(out / "noisy" / f"{e.name}.wav", noisy)
        write_wav(out / "noise" / f"{e.name}.wav", noise)
    (out / "manifest.txt").write_text("\n".join(e.line() for e in entries) + "\n")
    print(f"wrote {len(entries)} pairs to {out}")
    return EXIT_OK


# train ---------------------------------------------------------------------


def cmd_train(args, cfg):
    root = Path(args.dataset_dir)
    names = _wav_names(root / "clean")
    pairs = [(read_wav(root / "clean" / n), read_wav(root / "noisy" / n)) for n in names]
    X0, Y = spectrogram_pairs(pairs, cfg.transform())
    if args.steps is not None:
        steps = args.steps
    else:
        steps = args.epochs * -(-len(pairs) // cfg.batch_size)
    if steps < 1:
        raise DataError("nothing to do: training needs at least one step")
    rng = substream(cfg.seed, "train")
    net = TinyScoreNet(sde=cfg.sde(), rng=rng)

    def report(step, losses):
        if (step + 1) % args.log_every == 0:
            log.info("step %d  loss %.4g", step + 1, np.mean(losses[-args.log_every:]))

    losses = train(net, X0, Y, steps, cfg.sde(), rng, cfg.lr, cfg.batch_size, cfg.crop_frames, report)
    save_weights(net, args.out_weights)
    first, last = smoothed(losses)
    print(f"trained {steps} steps on {len(pairs)} pairs; smoothed loss {first:.4g} -> {last:.4g} "
          f"(ratio {last / first:.3f}); weights in {args.out_weights}")
    return EXIT_OK


# enhance -------------------------------------------------------------------


def cmd_enhance(args, cfg):
    y = read_wav(args.in_wav)
    p, tp = cfg.sde(), cfg.transform()
    model, mode = _load_model(args, cfg)
    if model is None:
        clean = read_wav(args.oracle_x0)
        if len(clean) != len(y):
            raise DataError(f"oracle reference has {len(clean)} samples, input has {len(y)}")
        model = AnalyticOracle(to_compressed(clean, tp), p)
    scfg = cfg.sampler_config()
    x, stats = enhance(y, model, scfg, p, tp, substream(cfg.seed, "solve"))
    write_wav(args.out_wav, x)
    label = "oracle (validation only: score computed from the clean reference)" if mode == "oracle" else mode
    print(f"mode={label} sampler={scfg.kind} {scfg.describe()} nfe={stats.nfe} rtf={stats.rtf:.3f} "
          f"-> {args.out_wav}")
    return EXIT_OK


# eval ----------------------------------------------------------------------


def evaluate_file(est, ref, noise):
    """Row values for one file: SI metrics, input SNR and the SI-SDR gain."""
    n = min(len(est), len(ref), len(noise))
    if n != max(len(est), len(ref), len(noise)):
        raise DataError(f"length mismatch: {len(est)}, {len(ref)}, {len(noise)}")
    return (si_sdr(est, ref), si_sir(est, ref, noise), si_sar(est, ref, noise), snr_db(ref, noise),
            si_sdr(est, ref) - si_sdr(ref + noise, ref))


def cmd_eval(args, cfg):
    names = _wav_names(args.est_dir)

    def one(name):
        est = read_wav(Path(args.est_dir) / name)
        ref = read_wav(Path(args.ref_dir) / name)
        noise = read_wav(Path(args.noise_dir) / name)
        return (name, *evaluate_file(est, ref, noise))

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(one, names))
    _write_csv(args.out_csv, EVAL_COLUMNS, rows)
    gain = np.mean([r[-1] for r in rows])
    print(f"evaluated {len(rows)} files; mean SI-SDR gain {gain:.2f} dB -> {args.out_csv}")
    return EXIT_OK


# bench ---------------------------------------------------------------------


def bench_grid(cfg):
    grid = [cfg.sampler_config(kind="pc", corrector_steps=c) for c in (0, 1, 2)]
    grid += [cfg.sampler_config(kind="ode", atol=a, rtol=r) for a, r in BENCH_ODE_TOLERANCES]
    return grid


def host_description():
    return f"{platform.processor() or platform.machine()}, {os.cpu_count()} cpu, {platform.python_implementation()} " \
           f"{platform.python_version()}, kernels={kernels.BACKEND_NAME}, single-threaded solve"


def cmd_bench(args, cfg):
    root = Path(args.dataset_dir)
    names = _wav_names(root / "noisy")[: args.limit]
    p, tp = cfg.sde(), cfg.transform()
    trained, mode = _load_model(args, cfg)
    grid = bench_grid(cfg)

    def one(job):
        scfg, name = job
        noisy = read_wav(root / "noisy" / name)
        clean = read_wav(root / "clean" / name)
        noise = read_wav(root / "noise" / name)
        model = trained if trained is not None else AnalyticOracle(to_compressed(clean, tp), p)
        rng = substream(cfg.seed, f"solve/{name}/{scfg.kind}/{scfg.describe()}")
        x, stats = enhance(noisy, model, scfg, p, tp, rng)
        return (scfg.kind, scfg.describe(), stats.nfe, stats.rtf, si_sdr(x, clean),
                si_sir(x, clean, noise), si_sar(x, clean, noise), name)

    jobs = [(scfg, name) for scfg in grid for name in names]
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(one, jobs))
    _write_csv(args.out_csv, BENCH_COLUMNS, rows)
    print(f"model={mode}; host: {host_description()}")
    for scfg in grid:
        sel = [r for r in rows if r[0] == scfg.kind and r[1] == scfg.describe()]
        print(f"{scfg.kind:4s} {scfg.describe():40s} nfe={np.mean([r[2] for r in sel]):6.1f} "
              f"rtf={np.mean([r[3] for r in sel]):7.3f} si_sdr={np.mean([r[4] for r in sel]):7.2f}")
    return EXIT_OK


# argument parsing ----------------------------------------------------------


class _VersionAction(argparse.Action):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, default=argparse.SUPPRESS, **kw)

    def __call__(self, parser, namespace, values, option_string=None):
        print(f"ouve {__version__}")
        print(f"weights format version {WEIGHTS_VERSION}")
        print("config defaults:")
        for line in RunConfig().lines():
            print(f"  {line}")
        parser.exit()


def _gamma_list(text):
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("gamma values must be positive")
    return values


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="root seed (default: $OUVE_SEED or 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    samp = argparse.ArgumentParser(add_help=False)
    g = samp.add_argument_group("sampler")
    g.add_argument("--sampler", choices=("pc", "ode"))
    g.add_argument("--N", dest="n_steps", type=int, help="reverse steps of the PC sampler")
    g.add_argument("--corrector-steps", type=int)
    g.add_argument("--snr-r", type=float, help="corrector step-size ratio r")
    g.add_argument("--atol", type=float)
    g.add_argument("--rtol", type=float)
    g.add_argument("--ode-paper-eq15", action="store_true",
                   help="use g^2 instead of g^2/2 in the probability-flow drift")

    parser = argparse.ArgumentParser(prog="ouve", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action=_VersionAction, help="print versions and config defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, samp], help="scalar process curves and paths")
    s.add_argument("--out", required=True)
    s.add_argument("--gammas", type=_gamma_list, default=DEFAULT_GAMMAS)
    s.add_argument("--n-paths", type=int, default=16)
    s.add_argument("--n-grid", type=int, default=101)
    s.add_argument("--x0", type=float, default=1.0)
    s.add_argument("--y", type=float, default=0.0)
    s.add_argument("--pair-seed", type=int, default=1, help="first seed of the waveform pairs for SNR curves")
    s.add_argument("--n-pairs", type=int, default=8)
    s.add_argument("--pair-snr", type=float, default=5.0)

    s = sub.add_parser("mix", parents=[common], help="render a manifest to WAV files")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--new", type=int, metavar="COUNT", help="first write a fresh manifest with COUNT entries")
    s.add_argument("--clean-kind", default="harmonic", choices=("harmonic", "chirp", "speech"))

    s = sub.add_parser("train", parents=[common], help="train the score network")
    s.add_argument("dataset_dir")
    s.add_argument("out_weights")
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--steps", type=int, help="overrides --epochs")
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--crop-frames", type=int)
    s.add_argument("--log-every", type=int, default=50)

    s = sub.add_parser("enhance", parents=[common, samp], help="enhance one WAV file")
    s.add_argument("in_wav")
    s.add_argument("out_wav")
    m = s.add_mutually_exclusive_group(required=True)
    m.add_argument("--weights")
    m.add_argument("--oracle-x0", metavar="CLEAN_WAV", help="analytic oracle from the clean reference")

    s = sub.add_parser("eval", parents=[common], help="SI metrics for a directory of estimates")
    s.add_argument("est_dir")
    s.add_argument("ref_dir")
    s.add_argument("noise_dir")
    s.add_argument("out_csv")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("bench", parents=[common, samp], help="sampler comparison grid")
    s.add_argument("dataset_dir")
    s.add_argument("out_csv")
    m = s.add_mutually_exclusive_group(required=True)
    m.add_argument("--weights")
    m.add_argument("--oracle", action="store_true", help="analytic oracle per file")
    s.add_argument("--limit", type=int, help="use only the first LIMIT files")
    s.add_argument("--jobs", type=int, default=1)
    return parser


COMMANDS = {"simulate": cmd_simulate, "mix": cmd_mix, "train": cmd_train, "enhance": cmd_enhance,
            "eval": cmd_eval, "bench": cmd_bench}


def _overrides(args):
    keys = ("seed", "sampler", "n_steps", "corrector_steps", "snr_r", "atol", "rtol", "lr", "batch_size",
            "crop_frames")
    out = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "ode_paper_eq15", False):
        out["ode_half_factor"] = False
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except DataError as exc:
        print(f"ouve: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"ouve: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"ouve: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
