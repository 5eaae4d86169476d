"""Command-line entry point.

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 data / format / checkpoint / evaluation error, 4 verification failure.
The ``GLFC_THREADS`` environment variable overrides ``--threads``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .dataset import dataset_build, resize_nearest
from .errors import ConfigError, DataError, GLFCError, VerificationError
from .io import (Volume, atomic_write, checkpoint_load, checkpoint_save, gvol_read,
                 gvol_write, load_weights, read_kv, write_kv)
from .losses import hu_to_norm, norm_to_hu
from .meunet import VARIANTS, build_model, param_count
from .metrics import MetricsReport, evaluate_pair, format_table, report_kv
from .phantom import PhantomConfig, gen_phantom_pair
from .training import RunConfig, StepLog, fit_new

log = logging.getLogger("glfc")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3, 4

# flag name -> RunConfig field, for flags that can also come from --config
_RUN_FLAGS = {
    "arch": "arch", "loss": "loss", "lr": "lr", "batch": "batch", "epochs": "epochs",
    "steps": "steps", "seed": "seed", "threads": "threads", "size": "size",
    "channels": "channels", "tokens": "tokens", "vss_depths": "vss_depths",
    "embed_dims": "embed_dims", "state_dim": "state_dim",
}


def _thread_limit(requested: Optional[int]) -> int:
    env = os.environ.get("GLFC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"GLFC_THREADS must be an integer, got {env!r}") from None
    return requested or 1


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; explicit flags take precedence")
    p.add_argument("--arch", choices=VARIANTS)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int, help="stop after this many updates")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--size", type=int, help="slice side length fed to the network")
    p.add_argument("--channels", help="comma separated, e.g. 64,128,256")
    p.add_argument("--tokens", type=int, help="VSS token count L")
    p.add_argument("--vss-depths", dest="vss_depths", help="e.g. 16,8")
    p.add_argument("--embed-dims", dest="embed_dims", help="e.g. 128,256")
    p.add_argument("--state-dim", dest="state_dim", type=int)


def _run_config(args, **fixed) -> RunConfig:
    kv: Dict[str, str] = {}
    if getattr(args, "config", None):
        try:
            kv.update(read_kv(args.config))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    for flag, key in _RUN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            kv[key] = str(val)
    kv.update({k: str(v) for k, v in fixed.items() if v is not None})
    return RunConfig.from_kv(kv).validate()


# -- gen-data -------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.pairs < 0:
        raise ConfigError("--pairs must be >= 0")
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"{out} exists and is not a directory")
    base = PhantomConfig(size=args.size, seed=args.seed, shading=args.shading,
                         streak=args.streak, noise=args.noise, drift=args.drift)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"{out} is not writable")
    lines = ["# glfc phantom manifest", f"pairs={args.pairs}", f"seed={args.seed}",
             f"size={args.size}", f"shading={args.shading}", f"streak={args.streak}",
             f"noise={args.noise}", f"drift={args.drift}"]
    for i in range(args.pairs):
        key = f"{i:04d}"
        seed = pair_seed(args.seed, i)
        ct, cbct, labels = gen_phantom_pair(_replace(base, seed=seed))
        gvol_write(cbct, out / f"cbct_{key}.gvol")
        gvol_write(ct, out / f"ct_{key}.gvol")
        gvol_write(Volume(labels.astype(np.float32)), out / f"labels_{key}.gvol")
        lines.append(f"pair {key} seed={seed} cbct_{key}.gvol ct_{key}.gvol labels_{key}.gvol")
    atomic_write(out / "manifest.txt", ("\n".join(lines) + "\n").encode("utf-8"))
    print(f"wrote {args.pairs} phantom pairs to {out}")
    return EXIT_OK


def pair_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0] >> 1)


def _replace(cfg: PhantomConfig, **kw) -> PhantomConfig:
    from dataclasses import replace
    return replace(cfg, **kw)


# -- train ----------------------------------------------------------------

def cmd_train(args) -> int:
    run = _run_config(args, loss=args.loss)
    ds = dataset_build(args.data)
    if len(ds) == 0:
        raise DataError(f"no slice pairs found in {args.data}")
    x, y = ds.arrays(run.size)
    ckpt = Path(args.out)
    log_path = Path(args.log) if args.log else ckpt.with_name(ckpt.name + ".log")
    lines: List[str] = [f"# arch={run.arch} loss={run.loss} lr={run.lr} batch={run.batch} "
                        f"seed={run.seed} pairs={len(ds)}"]

    def on_step(rec: StepLog):
        lines.append(rec.line())
        if not args.quiet:
            print(rec.line(), flush=True)

    model, _ = fit_new(x, y, run, on_step)
    checkpoint_save(model, ckpt)
    write_kv(config_path(ckpt), run.to_kv())
    atomic_write(log_path, ("\n".join(lines) + "\n").encode("utf-8"))
    print(f"saved {ckpt} ({param_count(model)} parameters)")
    return EXIT_OK


def config_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".cfg")


# -- infer ----------------------------------------------------------------

def load_model(ckpt, args=None):
    cfg_file = config_path(ckpt)
    kv: Dict[str, str] = {}
    if cfg_file.exists():
        kv.update(read_kv(cfg_file))
    elif args is None or getattr(args, "arch", None) is None:
        raise ConfigError(f"{cfg_file} not found; pass the model flags explicitly")
    if args is not None:
        for flag, key in _RUN_FLAGS.items():
            val = getattr(args, flag, None)
            if val is not None:
                kv[key] = str(val)
    run = RunConfig.from_kv(kv).validate()
    model = build_model(run.model_config(), seed=run.seed)
    load_weights(model, checkpoint_load(ckpt))
    return model, run


def translate_volume(model, vol: Volume, size: int, batch: int = 4) -> Volume:
    vox = vol.voxels
    slices = [vox] if vox.ndim == 2 else list(vox)
    out = []
    for start in range(0, len(slices), batch):
        chunk = slices[start:start + batch]
        x = np.stack([hu_to_norm(resize_nearest(s, size)) for s in chunk])[:, None]
        pred = model.predict(x.astype(np.float32))
        out += [resize_nearest(norm_to_hu(p[0]), s.shape) for p, s in zip(pred, chunk)]
    res = out[0] if vox.ndim == 2 else np.stack(out)
    return Volume(res.astype(np.float32), vol.spacing)


def cmd_infer(args) -> int:
    model, run = load_model(args.ckpt, args)
    vol = gvol_read(args.input)
    sct = translate_volume(model, vol, run.size)
    gvol_write(sct, args.out)
    print(f"wrote {args.out} {sct.dims}")
    return EXIT_OK


# -- eval / compare -------------------------------------------------------

def write_report(path, rows: Dict[str, MetricsReport]) -> None:
    path = Path(path)
    atomic_write(path, format_table(rows).encode("utf-8"))
    write_kv(path.with_name(path.name + ".kv"), report_kv(rows))


def cmd_eval(args) -> int:
    pred = gvol_read(args.pred)
    ref = gvol_read(args.ref)
    rep = evaluate_pair(pred.voxels, ref.voxels)
    rows = {args.name: rep}
    write_report(args.report, rows)
    sys.stdout.write(format_table(rows))
    return EXIT_OK


COMPARISON = (("unet_d2", "glob"), ("meunet", "glob"), ("meunet", "mcl"))


def run_comparison(ds, run: RunConfig, progress=None) -> Dict[str, MetricsReport]:
    """Train each (arch, loss) of the ablation grid with one budget and score it.

    Scores are the per-pair masked metrics averaged over ``ds``, next to the
    untouched CBCT as a baseline row.
    """
    x, y = ds.arrays(run.size)
    rows = {"CBCT": _mean_report([evaluate_pair(c, t) for c, t in zip(ds.cbct, ds.ct)])}
    for arch, loss in COMPARISON:
        r = RunConfig(**{**run.__dict__, "arch": arch, "loss": loss}).validate()
        model, hist = fit_new(x, y, r)
        if progress:
            progress(f"{arch}+{loss}: final loss {hist[-1].total:.4f} after {len(hist)} steps")
        pred = model.predict(x)
        reps = [evaluate_pair(resize_nearest(norm_to_hu(p[0]), t.shape), t)
                for p, t in zip(pred, ds.ct)]
        rows[f"{arch}+{loss}"] = _mean_report(reps)
    return rows


def _mean_report(reps: List[MetricsReport]) -> MetricsReport:
    out = MetricsReport()
    for field in ("ssim", "psnr"):
        for r in ("full", "ST", "bone"):
            vals = [getattr(rep, field)[r] for rep in reps if getattr(rep, field).get(r) is not None]
            getattr(out, field)[r] = float(np.mean(vals)) if vals else None
    out.counts = {r: sum(rep.counts.get(r, 0) for rep in reps) for r in ("full", "ST", "bone")}
    out.mae_hu = float(np.mean([rep.mae_hu for rep in reps]))
    return out


def cmd_compare(args) -> int:
    run = _run_config(args, loss="glob")
    ds = dataset_build(args.data)
    if len(ds) == 0:
        raise DataError(f"no slice pairs found in {args.data}")
    rows = run_comparison(ds, run, progress=print)
    write_report(args.report, rows)
    sys.stdout.write(format_table(rows))
    return EXIT_OK


# -- verification ---------------------------------------------------------

def _print_results(results) -> int:
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import verify
    if args.all or not args.op:
        return _print_results(verify.gradcheck_all(seed=args.seed))
    try:
        return _print_results([verify.gradcheck_op(args.op, seed=args.seed)])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def cmd_selftest(args) -> int:
    from . import verify
    return _print_results(verify.selftest(seed=args.seed))


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glfc", description="CBCT to synthetic-CT toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write seeded phantom CT/CBCT pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=int, default=256)
    d = PhantomConfig()
    p.add_argument("--shading", type=float, default=d.shading)
    p.add_argument("--streak", type=float, default=d.streak)
    p.add_argument("--noise", type=float, default=d.noise)
    p.add_argument("--drift", type=float, default=d.drift)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network on a phantom/data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--loss", choices=("glob", "mcl"))
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (default: CKPT.log)")
    p.add_argument("--quiet", action="store_true")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="translate a CBCT volume")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="masked SSIM/PSNR of a prediction against a CT")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--name", default="sCT", help="row label in the report")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train the ablation grid and tabulate metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--op")
    g.add_argument("--all", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="all verification suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=_thread_limit(getattr(args, "threads", None))):
            return args.func(args)
    except GLFCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc, OSError) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
