"""Command line front end.

Subcommands: simulate, mask, reconstruct, denoise1d, ablate, metrics,
gfactor. Every artifact-producing subcommand writes ``manifest.ini`` (the
fully resolved configuration) into the output directory; re-running the
same subcommand with ``--config manifest.ini`` reproduces the outputs
bit for bit. Exit codes: 0 success, 2 configuration or usage error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .engine import NonFiniteError
from .expconfig import ConfigError, apply_overrides, default_config, load_config, save_config
from .experiments import (
    ablation_config,
    ablation_experiment,
    build_mask,
    denoise1d_experiment,
    generator_config_from,
    make_phantom_dataset,
    optimizer_config_from,
    psnr_table,
)
from .fileio import TensorFileError, export_image, read_tensor, write_csv, write_tensor, write_trace_csv
from .masks import MaskGenerationError, SamplingMask
from .methods import METHODS
from .metrics import psnr, ssim
from .mri import ForwardModel, sense_g_factor
from .optim import NumericsError
from .sim import CoilGeometry, birdcage_maps
from .variational import MulticoilKspaceData

PROG = "dnlinv"


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _base_config(args, fallback=None) -> dict:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = fallback() if fallback is not None else default_config()
    if args.seed is not None:
        cfg["phantom"]["seed"] = args.seed
        cfg["mask"]["seed"] = args.seed
        cfg["optimizer"]["seed"] = args.seed
    return cfg


def _fold(cfg: dict, section: str, **pairs) -> dict:
    """Fold non-None CLI flags into one config section."""
    keys = {k: v for k, v in pairs.items() if v is not None}
    return apply_overrides(cfg, {section: keys}) if keys else cfg


def _load_mask(path) -> SamplingMask:
    arr = read_tensor(path)
    if np.iscomplexobj(arr):
        raise ConfigError(f"mask tensor {path} must be real-valued")
    mask = arr > 0.5
    return SamplingMask(mask, kind="file", target_acceleration=mask.size / max(int(mask.sum()), 1))


def _finite_preview(img: np.ndarray) -> np.ndarray:
    """PGM export demands finite pixels; cap +inf at the finite max."""
    finite = np.isfinite(img)
    if finite.all():
        return img
    cap = float(img[finite].max()) if finite.any() else 1.0
    return np.nan_to_num(img, nan=0.0, posinf=cap, neginf=0.0)


def _cmd_simulate(args) -> int:
    cfg = _base_config(args)
    cfg = _fold(
        cfg,
        "phantom",
        shape=tuple(args.shape) if args.shape else None,
        coils=args.coils,
        sigma=args.sigma,
    )
    cfg = _fold(cfg, "mask", kind=args.mask, rx=args.rx, ry=args.ry, af=args.af, calib=args.calib, shift=args.shift)
    if args.phantom != "shepp":
        raise ConfigError(f"unknown phantom {args.phantom!r}")
    ds = make_phantom_dataset(cfg["phantom"], cfg["mask"])
    out = _outdir(args)
    write_tensor(os.path.join(out, "phantom.dnlv"), ds.image)
    write_tensor(os.path.join(out, "maps.dnlv"), ds.maps)
    write_tensor(os.path.join(out, "mask.dnlv"), ds.mask.array.astype(np.float64))
    write_tensor(os.path.join(out, "kspace.dnlv"), ds.kspace)
    write_tensor(os.path.join(out, "reference.dnlv"), ds.reference)
    export_image(ds.image, os.path.join(out, "phantom.pgm"))
    save_config(cfg, os.path.join(out, "manifest.ini"))
    print(f"wrote phantom/maps/mask/kspace/reference to {out} (AF {ds.mask.acceleration:.2f})")
    return 0


def _cmd_mask(args) -> int:
    cfg = _base_config(args)
    cfg = _fold(cfg, "mask", kind=args.kind, rx=args.rx, ry=args.ry, af=args.af, calib=args.calib, shift=args.shift)
    if args.shape:
        cfg = apply_overrides(cfg, {"phantom": {"shape": tuple(args.shape)}})
    mask = build_mask(cfg["mask"], tuple(cfg["phantom"]["shape"]))
    out = _outdir(args)
    write_tensor(os.path.join(out, "mask.dnlv"), mask.array.astype(np.float64))
    export_image(mask.array.astype(float), os.path.join(out, "mask.pgm"), window=(0.0, 1.0))
    save_config(cfg, os.path.join(out, "manifest.ini"))
    print(f"wrote mask to {out} (kind {mask.kind}, AF {mask.acceleration:.2f})")
    return 0


def _cmd_reconstruct(args) -> int:
    from .methods import run_method

    cfg = _base_config(args)
    cfg = _fold(cfg, "paths", kspace=args.kspace, mask=args.mask, maps=args.maps)
    cfg = _fold(cfg, "method", name=args.method, use_model_maps=args.use_model_maps)
    cfg = _fold(cfg, "optimizer", iterations=args.iterations)
    kspace_path, mask_path = cfg["paths"]["kspace"], cfg["paths"]["mask"]
    if not kspace_path or not mask_path:
        raise ConfigError("reconstruct needs --kspace and --mask (or [paths] entries in the config)")
    kspace = np.asarray(read_tensor(kspace_path), dtype=complex)
    if kspace.ndim != 3:
        raise ConfigError(f"k-space tensor must be (coil, ky, kx), got shape {kspace.shape}")
    mask = _load_mask(mask_path)
    if mask.shape != kspace.shape[1:]:
        raise ConfigError(f"mask shape {mask.shape} does not match k-space grid {kspace.shape[1:]}")
    known = cfg["method"]["use_model_maps"]
    maps = np.ones(kspace.shape, complex)
    if cfg["paths"]["maps"]:
        maps = np.asarray(read_tensor(cfg["paths"]["maps"]), dtype=complex)
        if maps.shape != kspace.shape:
            raise ConfigError(f"maps shape {maps.shape} does not match k-space {kspace.shape}")
    elif known:
        raise ConfigError("use_model_maps requires --maps (or a [paths] maps entry)")
    data = MulticoilKspaceData(kspace, ForwardModel(maps, mask.array), use_model_maps=known)
    gen_cfg = generator_config_from(cfg, kspace.shape[1:], 0 if known else kspace.shape[0])
    opt_cfg = optimizer_config_from(cfg)
    res = run_method(cfg["method"]["name"], data, gen_cfg, opt_cfg)

    out = _outdir(args)
    write_tensor(os.path.join(out, "image.dnlv"), res.image)
    write_tensor(os.path.join(out, "combined.dnlv"), res.combined)
    if res.coils is not None:
        write_tensor(os.path.join(out, "coils.dnlv"), res.coils)
    write_tensor(os.path.join(out, "coil_images.dnlv"), res.coil_images)
    write_tensor(os.path.join(out, "uncertainty.dnlv"), res.uncertainty)
    if res.sigma is not None:
        write_tensor(os.path.join(out, "sigma.dnlv"), res.sigma)
    export_image(res.combined, os.path.join(out, "image.pgm"))
    write_trace_csv(res.trace, os.path.join(out, "trace.csv"))
    save_config(cfg, os.path.join(out, "manifest.ini"))
    print(
        f"{res.method}: {opt_cfg.iterations} iterations in {res.elapsed_seconds:.1f}s, "
        f"final loss {res.trace[-1].loss:.4g}, outputs in {out}"
    )
    return 0


def _cmd_denoise1d(args) -> int:
    cfg = _base_config(args)
    cfg = _fold(cfg, "denoise", sigma=args.sigma, samples=args.samples, length=args.length)
    d = cfg["denoise"]
    clean, noisy, results, mle = denoise1d_experiment(
        sigma=d["sigma"],
        n_samples=d["samples"],
        length=d["length"],
        cfg=cfg,
        signal_seed=cfg["phantom"]["seed"],
    )
    out = _outdir(args)

    names = list(METHODS)
    iters = [p.iteration for p in results[names[0]].trace]
    mle_psnr = psnr(mle, clean)
    rows = []
    for i, it in enumerate(iters):
        rows.append([it] + [results[n].trace[i].psnr for n in names] + [mle_psnr])
    write_csv(os.path.join(out, "psnr_curves.csv"), ["iteration"] + names + ["mle"], rows)

    est_rows = [
        [i, clean[i], noisy[:, i].mean(), mle[i]] + [float(results[n].image[i]) for n in names]
        for i in range(len(clean))
    ]
    write_csv(
        os.path.join(out, "estimates.csv"),
        ["position", "clean", "noisy_mean", "mle"] + names,
        est_rows,
    )
    save_config(cfg, os.path.join(out, "manifest.ini"))
    peaks = {n: max(p.psnr for p in results[n].trace if p.psnr is not None) for n in names}
    print(f"mle {mle_psnr:.2f} dB; peaks: " + ", ".join(f"{n} {v:.2f}" for n, v in peaks.items()))
    return 0


def _cmd_ablate(args) -> int:
    cfg = _base_config(args, fallback=ablation_config)
    ds, results = ablation_experiment(cfg)
    out = _outdir(args)
    table = psnr_table(results)
    rows = [
        [name, row["peak_psnr"], row["peak_iteration"], row["final_psnr"], row["final_iteration"]]
        for name, row in table.items()
    ]
    write_csv(
        os.path.join(out, "ablation_summary.csv"),
        ["method", "peak_psnr", "peak_iteration", "final_psnr", "final_iteration"],
        rows,
    )
    for name, res in results.items():
        write_trace_csv(res.trace, os.path.join(out, f"trace_{name}.csv"))
        write_tensor(os.path.join(out, f"combined_{name}.dnlv"), res.combined)
        export_image(res.combined, os.path.join(out, f"image_{name}.pgm"))
    write_tensor(os.path.join(out, "reference.dnlv"), ds.reference)
    save_config(cfg, os.path.join(out, "manifest.ini"))
    for name, row in table.items():
        print(f"{name}: peak {row['peak_psnr']:.2f} dB @ {row['peak_iteration']}, final {row['final_psnr']:.2f} dB")
    return 0


def _cmd_metrics(args) -> int:
    a = np.abs(read_tensor(args.a))
    b = np.abs(read_tensor(args.b))
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {a.shape} vs {b.shape}")
    print(f"psnr={psnr(a, b)} ssim={ssim(a, b)}")
    return 0


def _cmd_gfactor(args) -> int:
    cfg = _base_config(args)
    cfg = _fold(cfg, "paths", maps=args.maps)
    cfg = _fold(cfg, "mask", rx=args.rx, ry=args.ry)
    if cfg["paths"]["maps"]:
        maps = np.asarray(read_tensor(cfg["paths"]["maps"]), dtype=complex)
    else:
        p = cfg["phantom"]
        geometry = CoilGeometry(n_coils=p["coils"], radius=p["coil_radius"], normalize=p["normalize_maps"])
        maps = birdcage_maps(geometry, tuple(p["shape"]))
    g = sense_g_factor(maps, (cfg["mask"]["rx"], cfg["mask"]["ry"]))
    out = _outdir(args)
    write_tensor(os.path.join(out, "gfactor.dnlv"), g)
    export_image(_finite_preview(g), os.path.join(out, "gfactor.pgm"))
    save_config(cfg, os.path.join(out, "manifest.ini"))
    finite = g[np.isfinite(g)]
    print(f"g-factor: max {finite.max():.2f}, mean {finite.mean():.2f} over {finite.size} finite pixels")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file overlaying the defaults")
    common.add_argument("--seed", type=int, help="override phantom, mask, and optimizer seeds")
    common.add_argument("--out", default=".", help="output directory (default: current)")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic multicoil dataset")
    p.add_argument("--phantom", default="shepp", help="phantom name (shepp)")
    p.add_argument("--shape", type=int, nargs=2, metavar=("NY", "NX"))
    p.add_argument("--coils", type=int)
    p.add_argument("--sigma", type=float, help="k-space noise standard deviation")
    p.add_argument("--mask", choices=("full", "even", "caipirinha", "poisson", "lines"))
    p.add_argument("--rx", type=int)
    p.add_argument("--ry", type=int)
    p.add_argument("--af", type=float)
    p.add_argument("--calib", type=int)
    p.add_argument("--shift", type=int)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("mask", parents=[common], help="write a sampling mask")
    p.add_argument("--kind", choices=("full", "even", "caipirinha", "poisson", "lines"))
    p.add_argument("--shape", type=int, nargs=2, metavar=("NY", "NX"))
    p.add_argument("--rx", type=int)
    p.add_argument("--ry", type=int)
    p.add_argument("--af", type=float)
    p.add_argument("--calib", type=int)
    p.add_argument("--shift", type=int)
    p.set_defaults(fn=_cmd_mask)

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct k-space with a registered method")
    p.add_argument("--kspace", help="TensorFile of (coil, ky, kx) k-space")
    p.add_argument("--mask", help="TensorFile of the sampling mask")
    p.add_argument("--maps", help="optional TensorFile of coil maps")
    p.add_argument(
        "--use-model-maps",
        dest="use_model_maps",
        action="store_const",
        const=True,
        help="treat --maps as known sensitivity profiles (image-only generator)",
    )
    p.add_argument("--method", choices=tuple(METHODS))
    p.add_argument("--iterations", type=int)
    p.set_defaults(fn=_cmd_reconstruct)

    p = sub.add_parser("denoise1d", parents=[common], help="repeated-measurement 1-D denoising sweep")
    p.add_argument("--sigma", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--length", type=int)
    p.set_defaults(fn=_cmd_denoise1d)

    p = sub.add_parser("ablate", parents=[common], help="inference ablations on a Poisson-disk dataset")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("metrics", parents=[common], help="PSNR/SSIM between two tensor files")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("gfactor", parents=[common], help="SENSE noise-amplification map")
    p.add_argument("--maps", help="TensorFile of coil maps (default: simulate from config)")
    p.add_argument("--rx", type=int)
    p.add_argument("--ry", type=int)
    p.set_defaults(fn=_cmd_gfactor)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else 2
        return 0 if code == 0 else 2
    try:
        return args.fn(args)
    except (ConfigError, TensorFileError, MaskGenerationError, FileNotFoundError, IsADirectoryError) as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2
    except (NumericsError, NonFiniteError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"{PROG}: numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
