"""Command-line entry point: degrade, train, decode, eval, bench, desk-corpus.

Every subcommand writes ``run-config.txt`` (the resolved arguments) into its
output directory and exits 0 only when all requested outputs were written.
``SOFTDECODE_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

log = logging.getLogger("softdecode")

THREADS_ENV = "SOFTDECODE_THREADS"


class UsageError(Exception):
    """A rejected input; reported as one line and exit status 2."""


def _qf_list(text: str) -> list[int]:
    try:
        qfs = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--qf expects integers, got {text!r}") from None
    if not qfs:
        raise UsageError("--qf needs at least one quality factor")
    for q in qfs:
        if not 1 <= q <= 100:
            raise UsageError(f"quality factor {q} is outside the valid range 1..100")
    return qfs


def _sizes(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--sizes expects integers, got {text!r}") from None


def _echo_config(out_dir: Path, args: argparse.Namespace, extra: list[tuple[str, str]] = ()) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}\t{v}" for k, v in sorted(vars(args).items()) if k != "func"]
    lines += [f"{k}\t{v}" for k, v in extra]
    tmp = out_dir / ".run-config.txt.tmp"
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, out_dir / "run-config.txt")


def _write_text(path: Path, text: str) -> Path:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def _require_file(path: Path | None, what: str) -> Path:
    if path is None or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def cmd_degrade(args) -> int:
    from .jpeg import make_pair_corpus

    qfs = _qf_list(args.qf)
    if not Path(args.input).is_dir():
        raise UsageError(f"input directory not found: {args.input}")
    _echo_config(args.out, args)
    manifest = make_pair_corpus(args.input, qfs if len(qfs) > 1 else qfs[0], args.out)
    print(f"wrote {manifest}")
    return 0


def cmd_desk_corpus(args) -> int:
    from .datasets import write_desk_corpus

    _echo_config(args.out, args)
    train, val = write_desk_corpus(args.out)
    print(f"wrote {train} and {val}")
    return 0


def _train_config(args):
    from .pipeline import QfMode, TrainConfig
    from .sdnet import NetworkConfig

    cfg = TrainConfig.preset(args.preset)
    try:
        mode = QfMode.parse(args.qf)
    except ValueError as exc:
        raise UsageError(f"--qf: {exc}") from None
    overrides = {"qf_mode": mode, "seed": args.seed}
    for flag, name in (("iterations", "max_iterations"), ("lr", "initial_lr"), ("patches", "num_patches"),
                       ("batch", "batch_size"), ("val_every", "val_every"), ("dtype", "dtype")):
        if getattr(args, flag) is not None:
            overrides[name] = getattr(args, flag)
    if args.depth is not None or args.channels is not None:
        overrides["network"] = NetworkConfig(args.depth or cfg.network.depth, args.channels or cfg.network.hidden_channels)
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    from .pipeline import train_branch
    from .plotting import plot_training

    _require_file(args.manifest, "manifest")
    if args.val_manifest is not None:
        _require_file(args.val_manifest, "validation manifest")
    cfg = _train_config(args)
    domains = ["pixel", "wavelet"] if args.domain == "both" else [args.domain]
    _echo_config(args.out, args, cfg.describe())
    logs, baselines, summary = {}, {}, ["branch\tjpeg_val_psnr\tbest_val_psnr\tfinal_val_psnr\tpairs\tcheckpoint"]
    for domain in domains:
        result = train_branch(args.manifest, domain, cfg, args.out / f"{domain}.ckpt", val_manifest=args.val_manifest)
        logs[domain], baselines[domain] = result.log, result.jpeg_val_psnr
        summary.append(f"{domain}\t{result.jpeg_val_psnr:.4f}\t{result.best_val_psnr:.4f}\t"
                       f"{result.final_val_psnr:.4f}\t{result.num_pairs}\t{result.checkpoint.name}")
        print(f"{domain}: validation PSNR {result.jpeg_val_psnr:.3f} dB (JPEG) -> {result.final_val_psnr:.3f} dB "
              f"(best {result.best_val_psnr:.3f}); checkpoint {result.checkpoint}")
    _write_text(args.out / "summary.tsv", "\n".join(summary) + "\n")
    plot_training(logs, args.out / "training.png", baselines)
    return 0


def _load_pair(args):
    from .sdnet import load_checkpoint

    return (load_checkpoint(_require_file(args.pixel, "pixel checkpoint")),
            load_checkpoint(_require_file(args.wavelet, "wavelet checkpoint")))


def cmd_decode(args) -> int:
    from .imageio import list_images, read_gray, write_gray
    from .sdnet import soft_decode

    models = _load_pair(args)
    src = Path(args.input)
    if src.is_dir():
        paths = list_images(src)
    elif src.is_file():
        paths = [src]
    else:
        raise UsageError(f"input not found: {src}")
    if not paths:
        raise UsageError(f"no images in {src}")
    _echo_config(args.out, args)
    failed = 0
    for path in paths:
        try:
            img = read_gray(path)
            if img.shape[0] % 2 or img.shape[1] % 2:
                raise ValueError(f"height and width must be even for soft decoding, got {img.shape[0]}x{img.shape[1]}")
            result = soft_decode(*models, img)
        except (OSError, ValueError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failed += 1
            continue
        write_gray(args.out / f"{path.stem}.png", result.fused)
        if args.emit_branches:
            write_gray(args.out / f"{path.stem}_pixel.png", result.pixel)
            write_gray(args.out / f"{path.stem}_wavelet.png", result.wavelet)
    print(f"decoded {len(paths) - failed} of {len(paths)} image(s) into {args.out}")
    return 1 if failed else 0


def cmd_eval(args) -> int:
    from .pipeline import evaluate_corpus, evaluate_manifest
    from .plotting import plot_eval

    if (args.corpus is None) == (args.manifest is None):
        raise UsageError("give exactly one of --corpus or --manifest")
    if args.baseline_only:
        ckpts = (None, None)
    else:
        ckpts = (_require_file(args.pixel, "pixel checkpoint"), _require_file(args.wavelet, "wavelet checkpoint"))
    if args.corpus is not None:
        if not Path(args.corpus).is_dir():
            raise UsageError(f"corpus directory not found: {args.corpus}")
        table = evaluate_corpus(*ckpts, args.corpus, _qf_list(args.qf))
    else:
        table = evaluate_manifest(*ckpts, _require_file(args.manifest, "manifest"))
    _echo_config(args.out, args)
    _write_text(args.out / "summary.tsv", table.summary_tsv())
    _write_text(args.out / "per_image.tsv", table.per_image_tsv())
    plot_eval(table, args.out / "eval.png")
    print(table.summary_tsv(), end="")
    return 0


def cmd_bench(args) -> int:
    from .pipeline import bench_decode, fused_ratio
    from .plotting import plot_bench
    from .sdnet import PRESETS, init_model

    if args.pixel is None and args.wavelet is None:
        cfg = PRESETS[args.preset]
        models = (init_model(cfg, "pixel", dtype=args.dtype).eval(), init_model(cfg, "wavelet", dtype=args.dtype).eval())
    else:
        models = _load_pair(args)
    sizes = _sizes(args.sizes)
    if args.repeats < 1:
        raise UsageError("--repeats must be at least 1")
    try:
        rows = bench_decode(*models, sizes, args.repeats)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _echo_config(args.out, args)
    lines = ["size\tmethod\trepeats\tmedian_s\tfastest_s"]
    lines += [f"{r.size}\t{r.method}\t{r.repeats}\t{r.median:.6f}\t{r.fastest:.6f}" for r in rows]
    _write_text(args.out / "bench.tsv", "\n".join(lines) + "\n")
    ratios = ["size\tfused_over_single"] + [f"{s}\t{fused_ratio(rows, s):.4f}" for s in sizes]
    _write_text(args.out / "ratio.tsv", "\n".join(ratios) + "\n")
    plot_bench([(r.size, r.method, r.median) for r in rows], args.out / "bench.png")
    print("\n".join(lines[1:]))
    print("\n".join(f"fused / single-branch at {s}: {fused_ratio(rows, s):.2f}x" for s in sizes))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softdecode", description="Dual pixel/wavelet residual soft decoding of JPEG images.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("degrade", help="JPEG-degrade a folder and write a pair manifest")
    s.add_argument("--in", dest="input", type=Path, required=True)
    s.add_argument("--qf", required=True, help="one quality factor, or a comma list for round-robin assignment")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("desk-corpus", help="write the bundled natural-image train/val folders")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_desk_corpus)

    s = sub.add_parser("train", help="train one or both branch networks")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--val-manifest", type=Path, help="held-out pairs; default holds out the last fifth of the images")
    s.add_argument("--domain", choices=("pixel", "wavelet", "both"), default="both")
    s.add_argument("--qf", default="10", help="'10' for a dedicated model or 'blind:10,20,30,40'")
    s.add_argument("--preset", choices=("desk", "paper"), default="desk")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iterations", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--patches", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--val-every", type=int)
    s.add_argument("--depth", type=int)
    s.add_argument("--channels", type=int)
    s.add_argument("--dtype", choices=("float32", "float64"))
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("decode", help="soft-decode an image or a folder")
    s.add_argument("--pixel", type=Path, required=True)
    s.add_argument("--wavelet", type=Path, required=True)
    s.add_argument("--in", dest="input", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--emit-branches", action="store_true", help="also write the pixel and wavelet estimates")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", help="PSNR/SSIM/PSNR-B table for JPEG, both branches and the fusion")
    s.add_argument("--corpus", type=Path, help="folder of clean images, degraded at every --qf")
    s.add_argument("--manifest", type=Path, help="pair manifest to score as is")
    s.add_argument("--qf", default="10,20,30,40")
    s.add_argument("--pixel", type=Path)
    s.add_argument("--wavelet", type=Path)
    s.add_argument("--baseline-only", action="store_true", help="score the JPEG input only")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="decode timing per image size")
    s.add_argument("--pixel", type=Path)
    s.add_argument("--wavelet", type=Path)
    s.add_argument("--preset", choices=("desk", "paper"), default="desk",
                   help="untrained architecture to time when no checkpoints are given")
    s.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    s.add_argument("--sizes", default="256,512")
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_bench)
    return p


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _limit_threads()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
