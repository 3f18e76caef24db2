"""``tdsse`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ENV_KEY, ConfigError, RunConfig, parse_config, write_run_metadata
from .core import FormatError, ImageTensor, RoiMask, Variant, center_crop
from .imageio import load_image, load_mask, save_image, save_mask, synth_images
from .pipeline import CIPHERS, decrypt_frame, encrypt_frame, load_frame, save_frame
from .protocols import (
    PROTOCOLS,
    ProtocolError,
    run_protocol,
    write_results,
    write_transfer_matrix,
)
from .roi import RoiPolicy, generate_mask

log = logging.getLogger("tdsse")


def _add_cipher_flags(p):
    p.add_argument("--cipher", choices=CIPHERS, help="tile cipher instantiation (default aes-ctr)")
    p.add_argument("--permute", dest="permute", action="store_true", default=None,
                   help="enable the in-tile permutation of the spd cipher (default)")
    p.add_argument("--no-permute", dest="permute", action="store_false")
    p.add_argument("--full-image", dest="full_image", action="store_true", default=None,
                   help="AES_CTR_FULL baseline encrypts the whole image")
    p.add_argument("--roi-only", dest="full_image", action="store_false",
                   help="AES_CTR_FULL baseline encrypts ROI tiles only (default)")
    p.add_argument("--tile-size", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--key", dest="master_key", help=f"master key, 64 hex chars (or set {ENV_KEY})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdsse", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run evaluation protocols and write CSV results")
    run.add_argument("--protocol", required=True, choices=[p.lower() for p in PROTOCOLS] + ["all"])
    run.add_argument("--config", help="key = value configuration file")
    run.add_argument("--variant", action="append", help="variant(s), repeatable or comma-separated")
    run.add_argument("--attacker", action="append", help="Att-LR and/or Att-CNN")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--n-images", type=int)
    run.add_argument("--height", type=int)
    run.add_argument("--width", type=int)
    run.add_argument("--channels", type=int)
    run.add_argument("--coverage", type=float)
    run.add_argument("--cnn-epochs", type=int)
    _add_cipher_flags(run)

    enc = sub.add_parser("encrypt", help="selectively encrypt one PGM/PPM image")
    enc.add_argument("--variant", required=True)
    enc.add_argument("--in", dest="input", required=True)
    enc.add_argument("--mask", required=True, help="PGM mask, ROI pixels >= 128")
    enc.add_argument("--out", required=True, help="output .tdse container")
    enc.add_argument("--t", type=int, default=0, help="frame index")
    enc.add_argument("--seed", type=int, help="seed the nonce (experiments only; default OS entropy)")
    _add_cipher_flags(enc)

    dec = sub.add_parser("decrypt", help="decrypt a .tdse container")
    dec.add_argument("--in", dest="input", required=True)
    dec.add_argument("--mask", required=True)
    dec.add_argument("--out", required=True, help="output PGM/PPM")
    _add_cipher_flags(dec)

    syn = sub.add_parser("synth", help="write synthetic images and ROI masks")
    syn.add_argument("--n", type=int, default=4)
    syn.add_argument("--out", required=True)
    syn.add_argument("--height", type=int, default=256)
    syn.add_argument("--width", type=int, default=256)
    syn.add_argument("--channels", type=int, choices=(1, 3), default=3)
    syn.add_argument("--coverage", type=float, default=0.3)
    syn.add_argument("--tile-size", type=int, default=64)
    syn.add_argument("--seed", type=int, default=0)
    return parser


def _config(args, **extra) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "out", "n_images", "height", "width", "channels", "coverage", "cnn_epochs",
                  "cipher", "permute", "full_image", "tile_size", "threshold", "master_key")}
    overrides["variants"] = getattr(args, "variant", None)
    overrides["attackers"] = getattr(args, "attacker", None)
    overrides.update(extra)
    return parse_config(getattr(args, "config", None), overrides)


def cmd_run(args) -> int:
    cfg = _config(args)
    protocols = PROTOCOLS if args.protocol == "all" else (args.protocol.upper(),)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    timings = {}
    for pid in protocols:
        spec = cfg.protocol_spec(pid)
        matrix = [] if pid == "E5" else None
        start = time.perf_counter()
        try:
            rows = run_protocol(spec, matrix)
        except ProtocolError as exc:
            log.error("%s failed: %s", pid, exc)
            status = 1
            continue
        timings[pid] = round(time.perf_counter() - start, 2)
        path = out / f"results_{pid.lower()}.csv"
        write_results(rows, path)
        log.info("%s: %d rows -> %s (%.1fs)", pid, len(rows), path, timings[pid])
        if matrix:
            write_transfer_matrix(matrix, out / "e5_transfer_matrix.csv")
    variants = {pid: [v.value for v in cfg.protocol_spec(pid).variants] for pid in protocols}
    write_run_metadata(replace(cfg, protocol=",".join(protocols)), out,
                       extra={"protocols": list(protocols), "variants_by_protocol": variants,
                              "runtime_s": timings})
    return status


def _policy(cfg: RunConfig) -> RoiPolicy:
    return RoiPolicy(tile_size=cfg.tile_size, threshold=cfg.threshold)


def _ingest(image: ImageTensor, mask: RoiMask, s: int):
    if (mask.height, mask.width) != (image.height, image.width):
        raise FormatError(f"mask {mask.width}x{mask.height} does not match image {image.width}x{image.height}")
    if image.height % s or image.width % s:
        log.warning("cropping %dx%d image to a multiple of %d", image.height, image.width, s)
        image = center_crop(image, s)
        mask = RoiMask(center_crop(ImageTensor(mask.bits), s).data[:, :, 0])
    return image, mask


def cmd_encrypt(args) -> int:
    cfg = _config(args)
    variant = Variant.parse(args.variant)
    image, mask = _ingest(load_image(args.input), load_mask(args.mask), cfg.tile_size)
    frame = encrypt_frame(variant, cfg.master, image, mask, args.t, _policy(cfg), args.seed,
                          cipher=cfg.cipher, permute=cfg.permute, full_image=cfg.full_image)
    save_frame(frame, args.out)
    log.info("encrypted %d tile(s) with %s -> %s", len(frame.roi_tiles), variant.value, args.out)
    return 0


def cmd_decrypt(args) -> int:
    cfg = _config(args)
    frame = load_frame(args.input)
    mask = load_mask(args.mask)
    if (mask.height, mask.width) != (frame.cipher.height, frame.cipher.width):
        # the image was cropped at encryption time; crop the mask the same way
        mask = RoiMask(center_crop(ImageTensor(mask.bits), cfg.tile_size).data[:, :, 0])
    _, mask = _ingest(frame.cipher, mask, cfg.tile_size)
    image = decrypt_frame(frame.variant, cfg.master, frame, mask, _policy(cfg),
                          cipher=cfg.cipher, permute=cfg.permute, full_image=cfg.full_image)
    save_image(image, args.out)
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "ppm" if args.channels == 3 else "pgm"
    images = synth_images(args.n, args.height, args.width, args.channels, args.seed)
    for k, img in enumerate(images):
        policy = RoiPolicy(tile_size=args.tile_size, target_coverage=args.coverage,
                           seed=int(np.random.SeedSequence([args.seed, k]).generate_state(1)[0]))
        save_image(img, out / f"img_{k:03d}.{ext}")
        save_mask(generate_mask(args.height, args.width, policy), out / f"mask_{k:03d}.pgm")
    return 0


COMMANDS = {"run": cmd_run, "encrypt": cmd_encrypt, "decrypt": cmd_decrypt, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"tdsse: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
