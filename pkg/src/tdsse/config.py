"""Run configuration: ``key = value`` files overridden by command-line flags, and run metadata."""

from __future__ import annotations

import hashlib
import json
import os
import platform
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import Variant
from .pipeline import CIPHERS
from .protocols import ABLATION, ATTACKERS, DEFAULT_MASTER, PROTOCOLS, ProtocolSpec

ENV_KEY = "TDSSE_MASTER_KEY"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    protocol: str = "E2"
    variants: tuple = tuple(v.value for v in ABLATION)
    attackers: tuple = ATTACKERS
    n_images: int = 200
    height: int = 256
    width: int = 256
    channels: int = 3
    tile_size: int = 64
    coverage: float = 0.3
    threshold: float = 0.5
    master_key: str = DEFAULT_MASTER.hex()
    seed: int = 0
    out: str = "results"
    cipher: str = "aes-ctr"
    permute: bool = True
    full_image: bool = False
    cnn_epochs: int = 10

    @property
    def master(self) -> bytes:
        return bytes.fromhex(self.master_key)

    def protocol_spec(self, protocol: str | None = None) -> ProtocolSpec:
        pid = (protocol or self.protocol).upper()
        variants = self.variants
        if pid == "CPA" and self.variants == RunConfig.variants:
            variants = ("B1", "A3")
        return ProtocolSpec(
            pid, variants=variants, attackers=self.attackers, seed=self.seed, n_images=self.n_images,
            height=self.height, width=self.width, channels=self.channels, tile_size=self.tile_size,
            threshold=self.threshold, coverage=self.coverage, master=self.master, cipher=self.cipher,
            permute=self.permute, full_image=self.full_image, cnn_epochs=self.cnn_epochs,
        )


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        items = [p for t in text for p in str(t).split(",")]
    else:
        items = str(text).split(",")
    return tuple(p.strip() for p in items if p.strip())


def _coerce(key: str, value):
    """Convert one raw value; errors name the key and the form expected."""
    expect = {
        "protocol": f"one of {', '.join(p.lower() for p in PROTOCOLS)}",
        "variants": "comma-separated variant names",
        "attackers": f"comma-separated subset of {', '.join(ATTACKERS)}",
        "master_key": "64 hex characters",
        "cipher": f"one of {', '.join(CIPHERS)}",
        "coverage": "a number in (0, 1)",
        "threshold": "a number in (0, 1]",
        "permute": "true/false",
        "full_image": "true/false",
    }.get(key, "an integer" if key in _INT_KEYS else "a string")
    try:
        if key in _INT_KEYS:
            out = int(value)
            if out < (0 if key == "seed" else 1):
                raise ValueError
            return out
        if key in ("coverage", "threshold"):
            out = float(value)
            ok = 0 < out < 1 if key == "coverage" else 0 < out <= 1
            if not ok:
                raise ValueError
            return out
        if key in ("permute", "full_image"):
            return value if isinstance(value, bool) else _bool(value)
        if key == "protocol":
            out = str(value).upper()
            if out not in PROTOCOLS:
                raise ValueError
            return out
        if key == "variants":
            items = _list(value)
            if not items:
                raise ValueError
            return tuple(Variant.parse(v).value for v in items)
        if key == "attackers":
            items = _list(value)
            if not items or any(a not in ATTACKERS for a in items):
                raise ValueError
            return items
        if key == "master_key":
            raw = bytes.fromhex(str(value).strip())
            if len(raw) != 32:
                raise ValueError
            return raw.hex()
        if key == "cipher":
            if value not in CIPHERS:
                raise ValueError
            return value
        return str(value)
    except ValueError as exc:
        detail = f" ({exc})" if str(exc) else ""
        raise ConfigError(f"bad value {value!r} for {key}: expected {expect}{detail}") from None


_KEYS = {f.name for f in fields(RunConfig)}
_INT_KEYS = {"n_images", "height", "width", "channels", "tile_size", "seed", "cnn_epochs"}


def read_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}; valid keys: {', '.join(sorted(_KEYS))}")
        values[key] = value
    return values


def parse_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults, then the config file, then ``TDSSE_MASTER_KEY``, then explicit overrides."""
    env = os.environ if env is None else env
    raw = read_config_file(path) if path else {}
    if env.get(ENV_KEY):
        raw["master_key"] = env[ENV_KEY]
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in raw.items()})
    if cfg.channels not in (1, 3):
        raise ConfigError(f"bad value {cfg.channels!r} for channels: expected 1 or 3")
    for dim in ("height", "width"):
        if getattr(cfg, dim) % cfg.tile_size:
            raise ConfigError(f"{dim} {getattr(cfg, dim)} is not a multiple of tile_size {cfg.tile_size}")
    if cfg.tile_size % 16:
        raise ConfigError(f"bad value {cfg.tile_size} for tile_size: expected a multiple of 16")
    return cfg


CONVENTIONS = {
    "tile_byte_order": "row-major by pixel, channels interleaved",
    "info_tag": "'TILE' || BE16(i) || BE16(j); frame context enters through the HKDF salt only",
    "a2_nonce": "all-zero, 16 bytes",
    "ctr": "AES-128 key = tile_key[:16]; counter block = nonce[:8] || BE64(counter), counter from 0 per tile",
    "aes_ctr_baseline": "key = master[:16]; roi-only by default, counters offset by tile position; "
                        "--full-image encrypts the whole image as one stream",
    "spd_prf": "HKDF-Expand(HMAC(0^32, key || label), 'SPD' [|| BE32(chunk)])",
    "spd_permutation": "Fisher-Yates from S1 offset 0, 8-byte BE words, j = w mod (k+1)",
    "attacker_input_transform": "ciphertext tile -> same grayscale + 4x4 mean-pool proxy as the target",
    "lowfreq": "luma 0.299/0.587/0.114, mean pooling to 16x16, /255",
    "ssim": "global single-window, C1=(0.01)^2, C2=(0.03)^2, unbiased moments",
    "psnr": "peak 1.0, capped at 99.00 dB",
    "ridge": "centered closed form; lambda chosen from the sweep on the last 20% of training samples",
    "cnn": "conv3x3(1-16) ReLU conv3x3(16-16) ReLU conv3x3(16-1); Adam b1=0.9 b2=0.999 eps=1e-8; "
           "uniform +/-1/sqrt(fan_in) init",
    "mask_generator": "union of 1-4 axis-aligned rectangles, bisection-scaled to target, "
                      "accept within +/-0.05, up to 20 attempts",
    "split": "seeded permutation, first half train / second half test, by image",
    "e5_sources": "center = (rows//2, cols//2), corner00 = (0, 0); both forced ROI; targets are ROI tiles only",
    "synthetic_images": "linear gradient + 2-6 rectangles + N(0, 3) noise",
    "nonces": "drawn from the seeded harness RNG (not an OS entropy source)",
}


def write_run_metadata(config: RunConfig, out_dir, decisions: dict | None = None, extra: dict | None = None):
    """Write ``metadata.json`` describing every convention and seed behind a run."""
    out_dir = Path(out_dir)
    cfg = asdict(config)
    key = cfg.pop("master_key")
    cfg["master_key_sha256"] = hashlib.sha256(bytes.fromhex(key)).hexdigest()
    cfg["master_key_is_default_test_key"] = key == DEFAULT_MASTER.hex()
    record = {
        "software": {"tdsse": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "config": cfg,
        "cipher_instantiation": config.cipher,
        "conventions": dict(CONVENTIONS, **(decisions or {})),
    }
    if extra:
        record.update(extra)
    path = out_dir / "metadata.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write run metadata to {path}: {exc}") from exc
    return path


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **{k: _coerce(k, v) for k, v in kw.items()})
