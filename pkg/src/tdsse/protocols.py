"""Evaluation protocols E2-E5 and the CPA keystream-reuse sanity break.

Every protocol builds the same seeded synthetic dataset, encrypts it under
each requested variant, pairs the low-frequency proxy of ciphertext tiles
with that of the plaintext tiles, trains attackers on one image subset and
scores them on the other.
"""

from __future__ import annotations

import csv
import functools
import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .core import ImageTensor, RoiMask, TileIndex, Variant, iter_tiles, tile_bytes, write_tile
from .imageio import synth_images
from .metrics import MetricPair, aggregate, score
from .pipeline import encrypt_frame
from .probes import fit_cnn, fit_ridge, to_lowfreq
from .roi import RoiPolicy, force_tiles, generate_mask, mismatch_mask, select_roi_tiles

log = logging.getLogger(__name__)

PROTOCOLS = ("E2", "E3", "E4", "E5", "CPA")
ATTACKERS = ("Att-LR", "Att-CNN")
SCENARIOS = {
    "S1": "S1_roi_known",
    "S2": "S2_roi_unknown",
    "S3": "S3_roi_wrong",
}
SOURCES = ("center", "corner00")
CPA_ATTACKER = "CPA-XOR"
DEFAULT_MASTER = bytes(range(32))
ABLATION = (Variant.A0, Variant.A1, Variant.A2, Variant.A3)


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolSpec:
    id: str
    dataset: str = "synthetic"
    variants: tuple = ABLATION
    attackers: tuple = ATTACKERS
    seed: int = 0
    n_images: int = 200
    height: int = 256
    width: int = 256
    channels: int = 3
    tile_size: int = 64
    threshold: float = 0.5
    coverage: float = 0.3
    master: bytes = DEFAULT_MASTER
    cipher: str = "aes-ctr"
    permute: bool = True
    full_image: bool = False
    include_aes_ctr: bool = True
    swap_subsets: bool = False
    source_positions: tuple = SOURCES
    scenarios: tuple = ("S1", "S2", "S3")
    lambdas: tuple = (0.1, 1.0, 10.0)
    cnn_epochs: int = 10
    cnn_lr: float = 1e-3
    cnn_batch: int = 64

    def __post_init__(self):
        pid = self.id.upper()
        if pid not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.id!r}; expected one of {PROTOCOLS}")
        object.__setattr__(self, "id", pid)
        object.__setattr__(self, "variants", tuple(Variant.parse(v) if isinstance(v, str) else Variant(v)
                                                   for v in self.variants))
        if not self.variants:
            raise ValueError("variant list must not be empty")
        if not self.attackers:
            raise ValueError("attacker list must not be empty")
        for a in self.attackers:
            if a not in ATTACKERS:
                raise ValueError(f"unknown attacker {a!r}; expected one of {ATTACKERS}")
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}; expected one of {tuple(SCENARIOS)}")
        for p in self.source_positions:
            if p not in SOURCES:
                raise ValueError(f"unknown source position {p!r}; expected one of {SOURCES}")

    @property
    def policy(self) -> RoiPolicy:
        return RoiPolicy(self.tile_size, self.threshold, self.coverage, self.seed)

    @property
    def cipher_opts(self) -> dict:
        return {"cipher": self.cipher, "permute": self.permute, "full_image": self.full_image}


@dataclass(frozen=True)
class ResultRow:
    protocol: str
    dataset: str
    attacker: str
    method: str
    scenario: str
    source: str
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    n_tiles: int

    def sort_key(self):
        return (self.protocol, self.attacker, self.method, self.scenario, self.source)


def _row(spec, attacker, method, scores, scenario="", source="", n_tiles=None) -> ResultRow:
    stats = aggregate(scores)
    return ResultRow(spec.id, spec.dataset, attacker, method, scenario, source,
                     *stats["psnr"], *stats["ssim"], len(scores) if n_tiles is None else n_tiles)


# ---------------------------------------------------------------------------
# dataset and encryption


def _subseed(*parts) -> int:
    return int(np.random.SeedSequence([p & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


@dataclass
class Dataset:
    images: list
    masks: list
    rows: int
    cols: int
    _plain_lf: dict = field(default_factory=dict)

    def roi(self, k, spec) -> frozenset:
        return select_roi_tiles(self.masks[k], spec.tile_size, spec.threshold)

    def plain_lowfreq(self, k, s):
        out = self._plain_lf.get(k)
        if out is None:
            out = self._plain_lf[k] = _lowfreq_grid(self.images[k], s)
        return out


def _lowfreq_grid(image: ImageTensor, s: int) -> np.ndarray:
    rows, cols = image.height // s, image.width // s
    grid = np.empty((rows, cols, 16, 16))
    for i, j in iter_tiles(image, s):
        grid[i, j] = to_lowfreq(image.data[i * s:(i + 1) * s, j * s:(j + 1) * s])
    return grid


@functools.lru_cache(maxsize=4)
def _images(n, h, w, c, seed):
    return tuple(synth_images(n, h, w, c, seed))


def build_dataset(spec: ProtocolSpec, force=()) -> Dataset:
    """Seeded images and masks; ``force`` lists tile positions made ROI in every mask."""
    images = list(_images(spec.n_images, spec.height, spec.width, spec.channels, spec.seed))
    masks = []
    for k in range(spec.n_images):
        policy = replace(spec.policy, seed=_subseed(spec.seed, k, 1))
        mask = generate_mask(spec.height, spec.width, policy)
        if force:
            mask = force_tiles(mask, force, spec.tile_size)
        masks.append(mask)
    return Dataset(images, masks, spec.height // spec.tile_size, spec.width // spec.tile_size)


def encrypt_dataset(ds: Dataset, spec: ProtocolSpec, variant: Variant) -> list:
    """Low-frequency grids of every ciphertext tile, one ``(rows, cols, 16, 16)`` array per image."""
    out = []
    for k, (img, mask) in enumerate(zip(ds.images, ds.masks)):
        enc = encrypt_frame(variant, spec.master, img, mask, k, spec.policy,
                            _subseed(spec.seed, k, 2, variant.code), **spec.cipher_opts)
        grid = ds.plain_lowfreq(k, spec.tile_size).copy()
        s = spec.tile_size
        for i, j in enc.roi_tiles:
            grid[i, j] = to_lowfreq(enc.cipher.data[i * s:(i + 1) * s, j * s:(j + 1) * s])
        out.append(grid)
    return out


def split_images(n: int, seed: int, swap: bool = False) -> tuple[list, list]:
    """Deterministic 50/50 split of image indices into (train, test)."""
    if n < 2:
        raise ProtocolError("need at least 2 images to split")
    order = np.random.default_rng(_subseed(seed, 3)).permutation(n)
    a, b = sorted(order[: n // 2].tolist()), sorted(order[n // 2:].tolist())
    return (b, a) if swap else (a, b)


def _pairs(cipher_lf, ds, images, tiles_of, s):
    xs, ys = [], []
    for k in images:
        plain = ds.plain_lowfreq(k, s)
        for i, j in sorted(tiles_of(k)):
            xs.append(cipher_lf[k][i, j])
            ys.append(plain[i, j])
    return np.array(xs).reshape(-1, 16, 16), np.array(ys).reshape(-1, 16, 16)


# ---------------------------------------------------------------------------
# attackers


def _choose_lambda(X, Y, lambdas):
    n = X.shape[0]
    if len(lambdas) == 1 or n < 10:
        return lambdas[0] if len(lambdas) == 1 else 1.0
    cut = n - max(1, n // 5)
    best = None
    for lam in lambdas:
        model = fit_ridge(X[:cut], Y[:cut], lam)
        err = float(np.mean((model.predict(X[cut:]) - Y[cut:]) ** 2))
        if best is None or err < best[0]:
            best = (err, lam)
    return best[1]


def fit_attacker(attacker: str, X, Y, spec: ProtocolSpec, seed: int):
    if X.shape[0] < 2:
        raise ProtocolError(f"only {X.shape[0]} training tiles; need at least 2")
    if attacker == "Att-LR":
        return fit_ridge(X, Y, _choose_lambda(X, Y, spec.lambdas))
    return fit_cnn(X, Y, epochs=spec.cnn_epochs, lr=spec.cnn_lr, batch=spec.cnn_batch, seed=seed)


def _evaluate(model, X, Y) -> list:
    if X.shape[0] < 1:
        raise ProtocolError("no evaluation tiles")
    pred = model.predict(X)
    return [score(p, y) for p, y in zip(pred, Y)]


# ---------------------------------------------------------------------------
# protocols


def _train_test(spec, ds, cipher_lf, attacker, train_tiles, seed_tag):
    train, test = split_images(spec.n_images, spec.seed, spec.swap_subsets)
    s = spec.tile_size
    X, Y = _pairs(cipher_lf, ds, train, train_tiles, s)
    Xt, Yt = _pairs(cipher_lf, ds, test, lambda k: ds.roi(k, spec), s)
    if Xt.shape[0] < 2:
        raise ProtocolError(f"only {Xt.shape[0]} ROI test tiles; need at least 2")
    model = fit_attacker(attacker, X, Y, spec, _subseed(spec.seed, *seed_tag))
    return _evaluate(model, Xt, Yt)


def _standard(spec, variants):
    ds = build_dataset(spec)
    rows = []
    for variant in variants:
        cipher_lf = encrypt_dataset(ds, spec, variant)
        for a, attacker in enumerate(spec.attackers):
            scores = _train_test(spec, ds, cipher_lf, attacker, lambda k: ds.roi(k, spec), (variant.code, a))
            rows.append(_row(spec, attacker, variant.label, scores))
    return rows


def run_e2_ablation(spec: ProtocolSpec) -> list[ResultRow]:
    """Each variant x attacker, trained on ROI tiles of one half of the images, tested on the other."""
    _expect(spec, "E2")
    return _standard(spec, spec.variants)


def run_e3_cross_sample(spec: ProtocolSpec) -> list[ResultRow]:
    """Disjoint image subsets A (train) / B (test), plus the AES-CTR baseline when enabled."""
    _expect(spec, "E3")
    variants = list(spec.variants)
    if spec.include_aes_ctr and Variant.AES_CTR_FULL not in variants:
        variants.append(Variant.AES_CTR_FULL)
    return _standard(spec, variants)


def run_e4_roi_asymmetry(spec: ProtocolSpec) -> list[ResultRow]:
    """S1 trains on true ROI tiles, S2 on all tiles, S3 on mismatched-mask tiles; all test on true ROI."""
    _expect(spec, "E4")
    ds = build_dataset(spec)
    all_tiles = frozenset(iter_tiles(ds.images[0], spec.tile_size))
    wrong = {}

    def wrong_tiles(k):
        if k not in wrong:
            m = mismatch_mask(ds.masks[k], _subseed(spec.seed, k, 4), spec.tile_size, spec.threshold)
            wrong[k] = select_roi_tiles(m, spec.tile_size, spec.threshold)
        return wrong[k]

    choose = {
        "S1": lambda k: ds.roi(k, spec),
        "S2": lambda k: all_tiles,
        "S3": wrong_tiles,
    }
    rows = []
    for variant in spec.variants:
        cipher_lf = encrypt_dataset(ds, spec, variant)
        for a, attacker in enumerate(spec.attackers):
            for sc in spec.scenarios:
                # S1 reuses the E2/E3 seed tag so its numbers coincide with E3
                tag = (variant.code, a) if sc == "S1" else (variant.code, a, int(sc[1]))
                scores = _train_test(spec, ds, cipher_lf, attacker, choose[sc], tag)
                rows.append(_row(spec, attacker, variant.label, scores, scenario=SCENARIOS[sc]))
    return rows


def source_tile(name: str, rows: int, cols: int) -> tuple[int, int]:
    if name == "center":
        return rows // 2, cols // 2
    if name == "corner00":
        return 0, 0
    raise ValueError(f"unknown source position {name!r}")


@dataclass(frozen=True)
class TransferCell:
    source: str
    target_i: int
    target_j: int
    method: str
    attacker: str
    psnr: float
    ssim: float


def run_e5_cross_tile(spec: ProtocolSpec, matrix_out: list | None = None) -> list[ResultRow]:
    """Train at one tile position, score at every other ROI position of the test images.

    Rows report mean +/- std across target positions of the per-target mean
    scores. Per-target cells are appended to ``matrix_out`` when given.
    """
    _expect(spec, "E5")
    if not spec.source_positions:
        raise ProtocolError("E5 needs at least one source position")
    rows_n, cols_n = spec.height // spec.tile_size, spec.width // spec.tile_size
    sources = {name: source_tile(name, rows_n, cols_n) for name in spec.source_positions}
    ds = build_dataset(spec, force=sorted(set(sources.values())))
    train, test = split_images(spec.n_images, spec.seed, spec.swap_subsets)
    s = spec.tile_size
    rows = []
    for variant in spec.variants:
        cipher_lf = encrypt_dataset(ds, spec, variant)
        for a, attacker in enumerate(spec.attackers):
            for name, src in sources.items():
                X, Y = _pairs(cipher_lf, ds, train, lambda k: [src], s)
                model = fit_attacker(attacker, X, Y, spec, _subseed(spec.seed, variant.code, a, 5, *src))
                per_target = []
                n_tiles = 0
                for i, j in sorted(iter_tiles(ds.images[0], s)):
                    if (i, j) == src:
                        continue
                    holders = [k for k in test if (i, j) in ds.roi(k, spec)]
                    if not holders:
                        continue
                    Xt, Yt = _pairs(cipher_lf, ds, holders, lambda k: [(i, j)], s)
                    scores = _evaluate(model, Xt, Yt)
                    n_tiles += len(scores)
                    stats = aggregate(scores)
                    per_target.append(MetricPair(stats["psnr"][0], stats["ssim"][0]))
                    if matrix_out is not None:
                        matrix_out.append(TransferCell(name, i, j, variant.label, attacker,
                                                       stats["psnr"][0], stats["ssim"][0]))
                if len(per_target) < 1:
                    raise ProtocolError(f"no ROI target tiles for source {name}")
                rows.append(_row(spec, attacker, variant.label, per_target, source=name, n_tiles=n_tiles))
    return rows


def cpa_recover_frame(variant: Variant, spec: ProtocolSpec, image: ImageTensor, mask: RoiMask, t: int,
                      nonce: bytes):
    """One chosen-plaintext query against one frame.

    The oracle encrypts the victim image and the attacker's query (victim with
    the first ROI tile zeroed) under the same nonce. The query tile's
    ciphertext is taken as keystream and XORed onto every other ROI tile of
    the victim ciphertext. Returns ``[(tile, recovered_bytes, true_bytes)]``,
    or ``None`` when the frame has fewer than two ROI tiles.
    """
    s = spec.tile_size
    roi = sorted(select_roi_tiles(mask, s, spec.threshold))
    if len(roi) < 2:
        return None
    probe = roi[0]
    zero = bytes(s * s * image.channels)
    query = write_tile(image, TileIndex(t, *probe), s, zero)
    victim_ct = encrypt_frame(variant, spec.master, image, mask, t, spec.policy, nonce=nonce, **spec.cipher_opts)
    query_ct = encrypt_frame(variant, spec.master, query, mask, t, spec.policy, nonce=nonce, **spec.cipher_opts)
    keystream = np.frombuffer(tile_bytes(query_ct.cipher, TileIndex(t, *probe), s), dtype=np.uint8)
    out = []
    for tile in roi[1:]:
        idx = TileIndex(t, *tile)
        ct = np.frombuffer(tile_bytes(victim_ct.cipher, idx, s), dtype=np.uint8)
        out.append((tile, (ct ^ keystream).tobytes(), tile_bytes(image, idx, s)))
    return out


def run_cpa_sanity(spec: ProtocolSpec) -> list[ResultRow]:
    _expect(spec, "CPA")
    ds = build_dataset(spec)
    rows = []
    for variant in spec.variants:
        scores = []
        for k, (img, mask) in enumerate(zip(ds.images, ds.masks)):
            nonce = np.random.default_rng(_subseed(spec.seed, k, 6, variant.code)).bytes(16)
            recovered = cpa_recover_frame(variant, spec, img, mask, k, nonce)
            if recovered is None:
                log.warning("CPA: image %d has fewer than 2 ROI tiles; skipped", k)
                continue
            for _, rec, true in recovered:
                scores.append(score(to_lowfreq(rec, img.channels), to_lowfreq(true, img.channels)))
        if not scores:
            raise ProtocolError("CPA: no frame had two ROI tiles")
        rows.append(_row(spec, CPA_ATTACKER, variant.label, scores))
    return rows


RUNNERS = {
    "E2": run_e2_ablation,
    "E3": run_e3_cross_sample,
    "E4": run_e4_roi_asymmetry,
    "E5": run_e5_cross_tile,
    "CPA": run_cpa_sanity,
}


def _expect(spec, pid):
    if spec.id != pid:
        raise ValueError(f"spec is for {spec.id}, not {pid}")


def run_protocol(spec: ProtocolSpec, matrix_out: list | None = None) -> list[ResultRow]:
    if spec.id == "E5":
        return run_e5_cross_tile(spec, matrix_out)
    return RUNNERS[spec.id](spec)


# ---------------------------------------------------------------------------
# CSV output

HEADER = [f.name for f in fields(ResultRow)]
MATRIX_HEADER = ["source", "target_i", "target_j", "method", "attacker", "psnr", "ssim"]


def _fmt_row(r: ResultRow) -> list:
    return [r.protocol, r.dataset, r.attacker, r.method, r.scenario, r.source,
            f"{r.psnr_mean:.2f}", f"{r.psnr_std:.2f}", f"{r.ssim_mean:.3f}", f"{r.ssim_std:.3f}", str(r.n_tiles)]


def write_results(rows, path) -> None:
    rows = sorted(rows, key=ResultRow.sort_key)
    if not rows:
        raise ValueError("no result rows to write")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            w.writerows(_fmt_row(r) for r in rows)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            ResultRow(d["protocol"], d["dataset"], d["attacker"], d["method"], d["scenario"], d["source"],
                      float(d["psnr_mean"]), float(d["psnr_std"]), float(d["ssim_mean"]), float(d["ssim_std"]),
                      int(d["n_tiles"]))
            for d in reader
        ]


def write_transfer_matrix(cells, path) -> None:
    cells = sorted(cells, key=lambda c: (c.source, c.method, c.attacker, c.target_i, c.target_j))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATRIX_HEADER)
        for c in cells:
            w.writerow([c.source, c.target_i, c.target_j, c.method, c.attacker, f"{c.psnr:.2f}", f"{c.ssim:.3f}"])


def rounded(row: ResultRow) -> ResultRow:
    """The row as it reads back from CSV."""
    return replace(row, psnr_mean=round(row.psnr_mean, 2), psnr_std=round(row.psnr_std, 2),
                   ssim_mean=round(row.ssim_mean, 3), ssim_std=round(row.ssim_std, 3))
