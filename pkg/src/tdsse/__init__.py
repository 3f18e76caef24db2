"""Tilewise domain-separated selective encryption (TDS-SE) and its CPA leakage harness."""

__version__ = "0.1.0"

from .core import FormatError, ImageTensor, RoiMask, TileIndex, Variant, tile_bytes, write_tile
from .keyschedule import derive_tile_key, encode_info, hkdf_expand, hkdf_extract
from .imageio import load_image, save_image, synth_images
from .pipeline import EncryptedFrame, decrypt_frame, encrypt_frame, tile_locality_probe
from .roi import RoiPolicy, generate_mask, mismatch_mask, select_roi_tiles

__all__ = [
    "EncryptedFrame",
    "FormatError",
    "ImageTensor",
    "RoiMask",
    "RoiPolicy",
    "TileIndex",
    "Variant",
    "decrypt_frame",
    "derive_tile_key",
    "encode_info",
    "encrypt_frame",
    "generate_mask",
    "hkdf_expand",
    "hkdf_extract",
    "load_image",
    "mismatch_mask",
    "save_image",
    "select_roi_tiles",
    "synth_images",
    "tile_bytes",
    "tile_locality_probe",
    "write_tile",
]
