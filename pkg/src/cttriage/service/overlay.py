"""Overlay rendering: a lung-windowed grayscale slice with the lesion mask
tinted on a green-to-red scale by the study severity (or identification
probability). Pixels are deterministic for fixed inputs; tint appears
exactly on the mask support."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..errors import SliceOutOfRange

DISPLAY_WINDOW = (-1000.0, 300.0)
TINT_ALPHA = 0.5


def tint_color(value: float) -> tuple[float, float, float]:
    """Green (0) to red (1), linear."""
    t = min(max(float(value), 0.0), 1.0)
    return 255.0 * t, 255.0 * (1.0 - t), 0.0


def render_overlay(volume_data: np.ndarray, lesion_data: np.ndarray | None,
                   slice_index: int, tint_value: float,
                   window: tuple[float, float] = DISPLAY_WINDOW) -> np.ndarray:
    """(H, W, 3) uint8 image of one axial slice."""
    n_slices = volume_data.shape[0]
    if not 0 <= slice_index < n_slices:
        raise SliceOutOfRange(f"slice {slice_index} outside [0, {n_slices})")
    lo, hi = window
    gray = np.clip(volume_data[slice_index], lo, hi)
    gray = ((gray - lo) / (hi - lo) * 255.0).astype(np.float64)
    rgb = np.stack([gray, gray, gray], axis=-1)

    if lesion_data is not None:
        support = lesion_data[slice_index] != 0
        if support.any():
            color = np.array(tint_color(tint_value))
            rgb[support] = (1.0 - TINT_ALPHA) * rgb[support] + TINT_ALPHA * color
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
