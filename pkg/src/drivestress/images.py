"""Image file IO: PNG and portable pixmap, always as HxWx3 uint8 RGB."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .types import validate_image


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return validate_image(arr)


def save_image(img: np.ndarray, path: str | Path) -> None:
    """Write as PNG or PPM depending on the suffix (.png, .ppm)."""
    validate_image(img)
    path = Path(path)
    if path.suffix.lower() not in (".png", ".ppm"):
        raise ValueError(f"unsupported image suffix {path.suffix!r}; use .png or .ppm")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="RGB").save(path)
