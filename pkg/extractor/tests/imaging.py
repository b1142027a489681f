"""Synthetic image builders for the extractor tests."""

import numpy as np
from PIL import Image


def solid_image(size: tuple[int, int], color=(128, 128, 128)) -> Image.Image:
    return Image.new("RGB", size, color)


def draw_rect(img: Image.Image, box: tuple[int, int, int, int], color) -> Image.Image:
    """Paint an inclusive pixel box; returns a new image."""
    arr = np.array(img)
    x0, y0, x1, y1 = box
    arr[y0 : y1 + 1, x0 : x1 + 1] = color
    return Image.fromarray(arr)


def rect_mask(size: tuple[int, int], box: tuple[int, int, int, int]) -> Image.Image:
    w, h = size
    arr = np.zeros((h, w), dtype=np.uint8)
    x0, y0, x1, y1 = box
    arr[y0 : y1 + 1, x0 : x1 + 1] = 255
    return Image.fromarray(arr, mode="L")
