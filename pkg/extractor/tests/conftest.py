from pathlib import Path

import pytest

from imaging import draw_rect, rect_mask, solid_image


@pytest.fixture
def perseg_dataset(tmp_path) -> Path:
    """Two classes: red-box (two views) and blue-box (one view), 448x448."""
    size = (448, 448)
    scenes = {
        "red-box": [((60, 60, 200, 180), (200, 30, 30)), ((220, 240, 360, 360), (200, 30, 30))],
        "blue-box": [((100, 120, 260, 240), (30, 30, 200))],
    }
    root = tmp_path / "dataset"
    for label, views in scenes.items():
        for idx, (box, color) in enumerate(views):
            img = draw_rect(solid_image(size), box, color)
            img_path = root / "Images" / label / f"{idx:02d}.png"
            img_path.parent.mkdir(parents=True, exist_ok=True)
            img.save(img_path)
            mask_path = root / "Annotations" / label / f"{idx:02d}.png"
            mask_path.parent.mkdir(parents=True, exist_ok=True)
            rect_mask(size, box).save(mask_path)
    return root
