import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# (center_x, center_y), radius, rgb -- all well above black in luma
BLOBS = [
    ((60, 60), 14, (230, 180, 40)),
    ((190, 80), 12, (200, 90, 60)),
    ((120, 190), 16, (150, 200, 90)),
]


def blob_image(blobs=BLOBS, size=256):
    img = np.zeros((size, size, 3), dtype=np.uint8)
    yy, xx = np.mgrid[:size, :size]
    for (cx, cy), r, color in blobs:
        img[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = color
    return img


@pytest.fixture
def blobs_rgb():
    return blob_image()
