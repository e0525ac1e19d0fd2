"""Regenerates tests/fixtures/images from scikit-image's bundled sample photos."""

import pathlib

import cv2
import numpy as np
import skimage.data as data

NAMES = ["astronaut", "chelsea", "coffee", "rocket", "hubble_deep_field",
         "immunohistochemistry", "retina", "brick"]
SHORT_SIDE = 176

out_dir = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "images"
out_dir.mkdir(parents=True, exist_ok=True)
for name in NAMES:
    img = getattr(data, name)()
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    img = img[..., :3]
    h, w = img.shape[:2]
    scale = SHORT_SIDE / min(h, w)
    size = (max(SHORT_SIDE, round(w * scale)), max(SHORT_SIDE, round(h * scale)))
    img = cv2.resize(img, size, interpolation=cv2.INTER_AREA)
    cv2.imwrite(str(out_dir / f"{name}.jpg"), cv2.cvtColor(img, cv2.COLOR_RGB2BGR),
                [cv2.IMWRITE_JPEG_QUALITY, 92])
    print(name, img.shape)

# Brush-style mask as a canvas would export it: white known area, black strokes
# with anti-aliased edges (gray values straddle the 128 threshold).
mask_dir = out_dir.parent / "masks"
mask_dir.mkdir(parents=True, exist_ok=True)
canvas = np.full((128, 128), 255, np.uint8)
cv2.line(canvas, (20, 30), (100, 90), 0, 12, cv2.LINE_AA)
cv2.circle(canvas, (40, 95), 14, 0, -1, cv2.LINE_AA)
cv2.rectangle(canvas, (80, 10), (110, 35), 0, -1)
cv2.imwrite(str(mask_dir / "brush_128.png"), canvas)
np.savetxt(mask_dir / "brush_128_holes.txt", (canvas < 128).astype(np.uint8), fmt="%d", delimiter="")
print("mask", canvas.shape, (canvas < 128).mean())
