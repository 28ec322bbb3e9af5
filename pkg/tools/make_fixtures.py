"""Generate the committed binary test fixtures under tests/fixtures/.

Run from the repository root:  python3 tools/make_fixtures.py

Deterministic: the same script produces the same files, so regenerating
after a change keeps the fixtures reviewable in version control.
"""

import io
from pathlib import Path

import numpy as np
from PIL import Image

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def write_rgb_2x2():
    # Documented pixel values, asserted exactly by the decode tests:
    # (0,0) red, (0,1) green, (1,0) blue, (1,1) yellow.
    pixels = np.array(
        [[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [255, 255, 0]]], dtype=np.uint8
    )
    Image.fromarray(pixels, "RGB").save(FIXTURES / "rgb_2x2.png")


def write_gray_4x4():
    pixels = (np.arange(16, dtype=np.uint8) * 16).reshape(4, 4)
    Image.fromarray(pixels, "L").save(FIXTURES / "gray_4x4.png")


def write_truncated_png():
    buf = io.BytesIO()
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    Image.fromarray(img, "RGB").save(buf, "PNG")
    blob = buf.getvalue()
    (FIXTURES / "truncated.png").write_bytes(blob[: int(len(blob) * 0.6)])


def write_jpeg_with_reference():
    # Smooth gradient so JPEG error stays tiny; the decoded array is
    # stored alongside as the reference for a <=2-greylevel tolerance.
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    img = np.stack([(4 * xx) % 256, (4 * yy) % 256, (2 * (xx + yy)) % 256], axis=2).astype(np.uint8)
    path = FIXTURES / "photo.jpg"
    Image.fromarray(img, "RGB").save(path, "JPEG", quality=92)
    with Image.open(path) as decoded:
        np.save(FIXTURES / "photo_reference.npy", np.asarray(decoded))


def _texture(rng, defect=False):
    base = rng.integers(90, 166, size=(48, 48, 3), dtype=np.uint8)
    smooth = base.astype(np.float64)
    # cheap blur so the images look like a material surface, not static
    for _ in range(2):
        smooth = (
            smooth
            + np.roll(smooth, 1, axis=0)
            + np.roll(smooth, -1, axis=0)
            + np.roll(smooth, 1, axis=1)
            + np.roll(smooth, -1, axis=1)
        ) / 5.0
    img = smooth.astype(np.uint8)
    if defect:
        r0, c0 = int(rng.integers(8, 28)), int(rng.integers(4, 16))
        length = int(rng.integers(16, 28))
        for t in range(length):
            rr = min(r0 + t // 3, 47)
            cc = min(c0 + t, 47)
            img[rr : rr + 2, cc : cc + 2] = [250, 250, 250]
    return img


def write_mini_dataset():
    rng = np.random.default_rng(11)
    root = FIXTURES / "mini_dataset"
    for category in ("bolt", "washer"):
        for i in range(3):
            path = root / category / "train" / "good" / f"{i:03d}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(_texture(rng), "RGB").save(path)
        good = root / category / "test" / "good" / "000.png"
        good.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(_texture(rng), "RGB").save(good)
        for i in range(2):
            path = root / category / "test" / "scratch" / f"{i:03d}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(_texture(rng, defect=True), "RGB").save(path)


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    write_rgb_2x2()
    write_gray_4x4()
    write_truncated_png()
    write_jpeg_with_reference()
    write_mini_dataset()
    count = sum(1 for _ in FIXTURES.rglob("*") if _.is_file())
    print(f"wrote fixtures under {FIXTURES} ({count} files)")


if __name__ == "__main__":
    main()
