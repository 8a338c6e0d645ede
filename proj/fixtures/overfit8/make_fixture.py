#!/usr/bin/env python3
"""Regenerates the 8-clip memorization fixture: 4 synthetic 32x32 frames per
clip plus fixture.manifest. Pixels are pure functions of (clip, frame, x, y),
so reruns are byte-identical. Frame paths in the manifest are relative to the
repository root."""

import json
import os

SIZE = 32
CLIPS = [
    ("clip-0", "a red car drives down the road"),
    ("clip-1", "a blue truck stops at the light"),
    ("clip-2", "a white van turns left at night"),
    ("clip-3", "two dogs run across the green field"),
    ("clip-4", "a child rides a bike on grass"),
    ("clip-5", "the black cat sleeps on the sofa"),
    ("clip-6", "a man walks into the old house"),
    ("clip-7", "rain falls over the quiet city street"),
]

# Per-clip look: base color, stripe direction/width, moving-square color.
STYLE = [
    ((200, 40, 40), 0, 3, (255, 255, 0)),
    ((40, 80, 200), 1, 5, (0, 255, 255)),
    ((230, 230, 230), 0, 7, (40, 40, 40)),
    ((30, 160, 60), 1, 4, (255, 120, 0)),
    ((120, 200, 120), 0, 6, (200, 0, 200)),
    ((50, 50, 50), 1, 3, (255, 255, 255)),
    ((160, 120, 60), 0, 5, (0, 60, 255)),
    ((90, 90, 140), 1, 8, (180, 255, 180)),
]


def pixel(ci, fi, x, y):
    base, direction, width, accent = STYLE[ci]
    along = x if direction == 0 else y
    stripe = (along // width + fi) % 2
    r, g, b = base
    if stripe:
        r, g, b = r // 2, g // 2, b // 2
    # an 8x8 square that walks across the frame clip-specifically
    sx = (4 * fi + 3 * ci) % (SIZE - 8)
    sy = (5 * fi + 2 * ci) % (SIZE - 8)
    if sx <= x < sx + 8 and sy <= y < sy + 8:
        r, g, b = accent
    # mild per-clip texture so no two clips share flat regions
    r = (r + (x * y * (ci + 1)) % 23) % 256
    return r, g, b


def write_ppm(path, ci, fi):
    rows = [b"P6\n", b"32 32\n", b"255\n"]
    body = bytearray()
    for y in range(SIZE):
        for x in range(SIZE):
            body.extend(pixel(ci, fi, x, y))
    with open(path, "wb") as f:
        f.writelines(rows)
        f.write(bytes(body))


def main():
    root = os.path.dirname(os.path.abspath(__file__))
    records = []
    for ci, (clip_id, caption) in enumerate(CLIPS):
        frame_dir = os.path.join(root, "frames", clip_id)
        os.makedirs(frame_dir, exist_ok=True)
        for fi in range(4):
            write_ppm(os.path.join(frame_dir, "frame-%02d.ppm" % fi), ci, fi)
        records.append({
            "video_id": clip_id,
            "frames": "fixtures/overfit8/frames/%s" % clip_id,
            "captions": [caption],
        })
    with open(os.path.join(root, "fixture.manifest"), "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
