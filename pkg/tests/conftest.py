from pathlib import Path

import numpy as np
import pytest

from rdbench.harness import Harness, RawSequence, available_tools

# natural photographs bundled with scikit-image (no download needed)
NATURAL_IMAGES = ("astronaut", "coffee", "rocket", "camera", "moon", "brick", "grass",
                  "gravel", "cell", "hubble_deep_field", "immunohistochemistry", "retina")


def rgb_to_yuv420(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BT.601 limited-range RGB -> planar 4:2:0 (2x2 box-averaged chroma)."""
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[..., None], 3, axis=2)
    rgb = rgb[..., :3].astype(float)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 16 + (65.481 * r + 128.553 * g + 24.966 * b) / 255
    cb = 128 + (-37.797 * r - 74.203 * g + 112.0 * b) / 255
    cr = 128 + (112.0 * r - 93.786 * g - 18.214 * b) / 255
    h, w = y.shape

    def sub(c):
        return c.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))

    def u8(a):
        return np.clip(np.floor(a + 0.5), 0, 255).astype(np.uint8)
    return u8(y), u8(sub(cb)), u8(sub(cr))


def natural_frames(width=512, height=384) -> list[np.ndarray]:
    import skimage.data
    out = []
    for name in NATURAL_IMAGES:
        img = getattr(skimage.data, name)()
        if img.dtype != np.uint8:
            img = (img * 255).astype(np.uint8) if img.max() <= 1 else img.astype(np.uint8)
        h, w = img.shape[:2]
        if h < height or w < width:
            continue
        y0, x0 = (h - height) // 2, (w - width) // 2
        out.append(img[y0:y0 + height, x0:x0 + width])
    return out


def write_yuv(path: Path, frames: list[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for f in frames:
            for plane in rgb_to_yuv420(f):
                fh.write(plane.tobytes())


@pytest.fixture(scope="session")
def tools():
    t = available_tools()
    if t is None:
        pytest.skip("ffmpeg with libx264/libvmaf not available")
    return t


@pytest.fixture(scope="session")
def natural_source(tmp_path_factory):
    """Raw 512x384 4:2:0 'video' whose frames are distinct natural photographs."""
    frames = natural_frames()
    path = tmp_path_factory.mktemp("src") / "natural_512x384.yuv"
    write_yuv(path, frames)
    return path, 512, 384, len(frames)


@pytest.fixture(scope="session")
def pan_clip(tmp_path_factory) -> RawSequence:
    """Eight 320x256 frames panning across a photograph (natural content + motion)."""
    import skimage.data
    img = skimage.data.astronaut()
    frames = [img[40 + 2 * i:40 + 2 * i + 256, 60 + 3 * i:60 + 3 * i + 320] for i in range(8)]
    path = tmp_path_factory.mktemp("clip") / "pan_320x256.yuv"
    write_yuv(path, frames)
    return RawSequence("pan", path, 320, 256, "25", 8)


@pytest.fixture()
def harness(tools, tmp_path):
    return Harness(tools, cache_dir=tmp_path / "cache", workers=4)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
