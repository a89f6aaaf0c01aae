"""Reference preprocessors following the ``CMD <in.yuv> <out.yuv> <width> <height>`` contract.

Run as ``python -m rdbench.preprocessors {identity,unsharp,hqdn3d} IN OUT W H``.
They exist so a sweep can be exercised end to end without a learned model.
"""

from __future__ import annotations

import argparse
import shutil
import subprocess
import sys

from .harness import Tools


def run_filter(name: str, src: str, dst: str, width: int, height: int, ffmpeg: str | None = None) -> None:
    exe = Tools.discover(ffmpeg).ffmpeg
    geom = ["-f", "rawvideo", "-pix_fmt", "yuv420p", "-s", f"{width}x{height}"]
    subprocess.run([exe, "-v", "error", "-y", *geom, "-i", src, "-vf", name,
                    "-f", "rawvideo", "-pix_fmt", "yuv420p", dst], check=True)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m rdbench.preprocessors")
    ap.add_argument("name", choices=("identity", "unsharp", "hqdn3d"))
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("width", type=int)
    ap.add_argument("height", type=int)
    ap.add_argument("--ffmpeg")
    a = ap.parse_args(argv)
    if a.name == "identity":
        shutil.copyfile(a.src, a.dst)
    else:
        try:
            run_filter(a.name, a.src, a.dst, a.width, a.height, a.ffmpeg)
        except subprocess.CalledProcessError as exc:
            return exc.returncode or 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
