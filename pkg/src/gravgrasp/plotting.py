"""SVG figures: SR/CR curves and label-volume cross sections."""

from __future__ import annotations

import io
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry.volume import VoxelVolume  # noqa: E402
from .io import atomic_write_bytes  # noqa: E402

_PLANE = re.compile(r"^\s*([xyz])\s*=\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$")
_AXES = {"x": 0, "y": 1, "z": 2}


def parse_plane(spec: str) -> tuple[int, float]:
    """``"z=0.08"`` -> (2, 0.08)."""
    m = _PLANE.match(spec or "")
    if not m:
        raise ValueError(f"bad plane spec {spec!r}; expected e.g. 'z=0.08'")
    return _AXES[m.group(1)], float(m.group(2))


def _save_svg(fig, path) -> None:
    buf = io.BytesIO()
    with plt.rc_context({"svg.hashsalt": "gravgrasp", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_metrics(rows, path) -> None:
    """Two curves (SR, CR in percent) against object weight."""
    w = [r.weight_kg for r in rows]
    sr = [np.nan if r.sr is None else r.sr for r in rows]
    cr = [np.nan if r.cr is None else r.cr for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(w, sr, marker="o", label="SR")
    ax.plot(w, cr, marker="s", label="CR")
    ax.set_xlabel("object weight [kg]")
    ax.set_ylabel("%")
    ax.set_ylim(0, 105)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, path)


def section_index(volume: VoxelVolume, axis: int, value: float) -> int:
    k = int(np.floor((value - volume.origin[axis]) / volume.voxel_size))
    if not 0 <= k < volume.dims[axis]:
        raise ValueError(f"plane at {value} lies outside the volume")
    return k


def cross_section(volume: VoxelVolume, channel: str, axis: int, value: float) -> np.ndarray:
    return np.take(volume[channel], section_index(volume, axis, value), axis=axis)


def plot_cross_section(volume: VoxelVolume, plane: str, path, tsdf: VoxelVolume | None = None) -> None:
    """Heatmap of the score on one grid plane; valid voxels in colour, invalid ones grey.

    When ``tsdf`` is given, a second panel shows the input volume on the same plane.
    """
    axis, value = parse_plane(plane)
    other = [a for a in range(3) if a != axis]
    extent = []
    for a in other:
        lo = volume.origin[a]
        extent += [lo, lo + volume.dims[a] * volume.voxel_size]
    names = "xyz"
    panels = 2 if tsdf is not None else 1
    fig, axes = plt.subplots(1, panels, figsize=(4.5 * panels, 4), squeeze=False)
    if tsdf is not None:
        t = cross_section(tsdf, "tsdf", axis, value)
        im = axes[0, 0].imshow(t.T, origin="lower", extent=extent, cmap="RdBu", vmin=-1, vmax=1)
        axes[0, 0].set_title(f"TSDF, {names[axis]} = {value:g}")
        fig.colorbar(im, ax=axes[0, 0], shrink=0.8)
    ax = axes[0, -1]
    valid = cross_section(volume, "validness", axis, value).astype(bool)
    f = np.where(valid, cross_section(volume, "f_g", axis, value), np.nan)
    ax.imshow(np.where(valid, np.nan, 0.0).T, origin="lower", extent=extent, cmap="Greys", vmin=0, vmax=4)
    im = ax.imshow(f.T, origin="lower", extent=extent, cmap="viridis")
    ax.set_title(f"grasp score [N], {names[axis]} = {value:g} ({int(valid.sum())} valid)")
    fig.colorbar(im, ax=ax, shrink=0.8)
    for a in axes[0]:
        a.set_xlabel(f"{names[other[0]]} [m]")
        a.set_ylabel(f"{names[other[1]]} [m]")
    fig.tight_layout()
    _save_svg(fig, path)
