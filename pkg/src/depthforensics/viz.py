"""Per-sample inspection panels: input, target depth, prediction, attention.

The rightmost panel is the channel-mean activation of the enhanced feature
map at the injection point (a simple stand-in for gradient-weighted class
activation maps).
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .exceptions import ContractViolation


def _upsample_nearest(grid, size):
    """Repeat a (n, n) patch grid up to (size, size) pixels."""
    n = grid.shape[0]
    reps = size // n
    return np.repeat(np.repeat(grid, reps, axis=0), reps, axis=1)


def visualize(model, records, out_dir, max_count=None):
    """Write one PNG panel per record; returns the list of written paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ContractViolation(f"cannot create output directory {out_dir}: {e}") from e
    if max_count is not None:
        records = records[:max_count]
    paths = []
    for record in records:
        acts = model.activations(record.image)
        size = record.image.shape[0]
        panels = [("input", record.image), ("target depth", record.depth / 255.0)]
        if acts["depth_pred"] is not None:
            n = model.config.fdmt.patches_per_side
            pred = acts["depth_pred"][0].reshape(n, n)
            panels.append(("predicted depth", _upsample_nearest(pred, size)))
        heat = acts["f_en"][0].mean(axis=-1)
        panels.append(("activation", heat))

        fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.2))
        prob = acts["prob_fake"][0]
        label = "fake" if record.label == 1 else "real"
        fig.suptitle(f"{record.sample_id} ({label}, p_fake={prob:.3f})")
        for ax, (title, img) in zip(np.atleast_1d(axes), panels):
            if img.ndim == 3:
                ax.imshow(np.clip(img, 0, 1))
            elif title == "predicted depth":
                # head outputs live in [0, 1]; render on the full grayscale range
                ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0)
            else:
                ax.imshow(img, cmap="gray" if "depth" in title else "magma")
            ax.set_title(title, fontsize=9)
            ax.axis("off")
        path = out_dir / f"{record.sample_id}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
