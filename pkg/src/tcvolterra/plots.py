"""PNG figures for the CLI's ``--figures`` flag (Agg backend, no display)."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path, meta: Optional[dict]) -> Path:
    fig.tight_layout()
    # run metadata goes into a PNG text chunk; no software/version stamp
    info = {"Software": None}
    if meta:
        info["Description"] = json.dumps(meta, sort_keys=True)
    fig.savefig(path, dpi=100, metadata=info)
    plt.close(fig)
    return path


def plot_simulation(path, t, X, clock, meta: Optional[dict] = None, n_show: int = 20) -> Path:
    """Sample state paths with the ensemble mean, and the mean clocks."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    for p in range(min(n_show, X.shape[0])):
        a1.plot(t, X[p], color="0.7", lw=0.7)
    a1.plot(t, X.mean(axis=0), color="C0", lw=2, label="mean")
    a1.set_xlabel("t")
    a1.set_ylabel("X(t)")
    a1.legend()
    a2.plot(t, clock[:, :, 0].mean(axis=0), label="Brownian clock")
    a2.plot(t, clock[:, :, 1].mean(axis=0), label="jump clock")
    a2.set_xlabel("t")
    a2.set_ylabel("mean Lambda(t)")
    a2.legend()
    return _save(fig, Path(path), meta)


def plot_solve(path, t, trace, profiles, meta: Optional[dict] = None) -> Path:
    """Residual norm per iteration and the final residual profile per cell."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    it = [r["iteration"] for r in trace]
    norms = np.array([r["residual_norms"] for r in trace])
    for k in range(norms.shape[1]):
        if np.any(norms[:, k] > 0):
            a1.semilogy(it, norms[:, k], marker="o", label=f"player {k + 1}")
    a1.set_xlabel("iteration")
    a1.set_ylabel("projected residual norm")
    if a1.lines:
        a1.legend()
    profiles = np.asarray(profiles)
    for k in range(profiles.shape[0]):
        a2.plot(t[:-1], profiles[k], label=f"player {k + 1}")
    a2.set_xlabel("t")
    a2.set_ylabel("|E R(t)|")
    a2.legend()
    return _save(fig, Path(path), meta)
