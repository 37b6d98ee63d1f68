"""Synthetic channels, the angular-delay image, and what truncation keeps.

Run: python demos/01_channels_and_transforms.py   (a few seconds)
"""

# %%
import numpy as np

from duffin.data import (
    cosine_similarity,
    fit_normalization,
    generate_scenario,
    normalize,
    offset_sweep,
    reconstruct_full,
    scenario,
    to_angular_delay,
    truncate,
)

# %% one indoor channel at the default geometry: 1024 subcarriers, 32 antennas
cfg = scenario("indoor", seed=0)
h = generate_scenario(cfg, 1)[0]
print("spatial-frequency CSI", h.shape, h.dtype)

# %% the 2D DFT moves it to the angular-delay domain, where it is sparse
hd = to_angular_delay(h)
energy = np.abs(hd) ** 2
rows = energy.sum(axis=1)
print(f"energy in the first {cfg.ns} delay rows: {rows[: cfg.ns].sum() / rows.sum():.4f}")
top = np.sort(energy.ravel())[::-1]
print(f"largest pixel holds {top[0] / top.sum():.1%} of the energy, the top 20 hold {top[:20].sum() / top.sum():.1%}")

# %% the encoder input: real and imaginary parts squeezed into [0, 1]
hs = truncate(hd, cfg.ns)
meta = fit_normalization(hs)
img = normalize(hs, meta)
print("image", img.shape, f"range [{img.min():.3f}, {img.max():.3f}], scale {meta.scale:.3f}")

# a perfect decoder can do no better than the zero-padded window
back = reconstruct_full(img, meta, 0, cfg.nc)
print(f"window-only reconstruction: cosine similarity {cosine_similarity(h, back):.4f}")

# %% sliding the window away from the strongest delays loses more
for name in ("indoor", "outdoor"):
    sweep = offset_sweep(scenario(name, seed=1), 16)
    print(name, "  ".join(f"offset {o}: {b:.4f}" for o, b in sweep))
