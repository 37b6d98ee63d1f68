"""Train a small model, evaluate it, and peek at the encoder feature maps.

Uses a 16x16 toy geometry so it finishes in a couple of minutes on one core.
Run: python demos/02_train_toy_model.py
"""

# %%
import numpy as np

from duffin.data import make_dataset, scenario
from duffin.model import ModelConfig, build_model, param_count
from duffin.trainer import TrainConfig, evaluate, train

geometry = dict(ns=16, nt=16, nc=256)
ds = make_dataset(scenario("indoor", seed=1, **geometry), 32)
model = build_model(ModelConfig(ns=16, nt=16, feature_channels=16), seed=0)
enc, dec = param_count(model)
print(f"{len(ds)} samples, codeword length {model.config.codeword_length}, params {enc} + {dec}")

# %% evaluating before training falls back to batch statistics (and says so)
print("untrained:", evaluate(model, ds))

# %% warm-up then cosine decay; batch 2 keeps the step count up on 32 samples
cfg = TrainConfig(epochs=40, batch_size=2, warmup=6, val_fraction=0.0, eval_every=10)
result = train(model, ds, cfg, log=lambda m: print(f"epoch {m.epoch:3d} loss {m.train_loss:.2e}") if m.epoch % 10 == 0 else None)
print("trained:", evaluate(result.model, ds))

# %% the encoder exposes its intermediate maps: G (convolutional features),
# S (attention-reweighted input), J (fused map) and the attention vector d
feats = {}
result.model.encode(ds.images[:1], features=feats)
for key in ("G", "S", "J"):
    f = feats[key][0]
    print(key, f.shape, "per-channel std", np.round(f.std(axis=(0, 1)), 4))
print("attention weights d:", np.round(feats["d"].ravel(), 4))
