"""Two-stage training for quantized feedback.

Stage 1 trains without quantization; stage 2 calibrates a uniform quantizer
on the codewords and keeps training through it with a straight-through
gradient. Run: python demos/03_quantized_feedback.py   (about 5 minutes)
"""

# %%
from duffin.data import make_dataset, scenario
from duffin.model import ModelConfig, build_model
from duffin.trainer import TrainConfig, evaluate, quantize_without_retraining, train, train_quantized

ds = make_dataset(scenario("indoor", seed=1, ns=16, nt=16, nc=256), 32)
stage1 = TrainConfig(epochs=40, batch_size=2, warmup=6, val_fraction=0.0, eval_every=40)
pre = train(build_model(ModelConfig(ns=16, nt=16, feature_channels=16), seed=0), ds, stage1).model
print(f"unquantized: {evaluate(pre, ds).nmse_db:.2f} dB")

# %%
stage2 = TrainConfig(epochs=15, batch_size=2, lr_max=5e-4, warmup=2, val_fraction=0.0, eval_every=15)
for bits in (2, 4, 6):
    naive = evaluate(quantize_without_retraining(pre, ds, bits), ds).nmse_db
    retrained = train_quantized(pre, ds, bits, stage2)
    cal = retrained.calibration
    print(
        f"B={bits}: {cal.feedback_bits(pre.config.codeword_length)} feedback bits, "
        f"quantize only {naive:.2f} dB, retrained {evaluate(retrained.model, ds).nmse_db:.2f} dB"
    )
