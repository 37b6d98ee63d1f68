"""What reconstruction quality buys at the link level.

MRT beamforming along perfect, reconstructed and random channel directions,
QPSK with a receiver that knows the effective gain.
Run: python demos/04_link_level_ber.py   (about 2 minutes)
"""

# %%
from duffin.data import cosine_similarity, make_dataset, scenario
from duffin.linksim import LinkConfig, effective_gains, estimate_channels, noise_power, simulate_ber, theoretical_ber
from duffin.model import ModelConfig, build_model
from duffin.trainer import TrainConfig, train

ds = make_dataset(scenario("indoor", seed=1, ns=16, nt=16, nc=256), 32)
cfg = TrainConfig(epochs=30, batch_size=2, warmup=4, val_fraction=0.0, eval_every=30)
model = train(build_model(ModelConfig(ns=16, nt=16, feature_channels=16), seed=0), ds, cfg).model

truth = ds.channels()
estimate = estimate_channels(model, ds)
print(f"reconstruction cosine similarity {cosine_similarity(truth, estimate):.3f}")

# %%
link = LinkConfig(snrs_db=(-6, -3, 0, 3, 6), bits=100_000, seed=0)
rows = simulate_ber(truth, estimate, link)
gains = effective_gains(truth, None, "perfect")
for snr in link.snrs_db:
    ber = {r.source: r.ber for r in rows if r.snr_db == snr}
    expected, _ = theoretical_ber(gains, noise_power(truth, snr), link.bits)
    print(
        f"{snr:+5.1f} dB  perfect {ber['perfect']:.2e} (closed form {expected:.2e})  "
        f"reconstructed {ber['reconstructed']:.2e}  random {ber['random']:.2e}"
    )
