"""Synthesise a small corpus, train on it, and query the trained model."""
# %%

import tempfile
from pathlib import Path

from srx.data_io import SynthDims, load_dataset, synth_dataset
from srx.matching import MatchConfig
from srx.train import RunConfig, evaluate_model, retrieve, train

work = Path(tempfile.mkdtemp(prefix="srx-demo-"))

# %%
# 16 clips, each paired with one caption graph. Features and word vectors
# share hidden factors, so a model can learn the correspondence.
manifest = synth_dataset(work / "data", seed=7, n_clips=16, dims=SynthDims(feature_dim=32, word_dim=16))
ds = load_dataset(manifest)
print("clips:", len(ds.clips), "captions:", len(ds.graphs))

# %%
# Before training: the model starts near chance.
cfg = RunConfig(seed=0, epochs=30, batch_size=16, d_model=16, heads=2)
untrained = train(RunConfig(**{**cfg.to_dict(), "epochs": 0}), ds)
before, _ = evaluate_model(untrained.model, ds)
print("before:", before)

# %%
result = train(cfg, ds, out_dir=work / "run")
print("loss by epoch:", " ".join(f"{x:.3f}" for x in result.history[::5]))

after, sim = evaluate_model(result.model, ds, MatchConfig(margin=cfg.margin))
print("after: ", after)

# %%
caption = sim.caption_ids[0]
for clip, score in retrieve(sim, caption, 3):
    print(f"{caption} -> {clip}  {score:.3f}")

print("checkpoint written to", result.checkpoint)
