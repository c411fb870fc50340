"""
Inpainting, guided inpainting, segmentation
===========================================

A short end-to-end run of the three training steps on a handful of
synthetic scenes:

1. pretrain a ToyUNet with an RGB head to fill in masked squares;
2. continue inpainting, but only road pixels count towards the loss;
3. swap the head back to one road channel and fine-tune on labels.

The baseline runs step 3 alone from random weights.  Epochs are cut well
below the desk profile so the script finishes in a couple of minutes on a
laptop CPU; expect noisy numbers.
"""

# %%
from dataclasses import replace

import matplotlib.pyplot as plt
import numpy as np
import torch

from inpaintseg import masking
from inpaintseg.data import SampleSet, render_scenes, scene_specs
from inpaintseg.data.augment import denormalize, normalize
from inpaintseg.evaluation import predict_to_classes
from inpaintseg.trainer import desk_pipeline, run_pipeline, scale_epochs

train = SampleSet.from_scenes(render_scenes(scene_specs(64, seed=1, canvas=96)))
val = SampleSet.from_scenes(render_scenes(scene_specs(16, seed=2, canvas=96)))
labeled = SampleSet(train.images[:16], train.labels[:16])   # a small labelled subset

# %%
# The desk profile, shortened further for the demo.
pipe = desk_pipeline(seed=0)
for tag, epochs in (("step1", 4), ("step2", 2), ("step3", 8)):
    pipe.steps[tag] = scale_epochs(pipe.steps[tag], epochs)

full = run_pipeline(pipe, train, labeled, val)
baseline = run_pipeline(replace(pipe, scratch=True), None, labeled, val)
for name, res in (("full method", full), ("baseline", baseline)):
    print(f"{name:12s} road IoU per epoch:", [round(v, 1) for v in res.final.val_history])

# %%
# What step 1 learned: fill in the masked squares of a validation scene.
step1 = full.results["step1"]
mean, std = step1.norm
count, size = masking.schedule_at(pipe.steps["step1"].mask_schedule, 0)
mask = masking.generate_mask(96, 96, masking.MaskSpec(count, size, seed=3))
x = torch.from_numpy(normalize(val.images[:1], mean, std)).permute(0, 3, 1, 2)
with torch.no_grad():
    out = step1.model(x * torch.from_numpy(mask)[None, None].float())
filled = denormalize(out[0].permute(1, 2, 0).numpy(), mean, std)

fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.8))
for ax, img, title in zip(axes, (val.images[0], masking.apply_mask(val.images[0], mask),
                                 filled), ("scene", "masked input", "inpainted")):
    ax.imshow(np.clip(img, 0, 255).astype(np.uint8))
    ax.set_title(title)
    ax.set_axis_off()
fig.tight_layout()

# %%
# Road predictions of the two arms on the same scenes.
def predict(res, images):
    m, s = res.final.norm
    res.final.model.eval()
    with torch.no_grad():
        logits = res.final.model(torch.from_numpy(normalize(images, m, s)).permute(0, 3, 1, 2))
    return predict_to_classes(logits)

fig, axes = plt.subplots(3, 4, figsize=(8, 6))
for j in range(4):
    axes[0, j].imshow(val.images[j])
    axes[1, j].imshow(predict(full, val.images[j:j + 1])[0], cmap="gray")
    axes[2, j].imshow(predict(baseline, val.images[j:j + 1])[0], cmap="gray")
for ax, name in zip(axes[:, 0], ("scene", "full method", "baseline")):
    ax.set_ylabel(name)
for ax in axes.flat:
    ax.set_xticks([])
    ax.set_yticks([])
fig.tight_layout()

if __name__ == "__main__":
    plt.show()
