"""
Synthetic road scenes
=====================

The desk experiments run on procedurally generated aerial tiles: winding
roads over textured ground, fields, buildings and trees, in four colour
styles.  Styles A-C are used for training, D is held out to measure how
well a model transfers to an unseen "city".
"""

# %%
# Render two scenes per style and show them next to their road masks.
import matplotlib.pyplot as plt
import numpy as np

from inpaintseg.data import STYLES, render_scenes, scene_specs

styles = sorted(STYLES)
scenes = render_scenes(scene_specs(2 * len(styles), seed=7, styles=styles * 2, canvas=96))

fig, axes = plt.subplots(2, 2 * len(styles), figsize=(2 * 2 * len(styles), 4.4))
for i in range(len(scenes)):
    col = i % len(styles) * 2 + i // len(styles)
    axes[0, col].imshow(scenes.images[i])
    axes[0, col].set_title(f"style {styles[i % len(styles)]}")
    axes[1, col].imshow(scenes.labels[i], cmap="gray")
for ax in axes.flat:
    ax.set_axis_off()
fig.tight_layout()

# %%
# Roads are a minority class, which is why the IoU of the road class and
# not pixel accuracy is the number to watch.
road_fraction = scenes.labels.mean()
print(f"road pixels: {100 * road_fraction:.1f}% of all pixels")

# %%
# Harder scenes: trees overhanging the roads, road-coloured parking lots
# and per-scene colour jitter.  The generator keeps the defaults byte-for-
# byte identical, so these options only change scenes that ask for them.
hard = render_scenes(scene_specs(4, seed=7, canvas=96, roadside_trees=1.5,
                                 paved_lots=1.5, tone_jitter=12.0))
fig, axes = plt.subplots(1, 4, figsize=(8, 2.2))
for ax, img in zip(axes, hard.images):
    ax.imshow(img)
    ax.set_axis_off()
fig.tight_layout()

if __name__ == "__main__":
    plt.show()
