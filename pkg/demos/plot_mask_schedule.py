"""
The inpainting mask schedule
============================

Inpainting pretraining removes square clusters of pixels and asks the
network to fill them in.  Early on there are many small clusters; later
there are a few large ones, while the raw masked budget n * s**2 stays
close to 10,000 pixels.
"""

# %%
import matplotlib.pyplot as plt
import numpy as np

from inpaintseg import masking

schedule = masking.DEFAULT_SCHEDULE
print(schedule.to_text())

# %%
# Masks on a 512 x 512 tile at a few epochs.  Removed pixels are black.
epochs = (0, 10, 30, 50)
fig, axes = plt.subplots(1, len(epochs), figsize=(3 * len(epochs), 3.3))
for ax, epoch in zip(axes, epochs):
    count, size = masking.schedule_at(schedule, epoch)
    mask = masking.generate_mask(512, 512, masking.MaskSpec(count, size, seed=[0, epoch]))
    ax.imshow(mask, cmap="gray", vmin=0, vmax=1)
    ax.set_title(f"epoch {epoch}: {count} x {size}px\n"
                 f"{100 * masking.masked_fraction(mask):.1f}% masked")
    ax.set_axis_off()
fig.tight_layout()

# %%
# Raw budget against the measured fraction.  Squares may overlap, so the
# measured fraction sits below the budget, and more so when there are
# many clusters.
rows = []
for epoch in range(0, 120, 5):
    count, size = masking.schedule_at(schedule, epoch)
    seeds = [masking.derive_seed(0, epoch, i) for i in range(32)]
    measured = masking.mask_batch((512, 512), count, size, seeds)
    rows.append((epoch, count * size ** 2 / 512 ** 2, 1 - measured.mean()))
rows = np.array(rows)

fig, ax = plt.subplots(figsize=(6, 3))
ax.step(rows[:, 0], 100 * rows[:, 1], where="post", label="n * s^2 budget")
ax.plot(rows[:, 0], 100 * rows[:, 2], "o", label="measured (mean of 32 masks)")
ax.set_xlabel("epoch")
ax.set_ylabel("% of pixels masked")
ax.legend()
fig.tight_layout()

# %%
# The desk profile shortens training to 12 epochs and shrinks the
# clusters for 96 px scenes; the milestones move with the epochs.
from inpaintseg.trainer import desk_configs

print(desk_configs()["step1"].mask_schedule.to_text())

if __name__ == "__main__":
    plt.show()
