"""The training recipe's learning-rate schedule and gradient clipping.

Linear warmup over the first 20% of steps up to the base rate, then a
linear decay down to 10% of it; gradients are jointly rescaled whenever
their global norm exceeds 2.0.
"""
import numpy as np

from memerobust.optim import ScheduleSpec, clip_global_norm, global_norm, lr_at

spec = ScheduleSpec(base_lr=1e-4, total_steps=100, warmup_frac=0.20, final_frac=0.10)

print("step   lr")
for step in (0, 5, 10, 19, 20, 40, 60, 80, 100):
    print(f"{step:4d}   {lr_at(spec, step):.3e}")

print("\nwarmup tops out at base lr:", lr_at(spec, 19) == 1e-4)
print("endpoint is final_frac * base:", abs(lr_at(spec, 100) - 1e-5) < 1e-15)

# crude ASCII profile of the whole schedule
width = 40
for step in range(0, 101, 5):
    bar = "#" * int(width * lr_at(spec, step) / spec.base_lr)
    print(f"{step:4d} |{bar}")

# Clipping: a 3-4-5 triangle scaled onto the norm-2 ball.
grads = {"layer.w": np.array([3.0, 4.0])}
clipped = clip_global_norm(grads, 2.0)
print("\n[3, 4] clipped at 2.0 ->", clipped["layer.w"], "norm:",
      global_norm(clipped))

small = {"layer.w": np.array([0.3, 0.4])}
print("[0.3, 0.4] is untouched ->", clip_global_norm(small, 2.0)["layer.w"])
