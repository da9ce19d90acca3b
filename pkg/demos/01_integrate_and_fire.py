"""Walk through continuous integrate-and-fire on a five-frame toy input.

Run:  python demos/01_integrate_and_fire.py
"""

import numpy as np

from seaco.cif import fire_counts, integrate_and_fire, quantity_loss, scale_weights
from seaco.numerics import Tensor, no_grad

np.set_printoptions(precision=3, suppress=True)

# one-hot frames make the firing weights readable straight off the output rows
frames = Tensor(np.eye(5))
alpha = Tensor([0.4, 0.8, 0.3, 0.5, 0.2])

out = integrate_and_fire(frames, alpha)
print("weights      ", alpha.data)
print("fired tokens ", out.fired_count)
print(out.E.data)
# row 0 is 0.4*f1 + 0.6*f2; the leftover 0.2 of f2 opens row 1 with f3 and f4.
# The final 0.2 never reaches the threshold and is dropped.

# during training the weights are rescaled so the count matches the transcript length
target = 3
scaled = scale_weights(alpha, target)
print("\nscaled to", target, "tokens:", scaled.data, "sum", scaled.data.sum().round(6))
print("fires", fire_counts(scaled.data), "tokens")
print("quantity loss before scaling:", float(quantity_loss(alpha, target).data))

# at inference a trailing residual of at least 0.5 may emit one more token
with no_grad():
    tail = integrate_and_fire(frames, Tensor([0.4, 0.8, 0.3, 0.5, 0.6]), tail_threshold=0.5)
print("\nwith tail firing:", tail.fired_count, "tokens; last row", tail.E.data[-1])
