"""The tape-based autodiff engine: gradients, a finite-difference check, Adam."""
import numpy as np

from segfuse import autodiff as ad
from segfuse.autodiff import Tape, Tensor

x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
with Tape() as tape:
    y = ad.mean(ad.square(x))
tape.backward(y)
print("d mean(x^2)/dx =", x.grad)  # [2/3, 4/3, 2]

# hinge has a kink at 0; the checker skips coordinates that straddle it
f = lambda t: ad.sum(ad.square(ad.hinge(t - 0.5)))
print("grad_check error:", ad.grad_check(f, np.array([0.5, 1.0, -2.0, 3.0])))

# minimise (p - 3)^2 with Adam
p = Tensor(np.array(0.0), requires_grad=True)
state = None
for step in range(300):
    with Tape() as tape:
        loss = ad.square(p - 3.0)
    tape.backward(loss)
    state = ad.adam_step([p], [p.grad], state, lr=0.05)
    p.zero_grad()
print("adam result:", round(p.item(), 4))
