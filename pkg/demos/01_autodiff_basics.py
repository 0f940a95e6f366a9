"""A tour of the tensor core: building a computation, running a reverse
sweep, and verifying the analytic gradients against finite differences.

Run:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from lagfusion.gradcheck import finite_difference, relative_error
from lagfusion.nn import AdamW, Mlp
from lagfusion.tensor import Tape, Tensor, bce_with_logits, gelu, sigmoid

rng = np.random.default_rng(0)

# -- 1. tensors and the tape -----------------------------------------------------
# A Tensor wraps a float64 ndarray. Ops executed inside a Tape record the
# graph; outside a tape they are plain (and cheap) forward computations.

w = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
x = Tensor(rng.normal(size=(8, 3)))
y = (rng.random((8, 1)) > 0.5).astype(float)

with Tape() as tape:
    logits = x @ w
    loss = bce_with_logits(logits, y)
    tape.backward(loss)

print("loss:", loss.item())
print("dloss/dw:", w.grad.ravel())

# -- 2. checking a gradient entry by central differences ----------------------------


def loss_value() -> float:
    return float(bce_with_logits(x @ w, y).data)


for i in range(3):
    numeric = finite_difference(loss_value, w.data, i)
    print(f"w[{i}]: analytic={w.grad[i, 0]:+.8f} numeric={numeric:+.8f} "
          f"rel_err={relative_error(w.grad[i, 0], numeric):.2e}")

# -- 3. a small training loop with AdamW --------------------------------------------
# Fit a two-layer GELU MLP to separate two Gaussian blobs.

n = 256
features = np.concatenate([rng.normal(-1.0, 1.0, size=(n // 2, 4)),
                           rng.normal(+1.0, 1.0, size=(n // 2, 4))])
labels = np.concatenate([np.zeros((n // 2, 1)), np.ones((n // 2, 1))])

mlp = Mlp(4, 16, 1, rng)
opt = AdamW(mlp.params("mlp"), lr=1e-2, weight_decay=1e-3)

for step in range(60):
    with Tape() as tape:
        out = mlp(Tensor(features))
        loss = bce_with_logits(out, labels)
        tape.backward(loss)
    opt.step()
    opt.zero_grad()
    if step % 15 == 0:
        probs = sigmoid(mlp(Tensor(features))).data
        acc = ((probs > 0.5) == labels).mean()
        print(f"step {step:3d}  loss {loss.item():.4f}  accuracy {acc:.3f}")

print("final gelu(0) sanity:", gelu(Tensor([0.0])).data[0])
