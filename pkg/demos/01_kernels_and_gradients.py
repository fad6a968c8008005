"""Tour of the neural-network kernels.

Runs each layer forward on tiny tensors, then cross-checks every analytic
gradient against central finite differences - the same discipline the test
suite applies at scale.

    python demos/01_kernels_and_gradients.py
"""

import numpy as np

from placedesc import (
    LayerNormConfig,
    Param,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    deconv2d_forward,
    layernorm,
    mse_loss,
    prelu_forward,
)

rng = np.random.default_rng(0)

print("== valid convolution ==")
x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], np.float32)
w = Param.of(np.array([[[[1.0, 0.0], [0.0, 1.0]]]], np.float32))
b = Param.of(np.array([1.0], np.float32))
out = conv2d_forward(x, w, b, (1, 1))
print(f"input 2x2 * diagonal kernel + bias 1 -> {out.ravel()}  (1*1 + 4*1 + 1 = 6)")

big = rng.normal(size=(1, 512, 30, 40)).astype(np.float32)
wide = Param.of(rng.normal(size=(128, 512, 4, 4)).astype(np.float32) * 0.01)
print(
    "vgg16-geometry block: (1,512,30,40) -> "
    f"{conv2d_forward(big, wide, Param.of(np.zeros(128, np.float32)), (1, 1)).shape}"
)

print("\n== transposed convolution is the exact adjoint ==")
x = rng.normal(size=(1, 3, 5, 7)).astype(np.float32)
w = Param.of(rng.normal(size=(4, 3, 3, 3)).astype(np.float32))
zeros4, zeros3 = Param.of(np.zeros(4, np.float32)), Param.of(np.zeros(3, np.float32))
cx = conv2d_forward(x, w, zeros4, (2, 2))
y = rng.normal(size=cx.shape).astype(np.float32)
dy = deconv2d_forward(y, w, zeros3, (2, 2))
lhs = float((cx.astype(np.float64) * y).sum())
rhs = float((x.astype(np.float64) * dy).sum())
print(f"<Conv(x), y> = {lhs:.6f}   <x, Deconv(y)> = {rhs:.6f}   (equal)")

print("\n== gradient check: convolution weights ==")
x = rng.normal(size=(1, 2, 6, 6))
w_val = rng.normal(size=(3, 2, 3, 3))
proj = rng.normal(size=(1, 3, 2, 2))


def loss_of(weights):
    out = conv2d_forward(x, Param.of(weights), Param.of(np.zeros(3)), (2, 2))
    return float((out * proj).sum())


_, grad_w, _ = conv2d_backward(x, Param.of(w_val.copy()), (2, 2), proj)
step = 1e-3
fd = np.zeros_like(w_val)
it = np.nditer(w_val, flags=["multi_index"])
for _ in it:
    idx = it.multi_index
    hi, lo = w_val.copy(), w_val.copy()
    hi[idx] += step
    lo[idx] -= step
    fd[idx] = (loss_of(hi) - loss_of(lo)) / (2 * step)
print(f"max |analytic - finite difference| = {np.abs(grad_w - fd).max():.2e}")

print("\n== normalization layers ==")
sample = np.array([1.0, 3.0], np.float32).reshape(1, 1, 1, 2)
print(f"layernorm([1, 3])        = {layernorm(sample, LayerNormConfig()).ravel()}")
bn_out = batchnorm_forward(
    np.array([1.0, 3.0], np.float32).reshape(2, 1, 1, 1),
    Param.of(np.ones(1, np.float32)),
    Param.of(np.zeros(1, np.float32)),
    np.zeros(1, np.float32),
    np.ones(1, np.float32),
    training=True,
)
print(f"batchnorm channel {{1,3}} = {bn_out.ravel()}")
neg = np.full((1, 1, 1, 1), -2.0, np.float32)
print(f"prelu(-2, alpha=0.25)    = {prelu_forward(neg, Param.of(np.array([0.25], np.float32))).ravel()}")

print("\n== one Adam step, by hand ==")
theta = Param.of(np.zeros(1, np.float32), "theta")
theta.grad[...] = 1.0
adam_step([theta], lr=0.001)
print(f"theta=0, grad=1, lr=1e-3 -> theta = {float(theta.value[0]):.12f}")
print("(bias correction makes the first step exactly -lr / (1 + eps))")

print("\n== reconstruction loss ==")
pred = np.array([1.0, 1.0], np.float32).reshape(1, 1, 1, 2)
loss, grad = mse_loss(pred, np.zeros_like(pred))
print(f"mse([1,1], [0,0]) = {loss}  grad = {grad.ravel()}")
