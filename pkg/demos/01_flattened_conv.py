"""A convolution written as one dot product per output pixel.

Each filter's (C, K, K) block is laid out as a single row indexed by
c*K*K + ky*K + kx. Every output pixel then becomes a dot product between
that row and the matching window of the input, gathered in the same order.
"""
import numpy as np

from cnnflow import ConvParams, ConvWeights, Tensor, conv2d_direct, conv2d_flat, gather_window

rng = np.random.default_rng(0)
x = Tensor(rng.uniform(-1, 1, (3, 6, 6)).astype(np.float32))
w = ConvWeights(rng.uniform(-0.5, 0.5, (4, 3, 3, 3)), rng.uniform(-0.5, 0.5, 4))
p = ConvParams(kernel=3, stride=1, pad=1)

print("4-D weights", w.w4d.shape, "-> flat rows", w.w_flat.shape)

# One output pixel by hand: row of filter 2 times the window at (y=1, x=4).
window = gather_window(x, 1, 4, p)
by_hand = np.float32(0)
for wi, xi in zip(w.w_flat[2], window):
    by_hand = np.float32(by_hand + wi * xi)
by_hand = np.float32(by_hand + w.bias[2])
print("hand dot product  ", by_hand)
print("conv2d_flat[2,1,4]", conv2d_flat(x, w, p)[2, 1, 4])

direct = conv2d_direct(x, w, p)
print("flat == direct, bit for bit:", conv2d_flat(x, w, p) == direct)

tree = conv2d_flat(x, w, p, accum="tree").data
err = np.abs(tree - direct.data).max() / np.abs(direct.data).max()
print(f"pairwise-tree accumulation, relative error {err:.1e}")
