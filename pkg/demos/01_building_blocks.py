"""Building blocks: layers, network graphs and gradient checks.

Run from the repository root:

    python3 demos/01_building_blocks.py
"""

import numpy as np

from segmicro import layers, metrics
from segmicro.gradcheck import check_graph
from segmicro.netgraph import FCN, ModelConfig, build_graph, param_count, predict

rng = np.random.default_rng(0)

# A 3x3 "same" convolution keeps the spatial size; a stride-2 transposed
# convolution doubles it.
x = rng.standard_normal((1, 6, 6, 2))
k = rng.standard_normal((3, 3, 2, 4))
y = layers.conv2d(x, k, np.zeros(4))
up = layers.transposed_conv2d(y, rng.standard_normal((2, 2, 3, 4)), np.zeros(3))
pooled, _ = layers.maxpool2(y)
print("conv", x.shape, "->", y.shape, "| pool ->", pooled.shape, "| deconv ->", up.shape)

# Parameter counts depend only on the architecture.
for cfg in [
    ModelConfig(filters=(16, 32, 64, 128, 256)),
    ModelConfig(filters=(16, 32, 64, 128, 256), conv_kernel=5),
    ModelConfig(arch=FCN, filters=(16, 32, 64, 32, 16), conv_kernel=5),
]:
    print(f"{cfg.arch:>4} filters={cfg.filters} k{cfg.conv_kernel}/d{cfg.deconv_kernel}/out{cfg.out_kernel}:",
          param_count(build_graph(cfg)))

# Forward pass through a small U-Net. Input sides must be multiples of 16.
net = build_graph(ModelConfig(filters=(2, 4, 8, 16, 32)), seed=1)
image = rng.random((1, 32, 32, 1))
probs = net.forward(image)
print("softmax output", probs.shape, "rows sum to", float(probs.sum(-1).mean()))
print("label map classes:", np.unique(predict(net, image[0])))

# One backward pass, then compare against central finite differences.
labels = rng.integers(0, 3, (1, 16, 16))
batch = rng.random((1, 16, 16, 1))
loss, dlogits = metrics.cross_entropy(net.forward(batch), metrics.one_hot(labels, 3))
grads = net.backward(dlogits)
print("loss", round(loss, 4), "| gradient tensors:", len(grads))

report = check_graph(net, batch, labels, per_tensor=4)
worst = max((v, k) for k, v in report.items() if not k.startswith("_"))
print(f"worst layer {worst[1]}: relative error {worst[0]:.2e} ({report['_skipped']} kink crossings skipped)")
