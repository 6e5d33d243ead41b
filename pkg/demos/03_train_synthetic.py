"""Train a small U-Net on synthetic blobs and inspect the result.

Takes about a minute on one core:

    python3 demos/03_train_synthetic.py
"""

import numpy as np

from segmicro import dataio, optim, trainer
from segmicro.netgraph import ModelConfig, build_graph, param_count, predict
from segmicro.synthetic import blob_dataset

full = blob_dataset(16, seed=0, size=32)
test = blob_dataset(4, seed=1, size=32)
train_set, val_set = dataio.split_train_val(full, 0.125, seed=0)
print(f"{len(train_set)} train / {len(val_set)} val / {len(test)} test images")

net = build_graph(ModelConfig(filters=(4, 8, 16, 32, 64)), seed=0)
print("parameters:", param_count(net))

opt = optim.make_optimizer(optim.ADAM)
config = trainer.TrainConfig(batch_size=1, max_epochs=40, early_stop={"patience": 6},
                             reduce_lr={"patience": 3})
history, best = trainer.train(net, opt, train_set, val_set, config)

for r in history.records[::5]:
    print(f"epoch {r.epoch:3d}  loss {r.train_loss:.4f}  val_loss {r.val_loss:.4f}  "
          f"val_acc {r.val_acc:.3f}  lr {r.lr:.1e}")
print(f"stopped: {history.stop_reason} after {len(history.records)} epochs, best epoch {history.best_epoch}")

report = trainer.evaluate(net, test)
print("test accuracy %.3f, Dice cells %.3f, nuclei %.3f"
      % (report.accuracy, report.per_class_dice[1], report.per_class_dice[2]))

# crude text rendering of one prediction next to its ground truth
pred = predict(net, test[0].image)
chars = np.array([".", "o", "#"])
for a, b in zip(chars[pred[::2, ::2]], chars[test[0].mask[::2, ::2]]):
    print("".join(a), "  ", "".join(b))
