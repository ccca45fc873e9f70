"""Train a single early-fusion network and look at its learning curve.

The input is the informative channel stacked with a pure-noise channel on
the 600-sample desk grid.  Takes well under a minute.
"""
from cyclefusion.experiments import SYNTHETIC_DEFAULT
from cyclefusion.ingest import generate_synthetic
from cyclefusion.nets import (HyperParams, Network, TrainConfig, build_tcocnn, evaluate,
                              make_inputs, train)
from cyclefusion.preprocess import split_random

ds = generate_synthetic(SYNTHETIC_DEFAULT)
split = split_random(ds.n_cycles, seed=0)
inputs = make_inputs(ds, [["PS1", "PS2"]], 600, split.train)

hp = HyperParams(initial_lr=1e-4, n_filters_12=40, kernel_12=20, stride_1=13,
                 dropout_rate=0.4, fc_neurons=1500)
net = Network(build_tcocnn(hp, (2, 600)), seed=0)
print(f"{net.n_parameters()} parameters; conv output lengths "
      f"{[s.out_length for s in net.config.convs[0]]}")

report = train(net, inputs, ds.targets, split, TrainConfig(epochs=20, seed=0), hp.initial_lr)
print(report.curves_csv())
print(f"best epoch {report.best_epoch}, validation error {report.best_val_error:.3f}")
# Only now, with the model fixed, is the test split read.
print(f"test error {evaluate(net, inputs, ds.targets, split.test):.3f}")
