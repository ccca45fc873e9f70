"""Condition monitoring of cyclic multi-sensor data.

Two routes to the same 4-class accumulator diagnosis: a statistical-moment /
LDA baseline (:mod:`cyclefusion.fesc`) and convolutional networks with early
or late sensor fusion (:mod:`cyclefusion.nets`), trained by a small numpy
autodiff engine (:mod:`cyclefusion.autodiff`) and tuned by random search
(:mod:`cyclefusion.hpo`).
"""

__version__ = "0.1.0"
