"""Health-risk prediction from patient journeys with many missing values.

A depthwise 1-D convolution reads each feature's raw (zero-prefilled)
records three at a time, a GRU summarizes the convolved journey and a
softmax head turns the final state into a risk estimate.  Everything,
including backpropagation, is written directly in numpy.

Modules
-------
numerics       dense helpers, activations, seeded generator, gradient checker
journey_data   journeys, JSONL I/O, normalization, 70:15:15 split
conv1d         depthwise convolution forward/backward
gru            GRU cell, sequence forward, BPTT
prediction     model variants, weighted cross-entropy, checkpoints
training       Adam/SGD, batching, early stopping, repeated runs
evaluation     AUROC / AUPRC and test-set scoring
baselines      mean / KNN imputation and mask+interval inputs for a GRU
datagen        synthetic cohorts with planted signal and missingness
cli            ``journey-risk`` command
"""

__version__ = "0.1.0"
