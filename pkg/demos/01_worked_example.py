#!/usr/bin/env python3
"""Walk one tiny journey through the model by hand.

Three records of one vital sign, the middle one missing.  Missing cells
are filled with 0 before the convolution, so the kernel sees the gap.
"""

import numpy as np

from journey_risk.conv1d import ConvParams, conv_forward, pad_journey
from journey_risk.gru import GruParams, gru_cell_forward
from journey_risk.prediction import softmax

# raw readings, 0 stands in for the missing middle record
X = np.array([[58.0, 0.0, 55.0]])
kernel = ConvParams([[2.0, 1.0, -1.0]], [0.0])

Xp = pad_journey(X)  # one zero column on each side
print("padded:", Xp)
Z, cache = conv_forward(Xp, kernel)
print("pre-activation:", cache.pre)  # middle window: 58*2 + 0*1 + 55*(-1) = 61
print("conv output:", Z)

# one GRU unit reading the convolved sequence (values scaled down first)
p = GruParams([[0.5, 0.02]], [[-0.3, 0.01]], [[0.8, 0.03]], [0.0], [0.0], [0.0])
H = np.zeros(1)
for t in range(Z.shape[1]):
    H, step = gru_cell_forward(Z[:, t] / 10, H, p)
    print(f"t={t}: R={step.R[0]:.4f} U={step.U[0]:.4f} candidate={step.C[0]:.4f} H={H[0]:.4f}")

# a 2-way softmax on the final state gives the risk estimate
W_y = np.array([[-1.0], [1.0]])
print("P(negative), P(positive):", softmax(W_y @ H))
