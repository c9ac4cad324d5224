# Copyright 2026 The cfm-inverse Authors.
# SPDX-License-Identifier: Apache-2.0
"""Reference SEIR trajectory from an adaptive high-order integrator.

Writes t,S,E,I,R rows at grid-aligned times for the reference parameters.
"""
import sys

import numpy as np
from scipy.integrate import solve_ivp

M_REF = [0.4, 0.3, 0.3, 0.1, 0.15, 0.6]
TAU = 2.1


def rhs(t, y, m):
    w = 0.5 * (1.0 + np.tanh(7.0 * (t - TAU)))
    beta = m[0] + w * (m[4] - m[0])
    gamma_d = m[3] + w * (m[5] - m[3])
    gamma = m[2] + gamma_d
    s, e, i, _ = y
    inf = beta * s * i
    return [-inf, inf - m[1] * e, m[1] * e - gamma * i, gamma * i]


def main(path):
    times = np.arange(0.0, 4.0 + 1e-12, 0.25)
    sol = solve_ivp(rhs, (0.0, 4.0), [99.0, 1.0, 0.0, 0.0], method="DOP853",
                    t_eval=times, rtol=1e-13, atol=1e-13, args=(M_REF,))
    with open(path, "w") as f:
        f.write("t,S,E,I,R\n")
        for k, t in enumerate(sol.t):
            f.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in sol.y[:, k]) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "seir_reference.csv")
