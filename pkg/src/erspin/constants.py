"""Physical constants, CODATA 2018 (h and k_B exact in SI)."""

import math

MU_B = 9.2740100783e-24  # J/T
H = 6.62607015e-34  # J s
HBAR = H / (2 * math.pi)  # J s
K_B = 1.380649e-23  # J/K
MU_0 = 1.25663706212e-6  # T m/A

MU_B_OVER_H = MU_B / H  # Hz/T
MU_B_OVER_K = MU_B / K_B  # K/T
