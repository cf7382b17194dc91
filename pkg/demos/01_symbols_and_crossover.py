"""How a damped-wave mode relaxes, and when it looks like heat.

Each Fourier mode of eps^2 u'' + u' + <n>^2 u = 0 has two roots.  Below the
crossover <n> = 1/(2 eps) both are real and the slow one tracks the heat
decay exp(-t <n>^2); above it the mode rings at frequency ~ <n>/eps while
the envelope decays like exp(-t / (2 eps^2)).

Run:  python3 demos/01_symbols_and_crossover.py
"""

import numpy as np

from skspec.experiments import heat_limit_errors
from skspec.propagators import combined_symbol, heat_symbol, multiplier_certificates

eps = 0.1
print(f"eps = {eps}, crossover at <n> = {1 / (2 * eps):g}\n")
print(" <n>     t    combined        heat")
for nb in (1.0, 3.0, 5.0, 8.0):
    for t in (0.05, 0.2):
        b2 = nb * nb
        print(f"{nb:4.0f}  {t:4.2f}  {combined_symbol(eps, b2, t):+.6f}  {heat_symbol(b2, t):+.6f}")

# second order in eps at a generic point...
err, ratios = heat_limit_errors((1, 0), 1.0)
print("\nn=(1,0), t=1:   halving ratios", np.round(ratios, 2))
# ...and fourth order where the eps^2 coefficient b2 (1 - b2 t) e^{-b2 t} vanishes
err, ratios = heat_limit_errors((1, 0), 0.5)
print("n=(1,0), t=0.5: halving ratios", np.round(ratios, 2))

cert = multiplier_certificates()
print("\nempirical multiplier constants over the default grid:")
for k, v in sorted(cert.items()):
    print(f"  {k:10s} {v:.4f}")
