"""Extract the 17 technical features from a window and verify the analytic
feature/close Jacobian against finite differences."""

import numpy as np

from alphafool import features as ft
from alphafool import market_data as md

params = md.SynthParams(n_days=2, minutes_per_day=390, symbol="DEMO")
series = md.synthesize_series(params, seed=3)
window = md.make_windows(series)[100]

fv = ft.extract_features(window)
print("pseudo-log returns:", np.round(fv.pseudo_log_returns, 6))
print("group stds:        ", np.round(fv.stds, 4))
print("group trends:      ", np.round(fv.trends, 5))
print(f"minute_of_hour={fv.minute_of_hour:.3f} hour_of_day={fv.hour_of_day:.3f}")

jac = ft.feature_input_jacobian(window)
print(f"\nJacobian shape {jac.shape}; time-feature rows are zero: "
      f"{np.all(jac[15:] == 0)}")

# spot-check one column against central finite differences
j = 27
h = 1e-6 * window.close[j]
up, dn = window.close.copy(), window.close.copy()
up[j] += h
dn[j] -= h
fd = (ft.features_from_closes(up[None], [window.minute_frac], [window.hour_frac])[0]
      - ft.features_from_closes(dn[None], [window.minute_frac], [window.hour_frac])[0]) / (2 * h)
rel = np.abs(jac[:, j] - fd) / np.maximum(np.abs(jac[:, j]), 1e-12)
print(f"worst relative |analytic - fd| on close #{j}: "
      f"{rel[np.abs(jac[:, j]) > 1e-9].max():.2e}")

# scale covariance: returns unchanged, stds/trends scale with price
scaled = ft.features_from_closes(3.0 * window.close[None],
                                 [window.minute_frac], [window.hour_frac])[0]
print(f"\nunder 3x price scaling: max return change "
      f"{np.abs(scaled[ft.RETURNS] - fv.pseudo_log_returns).max():.2e}, "
      f"std ratio {scaled[ft.STDS][0] / fv.stds[0]:.6f}")
