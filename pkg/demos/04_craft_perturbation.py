"""Craft a targeted universal perturbation sized at 0.02% of the close and
compare it against size-matched random noise on future weeks."""

import numpy as np

from alphafool import alpha_models as am
from alphafool import attack as atk
from alphafool import experiments as xp
from alphafool import market_data as md

params = xp.default_synth_params(symbol="DEMO")
series = md.synthesize_series(params, seed=42)
protocol = md.SplitProtocol.from_days(series.days.tolist(), n_train_days=15,
                                      n_craft_days=3, n_test_weeks=6,
                                      days_per_week=5, samples_per_class=100)
split = md.build_split(series, protocol)

model = am.build("dnn", seed=2)
model, report = am.train(model, split.train, am.TrainHyper(epochs=15, seed=2))
print(f"dnn trained: train DA {report.da:.1f}")

config = atk.AttackConfig(epsilon=1e-3, delta=90.0, seed=7)
tuap = atk.craft_calibrated(split.craft, target_class=1, model=model,
                            config=config, target_size_pct=0.02)
assert isinstance(tuap, atk.Tuap)
print(f"\ncrafted in {tuap.outer_iterations_used} outer iterations: "
      f"craft-set TFR {tuap.achieved_tfr_on_craft:.1f}% at delta=90")
print(f"mean |close change| = {tuap.size_pct:.4f}% of price "
      f"(L2 norm {tuap.norm:.2e})")

print(f"\n{'set':4s} {'clean TFR':>10s} {'TUAP TFR':>9s} {'TUAP UFR':>9s} "
      f"{'rand TFR':>9s} {'rand UFR':>9s}")
rand = atk.random_perturbation(tuap.norm, len(tuap.offsets), seed=11)
for i, test in enumerate(split.tests):
    clean = atk.tfr(model, test, None, 1)
    m = atk.evaluate_attack(model, test, tuap, 1)
    rt = atk.tfr(model, test, rand, 1)
    ru = atk.ufr(model, test, rand)
    print(f"T{i + 1:<3d} {clean:10.1f} {m.tfr:9.1f} {m.ufr:9.1f} "
          f"{rt:9.1f} {ru:9.1f}")

print("\nthe crafted vector pushes a large share of unseen samples to the "
      "target class at the same norm where random noise barely moves it")
