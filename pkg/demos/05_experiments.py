"""Run the white-box suite and the cross-architecture transfer matrix on a
desk-scale plan, writing CSV/JSON reports."""

import tempfile
from pathlib import Path

from alphafool import experiments as xp

plan = xp.default_synth_plan(seed=3)
plan = xp.ExperimentPlan(**{**plan.to_dict(), "stocks": plan.stocks,
                            "n_test_weeks": 3})

with tempfile.TemporaryDirectory() as tmp:
    table = xp.run_whitebox(plan, out_dir=tmp)
    written = xp.emit_report(table, tmp, stem="whitebox")
    print("white-box suite:")
    print(table.summary())
    print("reports:", ", ".join(p.name for p in written))

    print(f"\n{'model':6s} {'set':4s} {'clean':>6s} {'tuap':>6s} {'random':>7s}")
    for arch in plan.archs:
        for i in range(plan.n_test_weeks):
            t = f"T{i + 1}"
            clean = table.cell(model=arch, test_set=t, condition="clean").tfr
            tuap = table.cell(model=arch, test_set=t, condition="tuap").tfr
            rand = table.cell(model=arch, test_set=t, condition="random").tfr
            print(f"{arch:6s} {t:4s} {clean:6.1f} {tuap:6.1f} {rand:7.1f}")

print("\ntransfer matrix (sources craft at the larger shared-channel budget):")
transfer = xp.run_transfer(plan)
print(f"{'source':8s}" + "".join(f"{a:>8s}" for a in plan.archs) + f"{'size%':>8s}")
for source in plan.archs:
    cells = []
    size = None
    for target in plan.archs:
        row = transfer.cell(model=f"{source}->{target}")
        cells.append(f"{row.tfr:8.1f}")
        size = row.size_pct
    print(f"{source:8s}" + "".join(cells) + f"{size:8.3f}")
