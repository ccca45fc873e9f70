"""Early vs late fusion with a reduced tuning budget.

Runs the single-sensor sweep, the pair studies and the single-lane vs
two-lane comparison, then writes the report files under ``demo_out/``.
The budget here (3 trials, 2 repeats, 15 epochs) is far below desk scale,
so expect noisier numbers than the acceptance run.
"""
from cyclefusion.experiments import (DESK, SYNTHETIC_DEFAULT, Session, emit_report,
                                     run_fusion_comparison)
from cyclefusion.ingest import generate_synthetic

ds = generate_synthetic(SYNTHETIC_DEFAULT)
session = Session(ds, DESK.with_overrides(trials=3, repeats=2, epochs=15), master_seed=7)
fusion = run_fusion_comparison(session)
pairs = fusion.extras["pairs"]
sweep = pairs.extras["sweep"]

for result in (sweep, pairs, fusion):
    print(f"[{result.preset}]")
    for row in result.rows:
        print(f"  {row.id:<24} median {row.median:.3f}  errors {[round(e, 3) for e in row.errors]}")
    emit_report(result, f"demo_out/{result.preset}")
print(f"best sensor {fusion.extras['best']}, worst partner {fusion.extras['worst']}")
