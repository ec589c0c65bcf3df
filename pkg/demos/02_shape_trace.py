# Build the full network at the standard 64600-sample input and print the
# shape of every stage next to its expected value, for each fusion mode.
import time

from rawgat_st.cli import audit_rows
from rawgat_st.model import ModelConfig

for mode in ("mul", "add", "concat"):
    t0 = time.perf_counter()
    rows, n_params = audit_rows(ModelConfig(fusion=mode))
    print(f"\nfusion={mode}  ({time.perf_counter() - t0:.1f}s, {n_params} trainable parameters)")
    for stage, want, got, ok in rows:
        print(f"  {stage:<14} {str(got):<24} {'ok' if ok else 'MISMATCH, expected ' + str(want)}")

# the ablations change the wiring; expected shapes are recomputed for them
for ablation in ({"use_pooling": False}, {"use_spectral": False}):
    rows, n_params = audit_rows(ModelConfig(**ablation))
    bad = [r[0] for r in rows if not r[3]]
    print(f"\n{ablation}: {n_params} parameters, mismatches: {bad or 'none'}")
    print("  projection:", rows[8][2], " st_projection:", rows[12][2])
