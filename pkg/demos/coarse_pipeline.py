"""The whole staged workflow on a 4x-coarsened mesh (about 15 s).

Runs calibrate, eigen, speeds, pulses and export-fig3 into a scratch
directory and prints a few rows of the merged speed table.  The same run is
available from the shell as

    evanescent eigen --mesh-scale 4 --out run4   (and so on per stage)
"""
import sys
import tempfile
from pathlib import Path

from evanescent.fieldio import read_csv
from evanescent.pipeline import STAGES, PipelineConfig

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="evanescent-"))
cfg = PipelineConfig.from_dict({"output_dir": str(out), "mesh_scale": 4.0})
for name, stage in STAGES.items():
    print(f"== {name}")
    stage(cfg)

rows = read_csv(out / "fig3.csv")
print(f"\n{'source':>10} {'E_x':>8} {'v_DB':>7} {'v_s':>7} {'v_fit':>7}")
for r in rows[::12]:
    v_s = f"{float(r['v_s']):7.3f}" if r["v_s"] else " " * 7
    print(f"{r['source_type']:>10} {float(r['E_x_meV']):8.4f} {float(r['v_DB']):7.3f} "
          f"{v_s} {float(r['v_fit']):7.3f}")
print(f"\noutputs in {out}")
