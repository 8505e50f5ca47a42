"""
Repeated-split evaluation with median correlation reporting
===========================================================

Quality benchmarks are reported as the median PLCC/SROCC over several
random train/val/test splits. This runs three seeds on a small toy
dataset and prints the per-run and pooled per-distortion numbers.
Takes around half a minute on a laptop CPU.
"""

import tempfile
from pathlib import Path

from biqa import evaluation, toy

work = Path(tempfile.mkdtemp(prefix="biqa_demo_"))
spec = toy.ToyDatasetSpec(n_references=6, levels=3, image_side=192, seed=0)
manifest = toy.gen_toy(spec, work)
print(f"rendered {len(manifest)} images; MOS follows distortion level")

report = evaluation.run_protocol(manifest, seeds=range(3), root=work,
                                 per_distortion=True)
print(report.to_text())

# reports serialize to JSON for dashboards or regression tracking
out = work / "report.json"
out.write_text(report.to_json(), encoding="utf-8")
print(f"wrote {out}")
