"""
Train a quality model on the toy renderer and score held-out images
===================================================================

Renders a small synthetic dataset, fits the full pipeline (augment,
block DCT, Saab, feature selection, boosted trees), saves the model
file, then scores the held-out split against its labels.
"""

import tempfile
from pathlib import Path

from biqa import dataset, evaluation, pipeline, toy

work = Path(tempfile.mkdtemp(prefix="biqa_demo_"))

# 6 reference scenes x (1 pristine + 4 distortions x 3 levels) = 78 images
spec = toy.ToyDatasetSpec(n_references=6, levels=3, image_side=192, seed=0)
manifest = toy.gen_toy(spec, work)
print(f"rendered {len(manifest)} images under {work}")

# splits are assigned per reference scene so no scene leaks across them
assigned = dataset.split_manifest(manifest, seed=0, fractions=(0.72, 0.08, 0.20))
model = pipeline.train(assigned, seed=0, root=work)
print(f"trained: {model.gbdt.n_trees_used} trees, "
      f"{len(model.selected)} selected feature columns")

model_path = work / "toy_model.bin"
pipeline.save_model(model, model_path)
print(f"saved {model_path} ({model_path.stat().st_size} bytes)")

# an image's score is the mean prediction over its augmented subimages
test_rows = assigned.subset(dataset.Split.TEST)
preds, subj = evaluation.evaluate_model(model, assigned, work, test_rows)
for entry, pred in zip(test_rows[:8], preds[:8]):
    print(f"  {entry.image_path:<40} mos {entry.mos:.1f}  predicted {pred:.2f}")

print(f"held-out PLCC  {evaluation.plcc(preds, subj):.4f}")
print(f"held-out SROCC {evaluation.srocc(preds, subj):.4f}")
