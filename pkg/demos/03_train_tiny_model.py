"""Demo 3: a miniature end-to-end training run.

Trains the two-stage scorer for a couple of minutes on a small
synthetic dataset with held-out contents, then walks through what the
model produces for one sample: level probabilities, the chosen BT.500
description, the confidence degree and the combined score.

For a real run (the configuration used by the acceptance suite), see
configs/synthetic-crossval.txt and the README.
"""

import time

import numpy as np

from pcq import (RunConfig, SynthConfig, eval_metrics, logistic4_fit,
                 prepare_samples, synth_dataset, train)
from pcq.harness import make_folds

CONFIG = RunConfig(
    backbone="slim", image_size=48, tau_density=0.3, train_views=3,
    cls_loss="ce", lr=3e-3, weight_decay=1e-3, grad_clip=1.0,
    epochs=60,  # enough to leave the cold-start plateau, not to converge
    seed=0)


def main():
    clouds, manifest = synth_dataset(SynthConfig(n_shapes=6, n_points=2048))
    print(f"dataset: {len(clouds)} clouds over "
          f"{len(manifest.content_ids())} contents")
    samples = prepare_samples(clouds, manifest, CONFIG)

    contents = sorted({s.content_id for s in samples})
    test_contents = set(make_folds(contents, 3, CONFIG.seed)[0])
    train_contents = [c for c in contents if c not in test_contents]
    print(f"held-out contents: {sorted(test_contents)}")

    t0 = time.time()
    result = train(samples, train_contents, CONFIG)
    print(f"trained {CONFIG.epochs} epochs in {time.time() - t0:.0f}s; "
          f"final losses: { {k: round(v, 3) for k, v in result.history[-1].items()} }")

    test = [s for s in samples if s.content_id in test_contents]
    scores = result.model.score_batch([s.proj for s in test])

    print("\none sample in detail:")
    sc, s = scores[0], test[0]
    print(f"  {sc.sample_id}  (true MOS {s.mos:.1f})")
    print(f"  level probabilities: {np.round(sc.probabilities, 3)}")
    print(f"  level {sc.level} -> '{sc.description}'")
    print(f"  confidence {sc.confidence:+.3f}  ->  score {sc.score:.3f}")

    pred = np.array([x.score for x in scores])
    mos = np.array([s.mos for s in test])
    mapped = logistic4_fit(pred, mos).mapped
    m = eval_metrics(mapped, mos)
    print(f"\nheld-out metrics after Logistic-4 (short run, "
          f"expect modest numbers):")
    print(f"  PLCC={m['plcc']:.3f} SROCC={m['srocc']:.3f} "
          f"KROCC={m['krocc']:.3f} RMSE={m['rmse']:.2f}")


if __name__ == "__main__":
    main()
