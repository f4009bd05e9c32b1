"""Demo 4: the kernel ridge reference model on fixed features.

The neural pipeline learns its features; this reference model works on
hand-crafted projection statistics instead and solves both stages in
closed form: per-level anchor weights plus a PSD bilinear relevance
matrix (alternating ridge solves) for the level, and kernel ridge
regression for the confidence. It is fast, deterministic, and a useful
sanity baseline for any learned variant.
"""

import numpy as np

from pcq import RunConfig, SynthConfig, eval_metrics, logistic4_fit, \
    prepare_samples, synth_dataset
from pcq.features import projection_stats
from pcq.harness import make_folds
from pcq.kernel_oracle import fit, predict

CONFIG = RunConfig(image_size=64, tau_density=1.0)


def main():
    clouds, manifest = synth_dataset(SynthConfig())
    samples = prepare_samples(clouds, manifest, CONFIG)
    contents = sorted({s.content_id for s in samples})
    test_contents = set(make_folds(contents, 5, seed=0)[0])
    print(f"{len(samples)} samples; held-out contents {sorted(test_contents)}")

    feats = {s.sample_id: projection_stats(s.proj) for s in samples}
    by_level = {j: [] for j in range(1, 6)}
    conf_by_level = {j: [] for j in range(1, 6)}
    for s in samples:
        if s.content_id not in test_contents:
            by_level[s.label.level].append(feats[s.sample_id])
            conf_by_level[s.label.level].append(s.label.confidence)

    model = fit({j: np.stack(v) for j, v in by_level.items()},
                {j: np.array(v) for j, v in conf_by_level.items()},
                lambda1=0.1, lambda2=0.1)
    print("fitted; per-level training sizes:",
          {j: len(v) for j, v in by_level.items()})
    print("Stage-1 objective after the last alternation step:",
          {j: round(model.objective_trace[j][-1][1], 3) for j in range(1, 6)})

    test = [s for s in samples if s.content_id in test_contents]
    pred = np.array([predict(model, feats[s.sample_id])[2] for s in test])
    mos = np.array([s.mos for s in test])
    m = eval_metrics(logistic4_fit(pred, mos).mapped, mos)
    print(f"held-out: PLCC={m['plcc']:.3f} SROCC={m['srocc']:.3f} "
          f"KROCC={m['krocc']:.3f} RMSE={m['rmse']:.2f}")


if __name__ == "__main__":
    main()
