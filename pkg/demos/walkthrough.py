"""End-to-end walkthrough at desk scale.

1. Generate speckled phantoms: smooth benign lesions, spiculated malignant ones.
2. Train the multi-task network (classifier plus mask decoder).
3. Draw GRAD-CAM maps for a few test images.
4. Attack them twice: once to flip the label, once to move the map while
   keeping the label.

Everything lands in one output directory as PNG panels and a CSV of metrics.
The defaults finish in a few minutes on one CPU core; raise
``--n-per-class`` and ``--epochs`` (600 and 30) for benchmark-grade models.

    python3 demos/walkthrough.py --out demo-out
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from gradshift import data as D
from gradshift.attack import AttackConfig, run_attack, save_result
from gradshift.gradcam import compute_cam, save_overlay_png
from gradshift.imaging import save_png
from gradshift.model import ModelConfig, build_model, predict, save_checkpoint, train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="demo-out")
    p.add_argument("--n-per-class", type=int, default=150)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--images", type=int, default=6, help="test images to explain and attack")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # 1. phantoms, split by source image and augmented four times (train only)
    sources = D.generate_corpus(args.n_per_class, seed=args.seed)
    dataset = D.prepare_dataset(sources, seed=args.seed)
    print(f"train {len(dataset.train)}  val {len(dataset.val)}  test {len(dataset.test)} samples")
    for s in (sources[0], sources[-1]):
        name = D.LABEL_NAMES[s.label]
        save_png(np.concatenate([s.image, s.mask], axis=1), out / f"phantom_{name}.png")

    # 2. multi-task training; loss_weight_mask=0 would train the classifier alone
    model = build_model(ModelConfig(seed=args.seed))
    report = train(model, dataset, epochs=args.epochs, seed=args.seed)
    save_checkpoint(model, out / "checkpoint.json")
    print(f"test accuracy {report.test_accuracy:.3f}  sensitivity {report.test_sensitivity}  "
          f"specificity {report.test_specificity}")

    # 3. maps for the predicted class, over correctly classified test images
    test = dataset.test
    pred = predict(model, np.stack([s.image for s in test])).argmax(axis=1)
    chosen = [s for s, y in zip(test, pred) if y == s.label][: args.images]
    for s in chosen:
        cam = compute_cam(model, s.image)
        save_overlay_png(s.image, cam, out / f"{s.source_id.replace('/', '__')}_cam.png")

    # 4a. label flip: 25 sign steps of 0.004 inside an L-infinity ball of 0.1
    flip = AttackConfig(mode="misclassify")
    # 4b. map shift: push the map's rank order toward its reverse while
    #     guarding the logit margin, undoing any step that changes the label
    shift = AttackConfig(mode="explain_shift")
    for cfg in (flip, shift):
        folder = out / cfg.mode
        wins = 0
        for s in chosen:
            r = run_attack(model, s.image, cfg, label=s.label)
            save_result(r, folder, s.source_id)
            wins += r.succeeded
            m = r.metrics
            rho = "NA" if m.rank_correlation is None else f"{m.rank_correlation:+.2f}"
            print(f"{cfg.mode:13s} {s.source_id:26s} label {r.label_before}->{r.label_after}  "
                  f"rho {rho}  centroid moved {m.com_displacement:4.1f}px  max|delta| {m.linf_delta:.3f}")
        print(f"{cfg.mode}: {wins}/{len(chosen)} succeeded; panels in {folder}")


if __name__ == "__main__":
    main()
