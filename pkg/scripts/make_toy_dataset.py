"""Generate the bundled toy binary-classification dataset.

The label is a deterministic sign rule whose main term flips with a
categorical value, so single-feature marginals carry little signal and a
model has to combine features to do well:

    score = x0 * (-1 if c0 == "alpha" else +1) + 0.4*x1 - 0.2*x2
    label = "yes" iff score > 0, rows with |score| < 0.25 resampled

x3 and c1 are pure distractors. Rerunning reproduces identical files.
"""

import csv
from pathlib import Path

import numpy as np

N_ROWS = 2000
SPLITS = (1200, 400, 400)
MARGIN = 0.25
SEED = 7

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "data" / "toy_binclass"

C0_VALUES = np.array(["alpha", "beta", "gamma"], dtype=object)
C0_PROBS = (0.5, 0.25, 0.25)
C1_VALUES = np.array(["red", "green", "blue", "gray"], dtype=object)


def sample_rows(rng, n):
    x = rng.standard_normal((n, 4))
    c0 = rng.choice(C0_VALUES, size=n, p=C0_PROBS)
    c1 = rng.choice(C1_VALUES, size=n)
    sign = np.where(c0 == "alpha", -1.0, 1.0)
    score = x[:, 0] * sign + 0.4 * x[:, 1] - 0.2 * x[:, 2]
    return x, c0, c1, score


def main():
    rng = np.random.default_rng(SEED)
    xs, c0s, c1s, scores = [], [], [], []
    need = N_ROWS
    while need > 0:
        x, c0, c1, score = sample_rows(rng, 4 * need)
        keep = np.abs(score) >= MARGIN
        xs.append(x[keep][:need])
        c0s.append(c0[keep][:need])
        c1s.append(c1[keep][:need])
        scores.append(score[keep][:need])
        need = N_ROWS - sum(len(a) for a in xs)
    x = np.concatenate(xs)[:N_ROWS]
    c0 = np.concatenate(c0s)[:N_ROWS]
    c1 = np.concatenate(c1s)[:N_ROWS]
    score = np.concatenate(scores)[:N_ROWS]
    label = np.where(score > 0, "yes", "no")

    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "data.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x0", "x1", "x2", "x3", "c0", "c1", "label"])
        for i in range(N_ROWS):
            writer.writerow(
                [f"{v:.6f}" for v in x[i]] + [c0[i], c1[i], label[i]]
            )

    with open(OUT / "schema.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "kind", "role"])
        for name in ("x0", "x1", "x2", "x3"):
            writer.writerow([name, "numeric", "feature"])
        writer.writerow(["c0", "categorical", "feature"])
        writer.writerow(["c1", "categorical", "feature"])
        writer.writerow(["label", "categorical", "target"])

    order = rng.permutation(N_ROWS)
    bounds = np.cumsum((0,) + SPLITS)
    for name, a, b in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        idx = np.sort(order[a:b])
        (OUT / f"{name}_idx.txt").write_text(
            "".join(f"{i}\n" for i in idx)
        )
    print(f"wrote {N_ROWS} rows to {OUT}")


if __name__ == "__main__":
    main()
