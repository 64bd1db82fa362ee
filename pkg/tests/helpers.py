"""Shared numeric test utilities: finite differences, random instances."""

import csv

import numpy as np

from dualtab import nd
from dualtab.embedding import FeatureSpace, ModelInputs
from dualtab.model import DualTabModel, ModelConfig


def finite_diff_grad(loss_fn, param, eps=1e-5):
    """Central-difference gradient of a pure scalar function wrt one tensor.

    Perturbs param.data in place and restores it; loss_fn must re-run the
    forward pass from scratch on every call.
    """
    flat = param.data.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = loss_fn()
        flat[i] = orig - eps
        fm = loss_fn()
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
    return g.reshape(param.data.shape)


def max_rel_err(analytic, numeric, floor=1e-8):
    """max_i |a_i - n_i| / max(|n_i|, floor)

    The floor turns the comparison absolute for near-zero gradients, where
    central differences are dominated by roundoff in the loss evaluation.
    """
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(n), floor)))


def random_feature_space(rng, task, max_numeric=4, max_categorical=3):
    """A small random FeatureSpace with at least one feature."""
    fn = int(rng.integers(0, max_numeric + 1))
    fc = int(rng.integers(0 if fn else 1, max_categorical + 1))
    k = {"regression": 0, "binclass": 2}.get(task, int(rng.integers(3, 5)))
    return FeatureSpace(
        task=task,
        n_numeric=fn,
        cat_cardinalities=tuple(int(rng.integers(2, 5)) for _ in range(fc)),
        bin_counts=tuple(int(rng.integers(1, 5)) for _ in range(fn)),
        n_classes=k,
    )


def random_inputs(rng, space, n):
    """Random encoded arrays consistent with a FeatureSpace."""
    fn, fc = space.n_numeric, space.n_categorical
    tgt_cat = None
    if fc:
        if space.task == "multiclass":
            raw = rng.random((n, fc, space.n_classes))
            tgt_cat = raw / raw.sum(axis=-1, keepdims=True)
        else:
            tgt_cat = rng.random((n, fc))
    return ModelInputs(
        num_raw=rng.standard_normal((n, fn)) if fn else None,
        cat_raw=(
            np.stack(
                [rng.integers(0, c + 1, size=n) for c in space.cat_cardinalities],
                axis=1,
            )
            if fc
            else None
        ),
        tgt_bins=(
            np.stack([rng.integers(0, b, size=n) for b in space.bin_counts], axis=1)
            if fn
            else None
        ),
        tgt_cat=tgt_cat,
    )


def write_csv_dataset(dirpath, task, n=40, seed=0):
    """Write a small on-disk dataset (data/schema/split files).

    Returns a dict with the file paths, the exact parsed column values
    (floats round-trip through the written text) and the split indices.
    Two quirks are planted for pipeline tests: the first test row holds an
    out-of-range numeric value and the second an unseen category.
    """
    rng = np.random.default_rng(seed)
    x = [float(f"{v:.6f}") for v in rng.standard_normal(n)]
    z = [float(f"{v:.6f}") for v in rng.standard_normal(n)]
    c = [str(v) for v in rng.choice(["a", "b", "c"], size=n)]
    n_train = int(0.6 * n)
    n_val = int(0.2 * n)
    train = list(range(n_train))
    val = list(range(n_train, n_train + n_val))
    test = list(range(n_train + n_val, n))
    x[test[0]] = 99.0
    c[test[1]] = "zzz"

    shift = np.array([{"a": 1.0, "b": 0.0, "c": -1.0, "zzz": 0.0}[v] for v in c])
    score = 2.0 * np.array(x) - np.array(z) + shift
    if task == "regression":
        y = [f"{v:.6f}" for v in score]
    elif task == "binclass":
        y = ["p" if v > 0 else "q" for v in score]
    else:
        y = ["u" if v < -1 else ("v" if v < 1 else "w") for v in score]

    d = {}
    d["data"] = str(dirpath / "data.csv")
    with open(d["data"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "z", "c", "y"])
        for i in range(n):
            w.writerow([f"{x[i]:.6f}", f"{z[i]:.6f}", c[i], y[i]])
    d["schema"] = str(dirpath / "schema.csv")
    kind = "numeric" if task == "regression" else "categorical"
    with open(d["schema"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "kind", "role"])
        w.writerow(["x", "numeric", "feature"])
        w.writerow(["z", "numeric", "feature"])
        w.writerow(["c", "categorical", "feature"])
        w.writerow(["y", kind, "target"])
    for name, idx in (("train", train), ("val", val), ("test", test)):
        d[name] = str(dirpath / f"{name}_idx.txt")
        with open(d[name], "w") as fh:
            fh.write("".join(f"{i}\n" for i in idx))
    d.update(
        x=np.array(x), z=np.array(z), c=np.array(c, dtype=object), y_text=y,
        train_idx=np.array(train), val_idx=np.array(val), test_idx=np.array(test),
    )
    return d


def build_instance(seed, variant, streams, assa, task, n=6, d=8, n_layers=2,
                   n_heads=2, max_numeric=4, max_categorical=3):
    """A small dropout-free model plus matching inputs, targets and loss fn.

    Returns (model, loss_fn) where loss_fn() re-runs the eval-mode forward
    pass and the task loss from scratch, suitable for finite differences.
    """
    rng = np.random.default_rng(seed)
    space = random_feature_space(rng, task, max_numeric, max_categorical)
    config = ModelConfig(
        d_embedding=d,
        n_layers=n_layers,
        n_heads=n_heads,
        ffn_factor=1.5,
        dropout_attention=0.0,
        dropout_residual=0.0,
        dropout_ffn=0.0,
        variant=variant,
        streams=streams,
        assa=assa,
    )
    model = DualTabModel(config, space, rng)
    inputs = random_inputs(rng, space, n)
    if task == "regression":
        targets = rng.standard_normal((n, 1))

        def loss_fn():
            return nd.mse_loss(model.forward(inputs), targets)

    else:
        labels = rng.integers(0, model.out_dim, size=n)

        def loss_fn():
            return nd.softmax_cross_entropy(model.forward(inputs), labels)

    return model, loss_fn
