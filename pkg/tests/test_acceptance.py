"""End-to-end checks: analytic gradients, attention invariants, shape
laws, encoder oracles, rank-test exactness, command determinism, capacity
on the bundled dataset, and the paired sparse-attention sweep.

Each test here is self-contained and carries its own oracle; the fast ones
also assert their own wall-clock envelope. The sweep test at the bottom
trains 36 small models and dominates the suite's runtime by design.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import yaml

from dualtab import nd
from dualtab.attention import ASSAMixer, attention_core
from dualtab.cli import main as cli_main
from dualtab.encoders import DecisionTreeEncoder, TreeBinner, fit_tree
from dualtab.experiment import SyntheticSource, load_spec, load_training_data
from dualtab.model import DualTabModel, ModelConfig
from dualtab.significance import bonferroni, wilcoxon_one_sided
from dualtab.synthetic import assa_sweep, summarize_sweep
from dualtab.training import accuracy, fit, predict, spawn_rngs
from helpers import (
    build_instance,
    finite_diff_grad,
    max_rel_err,
    random_feature_space,
    random_inputs,
    write_csv_dataset,
)

REPO = Path(__file__).resolve().parents[1]

# (variant, streams, assa, task, d_embedding, n_layers): every variant
# appears, the sparse branch is exercised on and off where it exists, and
# feature counts are capped at 3 numeric + 3 categorical below
GRADCHECK_CASES = [
    ("cd+ce", "dual", True, "regression", 8, 1),
    ("cd+ce", "dual", False, "binclass", 8, 1),
    ("cd", "dual", True, "multiclass", 8, 2),
    ("cd", "dual", False, "regression", 8, 1),
    ("cd", "raw", True, "binclass", 8, 1),
    ("cd", "raw", False, "multiclass", 8, 1),
    ("cd", "targeted", True, "regression", 8, 1),
    ("ce", "dual", False, "binclass", 8, 2),
    ("ce", "dual", False, "regression", 8, 1),
    ("dfc", "dual", False, "multiclass", 8, 1),
    ("dfc", "dual", False, "regression", 16, 1),
    ("cd+ce", "dual", True, "binclass", 16, 2),
]


def probe_attention_matrix(q, k, n_heads, mix=None):
    """Recover the full attention matrix from the fused kernel itself.

    With one-hot values e_j in every head's slot j, the output column
    (head, j) is exactly column j of that head's attention matrix, so the
    kernel's own arithmetic is observed rather than a reimplementation.
    Requires n tokens <= head width.
    """
    b, n, d = q.shape
    dh = d // n_heads
    assert n <= dh
    v = np.zeros((b, n, d))
    for h in range(n_heads):
        for j in range(n):
            v[:, j, h * dh + j] = 1.0
    out = attention_core(
        nd.tensor(q), nd.tensor(k), nd.tensor(v), n_heads, 0.0, None, False,
        mix=mix,
    ).data
    return out.reshape(b, n, n_heads, dh)[..., :n].transpose(0, 2, 1, 3)


def exhaustive_root_split(x, y, task, msl):
    """Best midpoint threshold by brute force over every candidate.

    Scans ascending and keeps only strict improvements, so ties resolve to
    the lowest threshold; the fitted tree must follow the same rule.
    """
    if task == "regression":
        imp = lambda v: float(np.var(v))
    else:
        k = int(y.max()) + 1

        def imp(v):
            p = np.bincount(v, minlength=k) / len(v)
            return 1.0 - float((p * p).sum())

    n = len(x)
    vals = np.unique(x)
    best_gain, best_t = -np.inf, None
    for a, b in zip(vals[:-1], vals[1:]):
        t = 0.5 * (a + b)
        left, right = y[x < t], y[x >= t]
        if len(left) < msl or len(right) < msl:
            continue
        gain = imp(y) - len(left) / n * imp(left) - len(right) / n * imp(right)
        if gain > best_gain:
            best_gain, best_t = gain, t
    return best_gain, best_t


def enumerate_signed_rank_p(candidate, reference, direction):
    """One-sided signed-rank p by walking all 2^n sign assignments."""
    if direction == "lower-better":
        diffs = [float(r) - float(c) for c, r in zip(candidate, reference)]
    else:
        diffs = [float(c) - float(r) for c, r in zip(candidate, reference)]
    diffs = [d for d in diffs if d != 0.0]
    if not diffs:
        return 1.0
    mags = [abs(d) for d in diffs]
    order = sorted(range(len(mags)), key=mags.__getitem__)
    ranks = [0.0] * len(mags)
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and mags[order[j]] == mags[order[i]]:
            j += 1
        for k in range(i, j):
            ranks[order[k]] = (i + 1 + j) / 2.0
        i = j
    w_obs = sum(r for d, r in zip(diffs, ranks) if d > 0)
    hits = sum(
        1
        for bits in itertools.product((0, 1), repeat=len(ranks))
        if sum(r for b, r in zip(bits, ranks) if b) >= w_obs
    )
    return hits / 2 ** len(ranks)


def dir_bytes(root):
    """Relative path -> content bytes for every file under root."""
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(Path(root).rglob("*"))
        if p.is_file()
    }


def write_spec_file(path, spec_dict):
    Path(path).write_text(yaml.safe_dump(spec_dict, sort_keys=True))
    return str(path)


def tiny_csv_spec(files, **extra):
    d = {
        "dataset": {
            "kind": "csv",
            "path": files["data"],
            "schema": files["schema"],
            "splits": {
                "train": files["train"],
                "val": files["val"],
                "test": files["test"],
            },
        },
        "preprocessing": {"min_samples_leaf": 8},
        "model": {
            "d_embedding": 8,
            "n_layers": 1,
            "n_heads": 2,
            "ffn_factor": 1.5,
            "dropout_attention": 0.1,
            "dropout_residual": 0.0,
            "dropout_ffn": 0.1,
            "variant": "cd+ce",
            "streams": "dual",
            "assa": True,
        },
        "train": {
            "learning_rate": 1e-3,
            "batch_size": 16,
            "max_epochs": 2,
            "warmup_epochs": 1,
            "patience": 1,
        },
        "seeds": [0, 1, 2],
    }
    d.update(extra)
    return d


class TestAcceptance:
    def test_gradients_match_central_differences(self):
        t0 = time.perf_counter()
        assert len(GRADCHECK_CASES) >= 10
        for i, (variant, streams, assa, task, d, layers) in enumerate(
            GRADCHECK_CASES
        ):
            model, loss_fn = build_instance(
                seed=500 + i, variant=variant, streams=streams, assa=assa,
                task=task, n=4, d=d, n_layers=layers,
                max_numeric=3, max_categorical=3,
            )
            with nd.GradientTape() as tape:
                tape.backward(loss_fn())
            worst = 0.0
            for name, p in model.parameters():
                fd = finite_diff_grad(lambda: loss_fn().item(), p, eps=1e-5)
                got = p.grad if p.grad is not None else np.zeros_like(p.data)
                worst = max(worst, max_rel_err(got, fd, floor=1e-8))
            assert worst < 1e-4, f"case {i} ({variant}/{streams}): {worst}"
        assert time.perf_counter() - t0 < 120.0

    def test_attention_invariants_under_fuzz(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(11)
        mixer = ASSAMixer()
        zero, one = nd.tensor(np.zeros(1)), nd.tensor(np.ones(1))
        for _ in range(1000):
            n = int(rng.integers(2, 8))
            heads = int(rng.integers(1, 3))
            d = heads * int(rng.integers(n, 9))
            scale = rng.uniform(0.5, 4.0)
            q = rng.standard_normal((1, n, d)) * scale
            k = rng.standard_normal((1, n, d)) * scale
            dense = probe_attention_matrix(q, k, heads)
            assert np.max(np.abs(dense.sum(axis=-1) - 1.0)) < 1e-9
            assert np.all(dense >= 0.0)
            sparse = probe_attention_matrix(q, k, heads, mix=(zero, one))
            assert np.all(sparse >= 0.0)
            mixer.a1.data = rng.standard_normal(1) * 4
            mixer.a2.data = rng.standard_normal(1) * 4
            w1, w2 = mixer.weights()
            assert abs(w1.item() + w2.item() - 1.0) < 1e-12
        w1, w2 = ASSAMixer().weights()  # both mixer logits start at one
        assert (w1.item(), w2.item()) == (0.5, 0.5)
        assert time.perf_counter() - t0 < 30.0

    def test_stream_and_token_shape_laws(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(21)
        for _ in range(60):
            task = ("regression", "binclass", "multiclass")[int(rng.integers(3))]
            space = random_feature_space(rng, task)
            f = space.n_numeric + space.n_categorical
            d = 2 * int(rng.integers(2, 9))
            model = DualTabModel(
                ModelConfig(
                    d_embedding=d, n_layers=1, n_heads=2, ffn_factor=1.5,
                    dropout_attention=0.0, dropout_residual=0.0,
                    dropout_ffn=0.0, variant="cd+ce", streams="dual",
                    assa=True,
                ),
                space,
                rng,
            )
            b = int(rng.integers(1, 7))
            trace = {}
            model.forward(random_inputs(rng, space, b), trace=trace)
            assert trace["D"] == (b, 2, f, d)
            assert trace["D_dim"] == (b, 2, f + 1, d)
            assert trace["D_enc"] == (b, 3, f, d)
            assert trace["z"] == (b, 2 * d)
        assert time.perf_counter() - t0 < 10.0

    def test_tree_encoders_match_hand_oracles(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(31)
        for i in range(25):  # numeric columns: root split and bin lookup
            n = int(rng.integers(10, 61))
            x = np.round(rng.normal(size=n), 2)
            task = "binclass" if i % 2 else "regression"
            if task == "binclass":
                y = rng.integers(0, 2, size=n)
            else:
                y = rng.normal(size=n)
            msl = int(rng.integers(1, 5))
            gain, t = exhaustive_root_split(x, y, task, msl)
            tree = fit_tree(x, y, task, msl, 1e-9)
            root = tree.nodes[0]
            if gain < 1e-9 or t is None:
                assert root.is_leaf
            else:
                assert abs(root.threshold - t) < 1e-12 * max(1.0, abs(t))
            binner = TreeBinner(min_samples_leaf=msl, min_impurity_decrease=1e-9)
            binner.fit(x, y, task)
            probe = np.concatenate([x, binner.edges_, rng.normal(size=8)])
            got = binner.transform(probe)
            want = [sum(1 for e in binner.edges_ if v >= e) for v in probe]
            assert np.array_equal(got, want)
        for i in range(25):  # categorical columns: pooled leaf frequencies
            n = int(rng.integers(12, 61))
            cats = rng.choice(list("abcdef"), size=n).astype(object)
            k = 3 if i % 5 == 0 else 2
            task = "multiclass" if k == 3 else "binclass"
            y = rng.integers(0, k, size=n)
            enc = DecisionTreeEncoder(
                min_samples_leaf=int(rng.integers(1, 5)),
                min_impurity_decrease=1e-9,
            )
            enc.fit(cats, y, task)
            groups = {}
            for c in sorted(set(cats.tolist())):
                groups.setdefault(id(enc.tree_.route(c)), []).append(c)
            for group in groups.values():
                rows = np.isin(cats, group)
                counts = np.bincount(y[rows], minlength=k) / rows.sum()
                out = enc.transform(np.array(group, dtype=object))
                if task == "binclass":
                    assert np.max(np.abs(out - counts[1])) < 1e-12
                else:
                    assert np.max(np.abs(out - counts)) < 1e-12
        assert time.perf_counter() - t0 < 60.0

    def test_rank_test_exact_and_family_threshold(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(41)
        for trial in range(40):
            n = int(rng.integers(1, 11))
            cand = np.round(rng.standard_normal(n), 1)  # rounding forces ties
            ref = np.round(cand + rng.standard_normal(n) * 0.7, 1)
            direction = ("lower-better", "higher-better")[trial % 2]
            got = wilcoxon_one_sided(cand, ref, direction)
            assert got.p_value == enumerate_signed_rank_p(cand, ref, direction)
            if got.n_nonzero:
                assert got.method == "exact"
        flags, threshold = bonferroni([0.0083, 0.0084, 0.5, 1.0, 0.001, 0.2])
        assert threshold == 0.05 / 6
        assert abs(threshold - 0.008333333333333333) < 1e-15
        assert flags == [True, False, False, False, True, False]
        assert time.perf_counter() - t0 < 10.0

    def test_bundled_dataset_reaches_capacity(self):
        t0 = time.perf_counter()
        spec = load_spec(REPO / "configs" / "toy_binclass.yaml")
        assert spec.model.variant == "cd+ce"
        assert spec.model.streams == "dual"
        assert spec.model.assa
        space, data = load_training_data(spec)
        assert data.task == "binclass"
        assert data.train.n + data.val.n + data.test.n == 2000
        init_rng, shuffle_rng, dropout_rng = spawn_rngs(0)
        model = DualTabModel(spec.model, space, init_rng)
        run = fit(model, data, spec.train, 0, shuffle_rng, dropout_rng)
        gain = run.val_metrics[run.best_epoch] - run.val_metrics[0]
        assert gain >= 0.15, f"val accuracy gain over the first epoch: {gain}"
        train_acc = accuracy(predict(model, data.train.inputs), data.train.y)
        assert train_acc >= 0.95, f"train accuracy: {train_acc}"
        assert time.perf_counter() - t0 < 300.0

    def test_commands_rerun_bitwise(self, tmp_path):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        files = write_csv_dataset(data_dir, "binclass")
        run_spec = write_spec_file(tmp_path / "run.yaml", tiny_csv_spec(files))
        plain = tiny_csv_spec(files)
        plain["model"]["assa"] = False
        plain_spec = write_spec_file(tmp_path / "plain.yaml", plain)
        ablate_spec = write_spec_file(
            tmp_path / "ablate.yaml",
            tiny_csv_spec(
                files,
                ablate={"variants": ["dfc", "cd", "cd+ce"], "reference": "cd+ce"},
            ),
        )
        sweep = {
            "dataset": {
                "kind": "synthetic", "rho": 0.5, "data_seed": 0,
                "n_train": 48, "n_val": 24, "n_test": 24,
            },
            "model": dict(tiny_csv_spec(files)["model"], variant="cd", streams="raw"),
            "train": tiny_csv_spec(files)["train"],
            "seeds": [0],
            "sweep": {"rhos": [0.5, 1.0], "seeds": [0]},
        }
        sweep_spec = write_spec_file(tmp_path / "sweep.yaml", sweep)

        def rerun(name, argv_fn):
            a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
            for out in (a, b):
                assert cli_main(argv_fn(str(out))) == 0
            got, again = dir_bytes(a), dir_bytes(b)
            assert got.keys() == again.keys() and got, name
            for rel in got:
                assert got[rel] == again[rel], f"{name}: {rel} differs"
            return a

        run_a = rerun(
            "run",
            lambda out: ["run", "--spec", run_spec, "--out", out, "--workers", "2"],
        )
        plain_a = rerun(
            "plain",
            lambda out: ["run", "--spec", plain_spec, "--out", out, "--workers", "1"],
        )
        # feeding a resolved spec back in reproduces the original bytes
        resolved = str(run_a / "resolved_spec.yaml")
        re_out = tmp_path / "run_resolved"
        assert cli_main(["run", "--spec", resolved, "--out", str(re_out),
                         "--workers", "1"]) == 0
        assert dir_bytes(re_out) == dir_bytes(run_a)
        rerun(
            "ablate",
            lambda out: ["ablate", "--spec", ablate_spec, "--out", out,
                         "--workers", "1"],
        )
        rerun(
            "sweep",
            lambda out: ["assa-sweep", "--spec", sweep_spec, "--out", out,
                         "--workers", "1"],
        )
        rerun(
            "encode",
            lambda out: ["encode", "--spec", run_spec, "--out", out],
        )
        rerun(
            "stats",
            lambda out: ["stats", str(run_a / "runs.jsonl"),
                         str(plain_a / "runs.jsonl"), "--out", out],
        )

    def test_sparse_branch_wins_redundancy_sweep(self):
        spec = load_spec(REPO / "configs" / "assa_sweep.yaml")
        assert isinstance(spec.dataset, SyntheticSource)
        assert spec.dataset.sizes() == (6400, 1600, 2000)
        assert spec.model.d_embedding == 64
        assert spec.model.n_layers == 2
        assert spec.model.n_heads == 4
        assert tuple(spec.sweep.rhos) == (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
        assert tuple(spec.sweep.seeds) == (0, 1, 2)
        walls = []

        def timed_map(job, cells):
            for cell in cells:
                start = time.perf_counter()
                rec = job(cell)
                walls.append(time.perf_counter() - start)
                yield rec

        records = assa_sweep(
            spec.model, spec.train, rhos=spec.sweep.rhos,
            seeds=spec.sweep.seeds, sizes=spec.dataset.sizes(),
            map_fn=timed_map,
        )
        assert len(records) == 36
        means = {
            (row["rho"], row["assa"]): row["mean_rmse"]
            for row in summarize_sweep(records)
        }
        wins = sum(
            1 for rho in spec.sweep.rhos if means[(rho, True)] < means[(rho, False)]
        )
        assert wins >= 5, f"sparse branch won {wins} of 6 redundancy levels"
        # 36 independent jobs on 8 workers: longest-job tail plus perfectly
        # shared remainder bounds the parallel makespan from above
        makespan = sum(walls) / 8.0 + max(walls)
        assert makespan < 45 * 60, f"8-way makespan bound {makespan:.0f}s"
