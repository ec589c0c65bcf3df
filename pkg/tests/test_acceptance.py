"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import re
import statistics
import time
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from rawgat_st import ops
from rawgat_st.cli import PARAM_RANGE, audit_rows, main
from rawgat_st.data import make_synthetic_dataset, write_corpus
from rawgat_st.fusion import fuse, project_nodes
from rawgat_st.gat import GatLayer, attention_weights
from rawgat_st.metrics import compute_eer
from rawgat_st.model import STANDARD_SHAPES, ModelConfig, RawGatST, scores_from_logits
from rawgat_st.pooling import pool, pooled_count
from rawgat_st.tensor import Tensor
from rawgat_st.train import TrainConfig, stack_dataset, predict_logits, train, wce_loss

from conftest import DESK_DATA_SEED, DESK_DEV, DESK_LENGTH, DESK_TRAIN, desk_args
from gat_oracle import layer_oracle
from gradcheck import check_gradients
from test_metrics import sweep_oracle
from test_ops import _grad_cases

MODES = ("add", "mul", "concat")


def test_criterion_1_table_shape_audit(verdict, capsys):
    problems, timings = [], []
    for mode in MODES:
        t0 = time.perf_counter()
        rc = main(["audit", "--fusion", mode])
        timings.append(time.perf_counter() - t0)
        out = capsys.readouterr().out
        rows, _ = audit_rows(ModelConfig(fusion=mode))
        if rc != 0 or out.count(" OK") != len(STANDARD_SHAPES[mode]):
            problems.append(f"{mode}: exit {rc}, mismatched {[r[0] for r in rows if not r[3]]}")
    slow = [f"{m}={t:.1f}s" for m, t in zip(MODES, timings) if t >= 60]
    ok = not problems and not slow
    detail = f"{len(STANDARD_SHAPES['mul'])} rows x {len(MODES)} fusion modes exact; audit times " + ", ".join(
        f"{t:.1f}s" for t in timings
    )
    verdict(1, ok, detail if ok else f"{problems} {slow}")


def test_criterion_2_parameter_count(verdict):
    counts = {mode: RawGatST(ModelConfig(fusion=mode)).num_parameters() for mode in MODES}
    lo, hi = PARAM_RANGE
    ok = lo <= counts["mul"] <= hi
    verdict(2, ok, f"trainable parameters {counts} vs required [{lo}, {hi}]")


def _extra_grad_cases():
    def gat_case(a):
        gl = GatLayer(6, 4, np.random.default_rng(0), np.float64)
        gl.w_map, gl.att.weight, gl.res.weight = a[1], a[2], a[3]
        return gl(a[0])

    labels = np.array([1, 0, 0, 1, 0])
    return {
        "gat_layer": (gat_case, [(5, 6), (6,), (6, 4), (6, 4)]),
        "attention": (lambda a: attention_weights(a[0], a[1]), [(6, 8), (8,)]),
        "pool_gate": (lambda a: pool(a[0], a[1], 0.64)[0], [(6, 8), (8,)]),
        "node_projection": (lambda a: project_nodes(a[0], a[1], a[2]), [(2, 6, 3), (6, 4), (4,)]),
        "fuse_add": (lambda a: fuse(a[0], a[1], "add"), [(6, 4), (6, 4)]),
        "fuse_mul": (lambda a: fuse(a[0], a[1], "mul"), [(6, 4), (6, 4)]),
        "fuse_concat": (lambda a: fuse(a[0], a[1], "concat"), [(6, 4), (6, 4)]),
        "wce": (lambda a: wce_loss(a[0], labels), [(5, 2)]),
    }


def test_criterion_3_gradient_suite(verdict):
    t0 = time.perf_counter()
    cases = {**_grad_cases(), **_extra_grad_cases()}
    worst = {}
    for name, (build, shapes) in cases.items():
        for seed in range(20):
            rng = np.random.default_rng(seed)
            arrays = [rng.standard_normal(s) for s in shapes]
            worst[name] = max(worst.get(name, 0.0), check_gradients(build, arrays, rng))
    elapsed = time.perf_counter() - t0
    failing = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not failing and elapsed < 300
    verdict(3, ok, f"{len(cases)} ops x 20 seeds, worst rel. error {max(worst.values()):.2e}, {elapsed:.1f}s"
            + (f"; failing {failing}" if failing else ""))


def test_criterion_4_gat_oracle(verdict):
    worst_oracle = worst_cols = worst_perm = 0.0
    for i in range(50):
        rng = np.random.default_rng(1000 + i)
        n, d, dp = int(rng.integers(1, 6)), int(rng.integers(2, 7)), int(rng.integers(1, 5))
        gl = GatLayer(d, dp, rng, np.float64)
        gl.bn.gamma.data = rng.uniform(0.5, 1.5, dp)
        gl.bn.beta.data = rng.standard_normal(dp) * 0.3
        h = rng.standard_normal((n, d))
        out = gl(Tensor(h)).data
        worst_oracle = max(worst_oracle, np.abs(out - layer_oracle(gl, h)).max())
        alpha = attention_weights(Tensor(h), gl.w_map).data
        worst_cols = max(worst_cols, np.abs(alpha.sum(axis=0) - 1).max())
        p = rng.permutation(n)
        worst_perm = max(worst_perm, np.abs(gl(Tensor(h[p])).data - out[p]).max())
    ok = worst_oracle <= 1e-10 and worst_cols <= 1e-6 and worst_perm <= 1e-10
    verdict(4, ok, f"50 graphs N<=5: loop oracle {worst_oracle:.1e}, column sums {worst_cols:.1e}, "
            f"permutation {worst_perm:.1e}")


def test_criterion_5_pooling_oracle(verdict):
    ratios = (0.25, 0.5, 0.64, 0.81, 1.0)
    mismatches = []
    for n in range(1, 11):
        for k in ratios:
            rng = np.random.default_rng(n * 31 + int(k * 100))
            x, q = rng.standard_normal((n, 4)), rng.standard_normal(4)
            out, idx = pool(Tensor(x), Tensor(q), k)
            s = x @ q
            size = pooled_count(n, k)
            best = max(combinations(range(n), size), key=lambda c: sorted(s[list(c)])[::-1])
            gated = x[list(best)] / (1 + np.exp(-s[list(best)]))[:, None]
            if list(idx) != list(best) or not np.allclose(out.data, gated, atol=1e-14):
                mismatches.append((n, k))
    law = [(n, k) for n in range(1, 65) for k in ratios if pooled_count(n, k) != max(1, int(Fraction(str(k)) * n))]
    table = (pooled_count(23, 0.64), pooled_count(29, 0.81), pooled_count(12, 0.64))
    ok = not mismatches and not law and table == (14, 23, 7)
    verdict(5, ok, f"subset oracle mismatches {mismatches}, count-law violations {law}, table counts {table}")


@pytest.mark.slow
def test_criterion_6_desk_learnability(verdict, desk_run, tmp_path, capsys):
    out = desk_run["out"]
    scores = tmp_path / "dev.scores"
    report = tmp_path / "dev.report"
    rc_score = main(["score", "--checkpoint", str(out / "checkpoint.npz"), "--manifest", str(desk_run["manifest"]),
                     "--out", str(scores)])
    rc_eval = main(["eval", str(scores), str(desk_run["protocol"]), "--out", str(report)])
    text = capsys.readouterr().out
    match = re.search(r"pooled EER: ([0-9.]+)%", text)
    eer = float(match.group(1)) / 100 if match else float("nan")
    ablation_rc = main(desk_args(tmp_path / "nopool", epochs=2, extra=("--ablate", "pooling")))
    capsys.readouterr()
    minutes = desk_run["seconds"] / 60
    ok = desk_run["rc"] == 0 and rc_score == 0 and rc_eval == 0 and eer <= 0.05 and ablation_rc == 0 and minutes < 30
    verdict(6, ok, f"dev EER {100 * eer:.2f}% after 50 epochs ({DESK_TRAIN}+{DESK_DEV} per class, "
            f"{DESK_LENGTH} samples) in {minutes:.1f} min; w/o-pooling run exit {ablation_rc}")


@pytest.mark.slow
def test_criterion_8_determinism(verdict, tmp_path, capsys):
    logs, score_files = [], []
    dev = make_synthetic_dataset(3, 77, DESK_LENGTH)
    manifest, _ = write_corpus(dev, tmp_path, "det")
    for run in ("a", "b"):
        out = tmp_path / run
        main(desk_args(out, epochs=2, n_train=6, n_dev=3, seed=5))
        main(["score", "--checkpoint", str(out / "checkpoint.npz"), "--manifest", str(manifest),
              "--out", str(out / "scores.txt")])
        # the wall-time column is the only field allowed to differ
        rows = [line.split("\t") for line in (out / "train.log").read_text().splitlines()]
        logs.append([r[:3] + r[4:] for r in rows])
        score_files.append((out / "scores.txt").read_bytes())
    capsys.readouterr()
    ok = logs[0] == logs[1] and score_files[0] == score_files[1]
    verdict(8, ok, f"two seeded runs: logs identical={logs[0] == logs[1]} ({len(logs[0]) - 1} epochs), "
            f"score files byte-identical={score_files[0] == score_files[1]}")


def test_criterion_7_metrics_oracle(verdict):
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        nb, ns = rng.integers(1, 50, 2)
        if seed % 4 == 0:
            bona, spoof = rng.integers(0, 5, nb) + 0.0, rng.integers(0, 4, ns) + 0.0
        else:
            bona, spoof = rng.standard_normal(nb) + rng.uniform(0, 2), rng.standard_normal(ns)
        worst = max(worst, abs(compute_eer(bona, spoof)[0] - sweep_oracle(bona, spoof)))
    trivial = (compute_eer([0.9, 0.8], [0.1, 0.2])[0], compute_eer([0.4] * 5, [0.4] * 3)[0])
    ok = worst <= 1e-9 and trivial == (0.0, 0.5)
    verdict(7, ok, f"200 random sets, worst deviation from sweep oracle {worst:.1e}; trivial cases {trivial}")


ABLATION_EPOCHS = 10


def _dev_eer(seed, use_spectral, train_set, dev_set):
    model = RawGatST(ModelConfig(segment_length=DESK_LENGTH, seed=seed, use_spectral=use_spectral))
    train(model, train_set, dev_set, TrainConfig(epochs=ABLATION_EPOCHS, seed=seed))
    x, y = stack_dataset(dev_set)
    s = scores_from_logits(predict_logits(model, x))
    return compute_eer(s[y == 1], s[y == 0])[0]


@pytest.mark.slow
def test_criterion_9_ablation_ordering(verdict):
    train_set = make_synthetic_dataset(DESK_TRAIN, DESK_DATA_SEED, DESK_LENGTH)
    dev_set = make_synthetic_dataset(DESK_DEV, DESK_DATA_SEED + 1, DESK_LENGTH)
    full, no_spec = [], []
    for seed in (0, 1, 2):
        full.append(_dev_eer(seed, True, train_set, dev_set))
        no_spec.append(_dev_eer(seed, False, train_set, dev_set))
    ok = statistics.median(no_spec) >= statistics.median(full)
    verdict(9, ok, f"median dev EER over seeds 0-2 ({ABLATION_EPOCHS} epochs): full "
            f"{100 * statistics.median(full):.1f}% {[round(100 * e, 1) for e in full]}, w/o spectral "
            f"{100 * statistics.median(no_spec):.1f}% {[round(100 * e, 1) for e in no_spec]}")
