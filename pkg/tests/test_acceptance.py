"""End-to-end acceptance checks.

Each test covers one numbered criterion and records a PASS/FAIL line that is
printed in the session summary. Run on its own with

    python3 -m pytest tests/test_acceptance.py -v

The benchmark criteria (6-8, 10) share one protocol: a flat model and a gala
model (5 epochs, default forest) are trained on the reference synthetic image
(128x128, 20 regions, 2 channels, seed 42) and applied to five held-out
images drawn with seeds 43-47. Every held-out image is agglomerated once per
policy to a single region and cut at 21 thresholds in [0, 1].
"""

import contextlib

import numpy as np
import pytest

from agglo.cli import main
from agglo.evaluate import (adjusted_rand_error, adjusted_rand_index,
                            rand_index, split_vi_sweep, vi)
from agglo.estimator import Agglomerator
from agglo.features import default_feature_map
from agglo.learn import prepare_image, train
from agglo.rag import LearnedPolicy, MeanBoundary, RandomPolicy, build_rag
from agglo.synth import generate
from conftest import dyadic_cues, random_superpixels
from oracles import (ari_pair_oracle, naive_mean_agglomeration,
                     rand_index_oracle, vi_oracle)

REFERENCE_SEED = 42
TEST_SEEDS = (43, 44, 45, 46, 47)
THRESHOLDS = np.linspace(0, 1, 21)
HALF = 10                    # THRESHOLDS[HALF] == 0.5


@contextlib.contextmanager
def criterion(verdicts, n, title):
    detail = []
    try:
        yield detail
    except BaseException as exc:
        msg = "; ".join(detail + [f"{type(exc).__name__}: {exc}"])
        verdicts[n] = f"criterion {n:2d} FAIL  {title}  ({msg})"
        raise
    verdicts[n] = f"criterion {n:2d} PASS  {title}" + \
        (f"  ({'; '.join(detail)})" if detail else "")


# --- 1-5: metric and engine oracles -----------------------------------------

def test_c01_vi_unit_anchor(verdicts):
    with criterion(verdicts, 1, "one segment split in two halves = 1 bit"):
        gt = np.ones(64, dtype=np.uint64)
        seg = np.repeat(np.array([1, 2], dtype=np.uint64), 32)
        r = vi(seg, gt)
        assert abs(r.total - 1.0) < 1e-12
        assert r.over == 1.0 and r.under == 0.0


def test_c02_vi_metric_suite(verdicts):
    with criterion(verdicts, 2, "VI identity/symmetry/triangle, entropy "
                   "oracle") as info:
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(200):
            k = rng.integers(1, 9, size=3)
            a, b, c = (rng.integers(1, kk + 1, size=50) for kk in k)
            ab, bc, ac = vi(a, b).total, vi(b, c).total, vi(a, c).total
            assert vi(a, a).total == 0.0
            assert abs(ab - vi(b, a).total) <= 1e-9
            assert ac <= ab + bc + 1e-9
            for x, y, got in ((a, b, ab), (b, c, bc), (a, c, ac)):
                err = abs(got - vi_oracle(x.tolist(), y.tolist()))
                worst = max(worst, err)
        assert worst <= 1e-12
        info.append(f"200 triples, max oracle error {worst:.1e}")


def test_c03_rand_oracles(verdicts):
    with criterion(verdicts, 3, "RI/ARE equal pair enumeration") as info:
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 31))
            s = rng.integers(1, rng.integers(1, 7) + 1, size=n)
            u = rng.integers(1, rng.integers(1, 7) + 1, size=n)
            assert rand_index(s, u) == rand_index_oracle(s.tolist(),
                                                         u.tolist())
            want = 1 - ari_pair_oracle(s.tolist(), u.tolist())
            assert abs(adjusted_rand_error(s, u) - want) <= 1e-12
            assert adjusted_rand_error(s, s) == 0.0
        assert adjusted_rand_index(s, s) == 1.0
        info.append("100 instances, n <= 30")


def test_c04_lazy_heap_matches_rescan(verdicts):
    with criterion(verdicts, 4, "lazy-heap merge order = naive rescan") \
            as info:
        rng = np.random.default_rng(4)
        for i in range(100):
            shape = (int(rng.integers(3, 8)), int(rng.integers(3, 8)))
            k = int(rng.integers(2, 31))
            sp = random_superpixels(rng, shape, k, blobby=bool(i % 2))
            cue = dyadic_cues(rng, shape, denom=8)
            rag = build_rag(sp, cue)
            rag.set_policy(MeanBoundary())
            log = [(int(s), int(a), float(x))
                   for s, a, x in rag.agglomerate().events]
            assert log == naive_mean_agglomeration(sp, cue[0])
            assert len(rag.nodes) <= 30
        info.append("100 graphs")


def test_c05_feature_merge_consistency(verdicts):
    with criterion(verdicts, 5, "incremental features = rebuilt features") \
            as info:
        fm = default_feature_map(2, 2)
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(500 + seed)
            shape = (10, 11)
            sp = random_superpixels(rng, shape, int(rng.integers(5, 20)))
            cues = rng.random((2,) + shape)
            rag = build_rag(sp, cues, with_spatial=True, bins=fm.bins)
            rag.set_policy(RandomPolicy(seed))
            for _ in range(int(rng.integers(1, 10))):
                if len(rag.nodes) <= 2:
                    break
                u, v = sorted(rag.edges)[rng.integers(len(rag.edges))]
                rag.merge(u, v)
            fresh = build_rag(rag.segmentation(sp), cues, with_spatial=True,
                              bins=fm.bins)
            pairs = sorted(rag.edges)
            assert pairs == sorted(fresh.edges)
            a, b = fm.compute_many(rag, pairs), fm.compute_many(fresh, pairs)
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)
            worst = max(worst, float(np.max(np.abs(a - b))))
        info.append(f"100 sequences, max abs diff {worst:.1e}")


# --- 6-10: benchmark protocol -----------------------------------------------

@pytest.fixture(scope="session")
def feature_map():
    return default_feature_map(2, 2)


@pytest.fixture(scope="session")
def reference(feature_map):
    gt, cues, sp = generate(seed=REFERENCE_SEED)
    return sp, cues, gt, prepare_image(sp, cues, gt, feature_map)


@pytest.fixture(scope="session")
def models(reference, feature_map):
    sp, _, _, img = reference
    params = Agglomerator().forest_params()
    epochs = []

    def check_epoch(k, i, rag):
        pure = all(img.assignment.node_gold(n) is not None
                   for n in rag.nodes.values())
        target = img.assignment.labels(sp)
        epochs.append((k, pure, vi(rag.segmentation(sp), target).total,
                       len(rag.nodes)))
    flat, _ = train([img], feature_map, "flat", forest_params=params)
    gala, _ = train([img], feature_map, "gala", 5, forest_params=params,
                    callback=check_epoch)
    return {"flat": flat, "gala": gala, "epochs": epochs}


@pytest.fixture(scope="session")
def sweeps(models, feature_map):
    """Split-VI rows per policy and held-out image."""
    policies = {"mean": MeanBoundary(0),
                "flat": LearnedPolicy(feature_map, models["flat"]),
                "gala": LearnedPolicy(feature_map, models["gala"])}
    out = {name: [] for name in policies}
    for seed in TEST_SEEDS:
        gt, cues, sp = generate(seed=seed)
        for name, policy in policies.items():
            rag = build_rag(sp, cues, with_spatial=True, bins=feature_map.bins)
            rag.set_policy(policy)
            d = rag.agglomerate()
            out[name].append(split_vi_sweep(sp, d, gt, THRESHOLDS))
    return out


def _curves(rows):
    return np.array([[r.total for r in sweep] for sweep in rows])


def test_c06_gala_purity_and_termination(models, verdicts):
    with criterion(verdicts, 6, "gala epochs stay pure and end at the best "
                   "assignment") as info:
        epochs = models["epochs"]
        info.append(", ".join(f"epoch {k}: {n} nodes, VI {v:.3g}"
                              for k, _, v, n in epochs))
        assert [e[0] for e in epochs] == [1, 2, 3, 4, 5]
        for k, pure, total, _ in epochs:
            assert pure, f"epoch {k} ended with an impure node"
            assert total < 1e-12, f"epoch {k} terminal VI {total}"


def test_c07_policy_ordering(sweeps, verdicts):
    with criterion(verdicts, 7, "median VI@0.5: gala <= flat <= mean, "
                   "mean - gala >= 0.05") as info:
        med = {name: float(np.median(_curves(rows)[:, HALF]))
               for name, rows in sweeps.items()}
        info.append(", ".join(f"{k} {v:.3f}" for k, v in med.items()))
        assert med["gala"] <= med["flat"] <= med["mean"]
        assert med["mean"] - med["gala"] >= 0.05


def test_c08_threshold_calibration(sweeps, verdicts):
    with criterion(verdicts, 8, "gala VI@0.5 within 10% of min; flat argmin "
                   "off 0.5 by >= 0.1") as info:
        gala = np.median(_curves(sweeps["gala"]), axis=0)
        flat = np.median(_curves(sweeps["flat"]), axis=0)
        t_flat = THRESHOLDS[int(np.argmin(flat))]
        rel = gala[HALF] / gala.min() - 1
        info.append(f"gala VI@0.5 {gala[HALF]:.3f} vs min {gala.min():.3f} "
                    f"(+{100 * rel:.1f}%), flat argmin t={t_flat:.2f}")
        assert gala[HALF] <= 1.1 * gala.min()
        assert abs(t_flat - 0.5) >= 0.1 - 1e-12


def test_c09_determinism(tmp_path, verdicts):
    with criterion(verdicts, 9, "two identical CLI runs give identical "
                   "bytes") as info:
        def run(root):
            root.mkdir()
            syn = root / "bench"
            assert main(["synth", "--out", str(syn), "--shape", "64", "64",
                         "--n-regions", "8", "--seed", "7"]) == 0
            vols = [str(syn / f) for f in ("sp.ndv", "cues.ndv", "gt.ndv")]
            assert main(["train", "--sp", vols[0], "--cues", vols[1],
                         "--gt", vols[2], "--method", "gala", "--epochs",
                         "2", "--n-trees", "20", "--seed", "3", "--out",
                         str(root / "model.json")]) == 0
            assert main(["segment", "--sp", vols[0], "--cues", vols[1],
                         "--model", str(root / "model.json"), "--save-tree",
                         "--out", str(root / "seg.ndv")]) == 0
            assert main(["eval", "--sp", vols[0], "--gt", vols[2],
                         "--sweep", str(root / "seg.tree.csv"),
                         "--metrics", "splitvi,ri", "--out",
                         str(root / "sweep.csv")]) == 0
            return {p.relative_to(root): p.read_bytes()
                    for p in sorted(root.rglob("*"))
                    if p.is_file() and "manifest" not in p.name}
        a, b = run(tmp_path / "one"), run(tmp_path / "two")
        assert sorted(a) == sorted(b)
        differing = [str(k) for k in a if a[k] != b[k]]
        assert not differing, differing
        info.append(f"{len(a)} files compared")


def test_c10_split_vi_monotone(sweeps, verdicts):
    with criterion(verdicts, 10, "H(U|S) nondecreasing along every sweep") \
            as info:
        count = 0
        for name, rows in sweeps.items():
            for sweep in rows:
                under = [r.under for r in sweep]
                assert all(b >= a for a, b in zip(under, under[1:])), name
                count += 1
        info.append(f"{count} sweeps")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
