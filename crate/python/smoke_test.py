"""Smoke test for the mdmanifold_py extension module.

Build and run:

    cargo build --release -p mdmanifold-py --features extension-module
    cp target/release/libmdmanifold_py.so python/mdmanifold_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import mdmanifold_py as md  # noqa: E402


def close(a, b, tol=1e-4):
    return abs(a - b) < tol


def check_worked_example():
    ok, text = md.worked_example_demo()
    assert ok, text
    assert "0.0153" in text

    h = md.Hierarchy.from_icd9(["4289", "42823", "42820"])
    assert h.ancestors("42823") == ["4282", "428"]
    assert h.depth("428") == 1
    assert close(h.wu_palmer("42823", "42820"), 1 / 3, 1e-12)

    corpus = md.Corpus(
        [
            ("V1", ["4289", "42823"]),
            ("V2", ["42823"]),
            ("V3", ["42820"]),
        ]
    )
    aug = corpus.augment(h)
    assert sorted(aug.records()[1][1]) == ["428", "4282", "42823"]

    c = md.Cooccurrence.build(h, corpus)
    assert c.vocabulary() == ["428", "4282", "42820", "42823", "4289"]
    assert c.get("428", "428") == 3
    assert c.get("4289", "42820") == 0
    d = c.concept_distance("cosine", "428", "4282")
    assert 0.0 <= d < 1.0
    p = c.project(2, 7)
    assert len(p) == 5 and len(p[0]) == 2


def check_manifold():
    h, corpus, groups = md.synth_generate({"noise": "0.0", "records_per_cohort": "30"})
    assert len(corpus) == 90
    assert len(groups) == 16
    ids, dist = md.record_distances(h, corpus)
    assert len(ids) == 90 and all(len(r) == 90 for r in dist)
    assert all(dist[i][i] == 0.0 for i in range(90))

    kept, coords = md.embed(ids, dist, {"k_nn": "8", "dim": "2", "connectivity": "bridge"})
    assert len(kept) == 90 and len(coords[0]) == 2
    labels = dict(zip(corpus.ids(), corpus.cohorts()))
    s = md.silhouette(kept, coords, labels)
    r = md.cluster_ratio(kept, coords, labels)
    assert -1.0 <= s <= 1.0 and r > 1.0, (s, r)

    chain = md.synth_chain(10, 3)
    assert len(chain) == 10


def check_metrics_and_errors():
    assert md.roc_auc([0.1, 0.9, 0.8], [False, True, True]) == 1.0
    assert md.ndcg([True, True], 2, 2) == 1.0
    assert close(md.ndcg([False, True], 1, 2), 1 / math.log2(3), 1e-12)
    try:
        md.Hierarchy.from_edges([("a", "b"), ("b", "a")])
    except md.DataError as e:
        assert "cycle" in str(e)
    else:
        raise AssertionError("cycle accepted")
    try:
        md.record_distances(md.Hierarchy.from_edges([("a", "ROOT")]), md.Corpus([("r", ["a"])]), {"sd_kind": "sd9"})
    except ValueError:
        pass
    else:
        raise AssertionError("bad sd_kind accepted")


def check_stages():
    with tempfile.TemporaryDirectory() as out:
        base = {"out_dir": out, "synth.records_per_cohort": "10", "k_nn": "4", "proj_k": "16"}
        for stage in ["synth", "augment", "cooccur", "project", "record-dist", "knn-graph", "embed"]:
            md.run_stage(stage, base, threads=2)
        metrics = dict(md.run_stage("eval-cluster", base))
        assert set(metrics) == {"silhouette", "cluster_ratio"}
        assert os.path.exists(os.path.join(out, "embed.manifest.json"))


def main():
    check_worked_example()
    check_manifold()
    check_metrics_and_errors()
    check_stages()
    print(f"mdmanifold_py {md.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
