"""Smoke test for the clipxpert Python bindings.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import math
import os
import tempfile

import clipxpert as cx


def main():
    data = cx.generate_synthetic(c_known=5, c_unknown=5, dim=64, samples_per_class=30, seed=3)
    samples, anchors, labels = data["samples"], data["anchors"], data["labels"]
    num_known = data["num_known"]
    assert len(samples) == 300 and len(anchors) == 5

    config = cx.PipelineConfig(scorer="entropy", strategy="bgat")
    report = cx.run_pipeline(samples, anchors, config)
    assert len(report.labels) == len(samples)
    t = report.threshold_final
    print(f"threshold {t.t_star:.4g} via {t.method}, suff applied: {report.suff_applied}")

    result = cx.evaluate(report.labels, labels, num_known)
    assert 0.0 <= result.hos <= 1.0
    print(f"hos {result.hos:.4f} known {result.acc_known:.4f} unknown {result.acc_unknown:.4f}")

    again = cx.run_pipeline(samples, anchors, config)
    assert again.labels == report.labels

    scores = cx.score_samples(samples, anchors, "entropy")
    print(f"auroc {cx.auroc(scores, labels, num_known):.4f}")

    for lam in (-1.5, 0.0, 0.5, 2.0):
        y = cx.boxcox(2.5, lam)
        assert math.isclose(cx.inverse_boxcox(y, lam), 2.5, rel_tol=1e-12)
    assert math.isclose(cx.boxcox(math.e, 0.0), 1.0, rel_tol=1e-12)

    assert math.isclose(cx.hos(0.8, 0.6), 0.96 / 1.4, rel_tol=1e-12)
    assert math.isclose(cx.gaussian_intersection(0.0, 1.0, 2.0, 1.0), 1.0, abs_tol=1e-9)

    try:
        cx.PipelineConfig(scorer="nonsense")
    except ValueError:
        pass
    else:
        raise AssertionError("bad scorer accepted")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "anchors.emb1")
        cx.save_embeddings(anchors, path)
        assert cx.load_embeddings(path) == anchors

    print("smoke ok")


if __name__ == "__main__":
    main()
