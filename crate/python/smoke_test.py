"""Smoke test for the imb_dpgm_py extension.

Build first:
    cargo build --release -p imb-dpgm-py --features extension-module
then run:
    python3 python/smoke_test.py
"""

import importlib.util
import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    try:
        import imb_dpgm_py  # installed via maturin

        return imb_dpgm_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libimb_dpgm_py.so")
        if os.path.exists(lib):
            break
    else:
        sys.exit("extension not built; see the module docstring")
    tmp = tempfile.mkdtemp()
    dst = os.path.join(tmp, "imb_dpgm_py.so")
    shutil.copy(lib, dst)
    spec = importlib.util.spec_from_file_location("imb_dpgm_py", dst)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    m = load_module()

    ds = m.Dataset.synth(1000, 50, 2, separation=4.0, seed=1)
    assert len(ds) == 1050 and ds.d == 2
    assert ds.class_counts() == [1000, 50]

    train, val, test = ds.split((0.7, 0.15, 0.15), seed=42)
    assert len(train) + len(val) + len(test) == len(ds)

    norm = m.NormStats.fit(train)
    train, val, test = norm.apply(train), norm.apply(val), norm.apply(test)
    assert all(abs(v) < 1e-9 for v in m.NormStats.fit(train, clip_k=1e9).mean)

    w_min, w_maj, minority = m.class_weights(train.labels)
    assert minority == 1 and w_maj == 1.0 and w_min > 10

    clf = m.Classifier.fit(train, val, epochs=5, seed=3, beta_rec=1.0)
    assert json.loads(clf.config)["epochs"] == 5
    assert len(clf.trace) == 6  # initial point plus one per epoch
    assert clf.trace[0][0] == 0
    probs = clf.predict_proba(test)
    assert all(0.0 <= p <= 1.0 for p in probs)
    report = m.evaluate(probs, test.labels, 0.5)
    print("test metrics:", {k: report[k] for k in ("auc", "precision", "recall", "f1")})
    assert report["auc"] > 0.9
    assert report["tp"] + report["fn"] == sum(test.labels)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.json")
        clf.save(path, train.feature_names)
        again = m.Classifier.load(path)
        assert again.predict_proba(test.features) == probs

        csv = os.path.join(d, "d.csv")
        test.to_csv(csv)
        back = m.Dataset.from_csv(csv, "Class")
        assert back.labels == test.labels and back.features == test.features

    mu, logvar = clf.encode(test)
    assert len(mu) == len(test) and len(mu[0]) == clf.latent_dim

    for method in ("none", "undersample", "oversample", "smote", "adasyn"):
        r = train.resample(method, k=5, seed=0)
        counts = r.class_counts()
        if method != "none":
            assert counts[0] == counts[1], (method, counts)

    assert m.roc_auc([0.9, 0.8, 0.4, 0.3], [1, 1, 0, 0]) == 1.0

    coords, eig = m.pca2d(mu, test.labels)
    assert len(coords) == len(mu) and eig[0] >= eig[1] >= 0.0

    pts = [[0.0 + 0.01 * i, 0.0] for i in range(10)] + [[10.0 + 0.01 * i, 0.0] for i in range(10)]
    labels = [0] * 10 + [1] * 10
    emb, kl = m.tsne(pts, labels, perplexity=5.0, iterations=1000, seed=0)
    assert len(kl) == 1000 and all(math.isfinite(v) for v in kl)
    assert m.silhouette(emb, labels) > 0.5

    try:
        m.Dataset.from_csv(os.path.join(ROOT, "does-not-exist.csv"))
    except OSError:
        pass
    else:
        raise AssertionError("missing file should raise OSError")
    try:
        m.roc_auc([0.1, 0.2], [1, 1])
    except ValueError:
        pass
    else:
        raise AssertionError("single-class AUC should raise ValueError")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
