"""Slow, independent reference implementations used by the test suite."""
import numpy as np


def pr_auc_oracle(p, g, num_thresholds=100):
    p = [float(v) for v in np.ravel(p)]
    g = [int(v) for v in np.ravel(g)]
    n_pos = sum(g)
    if n_pos == 0:
        return 0.0
    prec, rec = [], []
    for i in range(num_thresholds):
        t = i / (num_thresholds - 1)
        tp = fp = 0
        for pi, gi in zip(p, g):
            if pi > t:
                if gi:
                    tp += 1
                else:
                    fp += 1
        prec.append(tp / (tp + fp) if tp + fp else 1.0)
        rec.append(tp / n_pos)
    area = 0.0
    for i in range(num_thresholds - 1):
        area += (rec[i] - rec[i + 1]) * (prec[i] + prec[i + 1]) / 2
    return area


def soft_iou_oracle(p, g):
    inter = union_p = union_g = 0.0
    for pi, gi in zip(np.ravel(p), np.ravel(g)):
        inter += pi * gi
        union_p += pi
        union_g += gi
    denom = union_p + union_g - inter
    return inter / denom if denom > 0 else 0.0


def random_instances(count=200, max_cells=64, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(1, max_cells + 1))
        g = (rng.random(n) < rng.uniform(0.05, 0.8)).astype(np.float64)
        kind = i % 4
        if kind == 0:
            p = rng.random(n)
        elif kind == 1:  # probabilities on the threshold grid, to exercise p == t ties
            p = rng.integers(0, 100, n) / 99.0
        elif kind == 2:
            p = np.clip(g * rng.uniform(0.3, 1, n) + rng.normal(0, 0.2, n), 0, 1)
        else:
            p = rng.choice([0.0, 0.5, 1.0], n)
        out.append((p, g))
    return out
