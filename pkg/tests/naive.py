"""Independent brute-force oracles used by the tests.

Deliberately written with plain Python loops, separate from the vectorized
implementations they check.
"""

import numpy as np


def edit_distance_oracle(ref, hyp):
    """Quadratic DP edit distance with unit costs, distance only."""
    nr, nh = len(ref), len(hyp)
    prev = list(range(nh + 1))
    for i in range(1, nr + 1):
        cur = [i] + [0] * nh
        for j in range(1, nh + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            cur[j] = min(prev[j - 1] + cost, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[nh]


def _nearest(frame, centroids):
    best, best_d = 0, None
    for c, centroid in enumerate(centroids):
        d = sum((float(a) - float(b)) ** 2 for a, b in zip(frame, centroid))
        if best_d is None or d < best_d:
            best, best_d = c, d
    return best, best_d


def naive_lloyd(frames, init_centroids, max_iters, tol):
    """Loop-based Lloyd's with the same update, repair, and stopping rule as
    the library (k-means++ init supplied by the caller). Returns final mean
    inertia."""
    frames = [list(map(float, f)) for f in np.asarray(frames, dtype=np.float32)]
    centroids = [list(map(float, c)) for c in init_centroids]
    k = len(centroids)
    dims = len(frames[0])

    def evaluate(cents):
        labels, d2 = [], []
        for f in frames:
            c, d = _nearest(f, cents)
            labels.append(c)
            d2.append(d)
        return labels, d2

    labels, d2 = evaluate(centroids)
    inertia = sum(d2) / len(frames)
    iters = 0
    while iters < max_iters:
        sums = [[0.0] * dims for _ in range(k)]
        counts = [0] * k
        for f, c in zip(frames, labels):
            counts[c] += 1
            for j in range(dims):
                sums[c][j] += f[j]
        new_centroids = []
        for c in range(k):
            if counts[c] > 0:
                new_centroids.append([s / counts[c] for s in sums[c]])
            else:
                new_centroids.append(list(centroids[c]))
        rem = list(d2)
        for c in range(k):
            if counts[c] == 0:
                far = max(range(len(frames)), key=lambda i: rem[i])
                new_centroids[c] = list(frames[far])
                rem[far] = -1.0
        new_labels, new_d2 = evaluate(new_centroids)
        new_inertia = sum(new_d2) / len(frames)
        iters += 1
        done = inertia == 0.0 or (inertia - new_inertia) <= tol * inertia
        centroids, labels, d2, inertia = new_centroids, new_labels, new_d2, new_inertia
        if done:
            break
    return inertia
