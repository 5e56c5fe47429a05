"""Slow, independent reference implementations used by the tests."""
import itertools

import numpy as np


def sgm_path_bruteforce(cost, direction, p1, p2):
    """Per-path SGM by exhaustive enumeration of disparity sequences.

    For a pixel p reached after n steps along ``direction`` the unnormalised
    path cost ``L'(p, d)`` is the minimum, over all disparity sequences along
    the scan line ending at p with value ``d``, of summed costs plus
    transition penalties (0 same, p1 for a change of one, p2 otherwise). The
    streaming recurrence subtracts ``min_k L(q, k)`` at every step, which
    telescopes to ``L(p, d) = L'(p, d) - min_k L'(q, k)`` with q the
    predecessor. Sums of small integers in float64, hence exact.
    """
    cost = np.asarray(cost, dtype=np.float64)
    h, w, nd = cost.shape
    dy, dx = direction
    starts = {(y, x) for y in range(h) for x in range(w)
              if not (0 <= y - dy < h and 0 <= x - dx < w)}
    result = np.empty_like(cost)
    for y0, x0 in sorted(starts):
        pts = [(y0, x0)]
        while 0 <= pts[-1][0] + dy < h and 0 <= pts[-1][1] + dx < w:
            pts.append((pts[-1][0] + dy, pts[-1][1] + dx))
        n = len(pts)
        seqs = np.array(list(itertools.product(range(nd), repeat=n))).reshape(-1, n)
        unit = np.stack([cost[y, x][seqs[:, i]] for i, (y, x) in enumerate(pts)], axis=1)
        jump = np.abs(np.diff(seqs, axis=1))
        pen = np.where(jump == 0, 0.0, np.where(jump == 1, p1, p2))
        prefix = np.cumsum(unit, axis=1)
        prefix[:, 1:] += np.cumsum(pen, axis=1)
        # a prefix's optimum is reached by some full sequence (extensions are free)
        best = np.full((n, nd), np.inf)
        for i in range(n):
            np.minimum.at(best[i], seqs[:, i], prefix[:, i])
        for i, (y, x) in enumerate(pts):
            result[y, x] = best[i] - (best[i - 1].min() if i else 0.0)
    return result


def naive_sgm_path(cost, direction, p1, p2):
    """Direct pixel-by-pixel evaluation of the textbook recurrence (float64)."""
    cost = np.asarray(cost, dtype=np.float64)
    h, w, nd = cost.shape
    dy, dx = direction
    out = np.zeros_like(cost)
    ys = range(h) if dy >= 0 else range(h - 1, -1, -1)
    xs = range(w) if dx >= 0 else range(w - 1, -1, -1)
    for y in ys:
        for x in xs:
            qy, qx = y - dy, x - dx
            if not (0 <= qy < h and 0 <= qx < w):
                out[y, x] = cost[y, x]
                continue
            prev = out[qy, qx]
            m = prev.min()
            for d in range(nd):
                cands = [prev[d], m + p2]
                if d > 0:
                    cands.append(prev[d - 1] + p1)
                if d < nd - 1:
                    cands.append(prev[d + 1] + p1)
                out[y, x, d] = cost[y, x, d] + min(cands) - m
    return out


def census_reference(img, window):
    img = np.asarray(img)
    h, w = img.shape
    r = window // 2
    codes = np.zeros((h, w), dtype=np.uint64)
    for y in range(r, h - r):
        for x in range(r, w - r):
            bits = []
            for yy in range(y - r, y + r + 1):
                for xx in range(x - r, x + r + 1):
                    if (yy, xx) != (y, x):
                        bits.append(1 if img[yy, xx] < img[y, x] else 0)
            codes[y, x] = int("".join(map(str, bits)), 2)
    return codes


def auc_pairwise(scores, positive):
    """Probability that a random positive outranks a random negative (ties 1/2)."""
    scores, positive = np.asarray(scores, float), np.asarray(positive, bool)
    pos, neg = scores[positive], scores[~positive]
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (greater + 0.5 * ties) / (len(pos) * len(neg))
