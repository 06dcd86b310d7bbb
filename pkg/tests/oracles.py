"""Slow, independent reference implementations used to check the fast code."""
from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.einsum("ncij,ocij->no", patch, w) + b
    return out


def conv_transpose2d_loops(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    _, o, k, _ = w.shape
    full = np.zeros((n, o, (h - 1) * stride + k, (wd - 1) * stride + k))
    for i in range(h):
        for j in range(wd):
            full[:, :, i * stride : i * stride + k, j * stride : j * stride + k] += np.einsum(
                "nc,cokl->nokl", x[:, :, i, j], w)
    hh, ww = full.shape[2] - 2 * pad, full.shape[3] - 2 * pad
    return full[:, :, pad : pad + hh, pad : pad + ww] + b[None, :, None, None]


def adam_reference(p, g, m, v, t, lr, b1, b2, eps):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mh = m / (1 - b1**t)
    vh = v / (1 - b2**t)
    return p - lr * mh / (math.sqrt(vh) + eps), m, v


def mse_loops(a, b):
    total = 0
    for va, vb in zip(a.reshape(-1).tolist(), b.reshape(-1).tolist()):
        total += (va - vb) ** 2
    return total / a.size


def changed_count_loops(a, b, fuzz):
    h, w, _ = a.shape
    count = 0
    limit = 255 * math.sqrt(3)
    al, bl = a.astype(int).tolist(), b.astype(int).tolist()
    for i in range(h):
        for j in range(w):
            d2 = sum((al[i][j][c] - bl[i][j][c]) ** 2 for c in range(3))
            if math.sqrt(d2) / limit > fuzz:
                count += 1
    return count


def ssim_windows(a, b, size=11, sigma=1.5):
    """Mean SSIM from explicit 2-D weighted sums over every valid window."""
    wts = np.array([math.exp(-((i - (size - 1) / 2) ** 2) / (2 * sigma**2)) for i in range(size)])
    w2 = np.outer(wts, wts)
    w2 /= w2.sum()
    x = 0.299 * a[..., 0].astype(float) + 0.587 * a[..., 1] + 0.114 * a[..., 2]
    y = 0.299 * b[..., 0].astype(float) + 0.587 * b[..., 1] + 0.114 * b[..., 2]
    ho, wo = x.shape[0] - size + 1, x.shape[1] - size + 1
    sums = {k: np.zeros((ho, wo)) for k in ("x", "y", "xx", "yy", "xy")}
    for di in range(size):
        for dj in range(size):
            xs, ys = x[di : di + ho, dj : dj + wo], y[di : di + ho, dj : dj + wo]
            wt = w2[di, dj]
            sums["x"] += wt * xs
            sums["y"] += wt * ys
            sums["xx"] += wt * xs * xs
            sums["yy"] += wt * ys * ys
            sums["xy"] += wt * xs * ys
    mx, my = sums["x"], sums["y"]
    vx, vy, cxy = sums["xx"] - mx**2, sums["yy"] - my**2, sums["xy"] - mx * my
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    s = (2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(s.mean())


def haversine(lat1, lon1, lat2, lon2, r=6_371_000.0):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.asin(min(1.0, math.sqrt(h)))


def deciles_by_full_sort(records, fraction):
    k = int(math.floor(fraction * len(records)))
    sign = 1 if records[0].polarity == "lower_is_better" else -1
    order = sorted(range(len(records)), key=lambda i: (sign * records[i].value, i))
    best = [records[i] for i in order[:k]]
    rev = sorted(range(len(records)), key=lambda i: (-sign * records[i].value, i))
    worst = [records[i] for i in rev[:k]]
    return best, worst, order[:k], rev[:k]


def nearest_exhaustive(loc, index, radius):
    best = None
    for ref in index:
        if ref.latitude is None:
            continue
        d = haversine(loc.latitude, loc.longitude, ref.latitude, ref.longitude)
        if d <= radius and (best is None or (d, ref.id) < (best[0], best[1].id)):
            best = (d, ref)
    return None if best is None else best[1]
