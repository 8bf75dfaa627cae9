"""Brute-force reference implementations used to pin expected values.

Everything here is written as directly from the definitions as possible
(explicit loops, no vectorization, no shared code with the package) so
that agreement with the fast paths is meaningful evidence of
correctness rather than a tautology.
"""

import math

import numpy as np


def reflect_index(i: int, n: int) -> int:
    """Index into [0, n) under symmetric (half-sample) reflection.

    Matches np.pad(mode='symmetric'): ..., 2, 1, 0 | 0, 1, 2, ..., n-1 | n-1, n-2, ...
    """
    if n == 1:
        return 0
    period = 2 * n
    i = i % period
    if i < 0:
        i += period
    return i if i < n else period - 1 - i


def naive_convolve(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True 2D convolution (kernel flipped) with symmetric boundary, clamped."""
    img = np.asarray(image, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    kh, kw = k.shape
    ch, cw = kh // 2, kw // 2
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w, c = img.shape
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            for ci in range(c):
                acc = 0.0
                for ky in range(kh):
                    for kx in range(kw):
                        # convolution: output(y,x) = sum_k f(y - (ky - ch), ...) k(ky, kx)
                        sy = reflect_index(y - (ky - ch), h)
                        sx = reflect_index(x - (kx - cw), w)
                        acc += img[sy, sx, ci] * k[ky, kx]
                out[y, x, ci] = min(1.0, max(0.0, acc))
    return out[..., 0] if squeeze else out


def softmax(logits):
    logits = [float(v) for v in logits]
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    z = sum(exps)
    return [e / z for e in exps]


def focal_loss_ref(logits: np.ndarray, labels: np.ndarray, alpha: float = 1.0, gamma: float = 2.0) -> float:
    """Mean over samples of -alpha * (1 - p_true)^gamma * log(p_true)."""
    total = 0.0
    n = len(labels)
    for i in range(n):
        p = softmax(logits[i])[int(labels[i])]
        total += -alpha * (1.0 - p) ** gamma * math.log(p)
    return total / n


def cross_entropy_ref(logits: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    n = len(labels)
    for i in range(n):
        p = softmax(logits[i])[int(labels[i])]
        total += -math.log(p)
    return total / n


def cosine(u, v) -> float:
    u = [float(x) for x in u]
    v = [float(x) for x in v]
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def feature_alignment_ref(teacher: np.ndarray, student: np.ndarray) -> float:
    """1 - mean_i cosine(teacher_i, student_i)."""
    n = teacher.shape[0]
    return 1.0 - sum(cosine(teacher[i], student[i]) for i in range(n)) / n


def kd_loss_ref(teacher_logits: np.ndarray, student_logits: np.ndarray, temperature: float) -> float:
    """T^2 * mean_i KL(softmax(t_i/T) || softmax(s_i/T))."""
    t = float(temperature)
    n = teacher_logits.shape[0]
    total = 0.0
    for i in range(n):
        p = softmax([v / t for v in teacher_logits[i]])
        q = softmax([v / t for v in student_logits[i]])
        kl = sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)
        total += kl
    return t * t * total / n


def ordcon_loss_ref(embeddings: np.ndarray, blur_levels: np.ndarray, tau: float = 0.1) -> float:
    """Ordinal contrastive loss, straight from the definition.

    Every view anchors. For anchor i, each other view j is a positive;
    its denominator runs over views k != i whose blur distance from i is
    at least that of j (so j itself always appears). Per-anchor loss is
    the mean over j of -log(exp(s_ij/tau) / sum_k exp(s_ik/tau)); the
    batch loss is the mean over anchors with at least one positive.
    """
    m = embeddings.shape[0]
    # cosine similarities
    s = [[cosine(embeddings[i], embeddings[j]) for j in range(m)] for i in range(m)]
    b = [float(v) for v in blur_levels]
    anchor_losses = []
    for i in range(m):
        js = [j for j in range(m) if j != i]
        if not js:
            continue
        terms = []
        for j in js:
            dij = abs(b[i] - b[j])
            denom = 0.0
            for k in range(m):
                if k == i:
                    continue
                if abs(b[i] - b[k]) >= dij:
                    denom += math.exp(s[i][k] / tau)
            terms.append(-math.log(math.exp(s[i][j] / tau) / denom))
        anchor_losses.append(sum(terms) / len(terms))
    return sum(anchor_losses) / len(anchor_losses)


def infonce_all_pairs_ref(embeddings: np.ndarray, tau: float = 0.1) -> float:
    """InfoNCE where every other view is a positive over the full denominator."""
    m = embeddings.shape[0]
    s = [[cosine(embeddings[i], embeddings[j]) for j in range(m)] for i in range(m)]
    anchor_losses = []
    for i in range(m):
        denom = sum(math.exp(s[i][k] / tau) for k in range(m) if k != i)
        terms = [-math.log(math.exp(s[i][j] / tau) / denom) for j in range(m) if j != i]
        anchor_losses.append(sum(terms) / len(terms))
    return sum(anchor_losses) / len(anchor_losses)


def radial_spectrum_ref(image: np.ndarray, n_bins: int) -> np.ndarray:
    """Log annular power spectrum of the luma channel, loop form."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        luma = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    else:
        luma = img
    luma = luma - luma.mean()
    f = np.fft.fftshift(np.fft.fft2(luma))
    power = np.abs(f) ** 2
    h, w = luma.shape
    cy, cx = h // 2, w // 2
    sums = [0.0] * n_bins
    counts = [0] * n_bins
    for y in range(h):
        for x in range(w):
            r = math.hypot((y - cy) / h, (x - cx) / w)
            if r >= 0.5:
                continue
            idx = int(r / 0.5 * n_bins)
            if idx >= n_bins:
                idx = n_bins - 1
            sums[idx] += power[y, x]
            counts[idx] += 1
    out = np.empty(n_bins)
    for i in range(n_bins):
        mean = sums[i] / counts[i] if counts[i] else 0.0
        out[i] = math.log10(mean + 1e-12)
    return out


def cosine_lr_ref(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def numerical_gradient(fn, params: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar fn w.r.t. a flat float64 vector."""
    grad = np.zeros_like(params, dtype=np.float64)
    for i in range(params.size):
        orig = params.flat[i]
        params.flat[i] = orig + eps
        hi = fn(params)
        params.flat[i] = orig - eps
        lo = fn(params)
        params.flat[i] = orig
        grad.flat[i] = (hi - lo) / (2.0 * eps)
    return grad
