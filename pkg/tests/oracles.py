"""Independent scalar reference implementations used as test oracles.

Everything here is deliberately written with plain Python loops and the
math module (mpmath for the density), sharing no code with the package
so the two routes can disagree when one of them is wrong.
"""

import math

import mpmath
import numpy as np


def conv_time_ref(x, kernel):
    """Zero same-padded temporal convolution, scalar loops."""
    t_len, n, c_in = x.shape
    length = kernel.shape[1]
    c_out = kernel.shape[3]
    pad = (length - 1) // 2
    out = np.zeros((t_len, n, c_out))
    for t in range(t_len):
        for node in range(n):
            for k in range(c_out):
                acc = 0.0
                for tap in range(length):
                    src = t + tap - pad
                    if src < 0 or src >= t_len:
                        continue
                    for j in range(c_in):
                        acc += kernel[0, tap, j, k] * x[src, node, j]
                out[t, node, k] = acc
    return out


def sigmoid_ref(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def sgconv_ref(coeffs, theta, lambdas):
    """Spectral filter reference: per-timestep pooled mode responses."""
    t_len, n, c_in = coeffs.shape
    c_out = theta.shape[3]
    lam = np.asarray(lambdas, dtype=float)
    out = np.zeros((t_len, n, c_out))
    for t in range(t_len):
        for k in range(c_out):
            acc = 0.0
            for i in range(n):
                lam_i = lam[i] if lam.ndim == 1 else lam[t, i]
                for j in range(c_in):
                    acc += theta[t, i, j, k] * lam_i * coeffs[t, i, j]
            for node in range(n):
                out[t, node, k] = acc
    return out


def tgconv_ref(coeffs, signal_w, signal_b, gate_w, gate_b):
    sig = conv_time_ref(coeffs, signal_w)
    gate = conv_time_ref(coeffs, gate_w)
    t_len, n, c_out = sig.shape
    out = np.zeros_like(sig)
    for t in range(t_len):
        for node in range(n):
            for k in range(c_out):
                out[t, node, k] = (sig[t, node, k] + signal_b[k]) * sigmoid_ref(
                    gate[t, node, k] + gate_b[k])
    return out


def softmax_row_ref(row):
    m = max(row)
    es = [math.exp(v - m) for v in row]
    s = sum(es)
    return [e / s for e in es]


def mha_ref(x, wq_list, wk_list, wv_list, wh):
    """Multi-head attention over the middle axis of [B, S, C], loops."""
    b_len, s_len, _ = x.shape
    d_k = wq_list[0].shape[1]
    d_out = wv_list[0].shape[1]
    n_heads = len(wq_list)
    concat = np.zeros((b_len, s_len, n_heads * d_out))
    for h in range(n_heads):
        q = np.zeros((b_len, s_len, d_k))
        k = np.zeros((b_len, s_len, d_k))
        v = np.zeros((b_len, s_len, d_out))
        for b in range(b_len):
            for s in range(s_len):
                for d in range(d_k):
                    q[b, s, d] = sum(x[b, s, c] * wq_list[h][c, d] for c in range(x.shape[2]))
                    k[b, s, d] = sum(x[b, s, c] * wk_list[h][c, d] for c in range(x.shape[2]))
                for d in range(d_out):
                    v[b, s, d] = sum(x[b, s, c] * wv_list[h][c, d] for c in range(x.shape[2]))
        for b in range(b_len):
            logits = np.zeros((s_len, s_len))
            for i in range(s_len):
                for j in range(s_len):
                    logits[i, j] = sum(q[b, i, d] * k[b, j, d] for d in range(d_k)) / math.sqrt(d_k)
            for i in range(s_len):
                weights = softmax_row_ref(list(logits[i]))
                for d in range(d_out):
                    concat[b, i, h * d_out + d] = sum(
                        weights[j] * v[b, j, d] for j in range(s_len))
    out = np.zeros((b_len, s_len, wh.shape[1]))
    for b in range(b_len):
        for s in range(s_len):
            for d in range(wh.shape[1]):
                out[b, s, d] = sum(concat[b, s, c] * wh[c, d] for c in range(wh.shape[0]))
    return out


def temporal_attention_ref(y, wq, wk, wv, wh):
    """Attend over time independently per agent: batch axis is the agent."""
    swapped = np.transpose(y, (1, 0, 2))
    return np.transpose(mha_ref(swapped, wq, wk, wv, wh), (1, 0, 2))


def spatial_attention_ref(y, wq, wk, wv, wh):
    """Attend over agents independently per timestep."""
    return mha_ref(y, wq, wk, wv, wh)


def statt_ref(y, temporal, spatial, out_w, mode="sequential"):
    """Two-stage attention reference; each stage is (wq, wk, wv, wh)."""
    if mode == "sequential":
        mid = temporal_attention_ref(y, *temporal)
        mixed = spatial_attention_ref(mid, *spatial)
    else:
        mixed = temporal_attention_ref(y, *temporal) + spatial_attention_ref(y, *spatial)
    t_len, n, _ = mixed.shape
    out = np.zeros((t_len, n, out_w.shape[1]))
    for t in range(t_len):
        for node in range(n):
            for d in range(out_w.shape[1]):
                out[t, node, d] = sum(mixed[t, node, c] * out_w[c, d]
                                      for c in range(out_w.shape[0]))
    return out


def prelu_ref(v, slope):
    return v if v > 0 else slope * v


def tcnn_ref(y, y_st, horizon_w, horizon_b, res_layers, out_proj=None, fusion="add"):
    """Residual temporal decoder reference.

    res_layers is a list of (kernel, bias, slope) triples; out_proj an
    optional (w, b) channel projection applied last.
    """
    if y_st is None:
        fused = y
    elif fusion == "add":
        fused = y + y_st
    else:
        fused = np.concatenate([y, y_st], axis=2)
    t_h, n, c = fused.shape
    t_f = horizon_w.shape[0]
    x = np.zeros((t_f, n, c))
    for tf in range(t_f):
        for node in range(n):
            for ch in range(c):
                x[tf, node, ch] = horizon_b[tf] + sum(
                    horizon_w[tf, th] * fused[th, node, ch] for th in range(t_h))
    for kernel, bias, slope in res_layers:
        conv = conv_time_ref(x, kernel)
        nxt = np.zeros_like(x)
        for t in range(t_f):
            for node in range(n):
                for ch in range(x.shape[2]):
                    nxt[t, node, ch] = x[t, node, ch] + prelu_ref(
                        conv[t, node, ch] + bias[ch], slope[ch])
        x = nxt
    if out_proj is not None:
        w, b = out_proj
        proj = np.zeros((t_f, n, w.shape[1]))
        for t in range(t_f):
            for node in range(n):
                for d in range(w.shape[1]):
                    proj[t, node, d] = b[d] + sum(
                        x[t, node, c2] * w[c2, d] for c2 in range(w.shape[0]))
        x = proj
    return x


def nll_ref(target_x, target_y, mu_x, mu_y, sig_x, sig_y, rho):
    """Bivariate normal negative log density at one point, high precision."""
    with mpmath.workdps(50):
        dx = mpmath.mpf(target_x) - mpmath.mpf(mu_x)
        dy = mpmath.mpf(target_y) - mpmath.mpf(mu_y)
        sx = mpmath.mpf(sig_x)
        sy = mpmath.mpf(sig_y)
        r = mpmath.mpf(rho)
        one_m = 1 - r * r
        z = dx * dx / (sx * sx) - 2 * r * dx * dy / (sx * sy) + dy * dy / (sy * sy)
        dens = mpmath.exp(-z / (2 * one_m)) / (2 * mpmath.pi * sx * sy * mpmath.sqrt(one_m))
        return float(-mpmath.log(dens))


def loss_prob_ref(target, mu_x, mu_y, sig_x, sig_y, rho):
    """Sum of per-step NLL along time, averaged over agents."""
    t_len, n, _ = target.shape
    per_agent = []
    for node in range(n):
        acc = 0.0
        for t in range(t_len):
            acc += nll_ref(target[t, node, 0], target[t, node, 1],
                           mu_x[t, node], mu_y[t, node],
                           sig_x[t, node], sig_y[t, node], rho[t, node])
        per_agent.append(acc)
    return sum(per_agent) / n


def conv2d_ref(image, kernel):
    """Zero same-padded 2d convolution over [H, W, c_in], scalar loops."""
    h, w, c_in = image.shape
    kh, kw, _, c_out = kernel.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((h, w, c_out))
    for r in range(h):
        for c in range(w):
            for k in range(c_out):
                acc = 0.0
                for dr in range(kh):
                    for dc in range(kw):
                        sr, sc = r + dr - ph, c + dc - pw
                        if sr < 0 or sr >= h or sc < 0 or sc >= w:
                            continue
                        for j in range(c_in):
                            acc += kernel[dr, dc, j, k] * image[sr, sc, j]
                out[r, c, k] = acc
    return out


def bilinear_ref(fmap, col, row):
    """Interpolate one channel vector from [H, W, C] at a float position."""
    h, w, c = fmap.shape
    c0 = min(int(math.floor(col)), w - 2) if w > 1 else 0
    r0 = min(int(math.floor(row)), h - 2) if h > 1 else 0
    fc, fr = col - c0, row - r0
    out = np.zeros(c)
    for k in range(c):
        top = (1 - fc) * fmap[r0, c0, k] + fc * fmap[r0, min(c0 + 1, w - 1), k]
        bot = (1 - fc) * fmap[min(r0 + 1, h - 1), c0, k] + fc * fmap[min(r0 + 1, h - 1), min(c0 + 1, w - 1), k]
        out[k] = (1 - fr) * top + fr * bot
    return out


def env_encode_ref(image, affine, positions, conv_w, conv_b, conv_slope, embed_w, embed_b):
    """Map-graph weights via the scalar conv/sample route."""
    feat = image[:, :, None]
    for cw, cb, slope in zip(conv_w, conv_b, conv_slope):
        feat = conv2d_ref(feat, cw) + cb
        feat = np.where(feat >= 0, feat, slope * feat)
    n = len(positions)
    d = embed_w.shape[1]
    z = np.zeros((n, d))
    for i in range(n):
        col = affine[0, 0] * positions[i, 0] + affine[0, 1] * positions[i, 1] + affine[0, 2]
        row = affine[1, 0] * positions[i, 0] + affine[1, 1] * positions[i, 1] + affine[1, 2]
        z[i] = bilinear_ref(feat, col, row) @ embed_w + embed_b
    weights = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                weights[i, j] = sigmoid_ref(float(z[i] @ z[j]) / math.sqrt(d))
    return weights
