"""Slow, loop-based reference implementations used as independent test oracles."""

import itertools

import numpy as np


def naive_conv(x, w, b, stride=1, pad=0, groups=1):
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    og = o // groups
    out = np.zeros((n, o, ho, wo))
    for bi, oc, i, j in itertools.product(range(n), range(o), range(ho), range(wo)):
        g = oc // og
        patch = xp[bi, g * cg : (g + 1) * cg, i * stride : i * stride + kh, j * stride : j * stride + kw]
        out[bi, oc, i, j] = (patch * w[oc]).sum() + b[oc]
    return out


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def channel_gate(f, fc1_w, fc1_b, fc2_w, fc2_b):
    """sigmoid(MLP(avg) + MLP(max)) with a ReLU bottleneck, on [N,C,H,W]."""

    def mlp(v):
        return np.maximum(v @ fc1_w + fc1_b, 0) @ fc2_w + fc2_b

    return sigmoid(mlp(f.mean(axis=(2, 3))) + mlp(f.max(axis=(2, 3))))


def iou(pred, ref):
    inter = np.logical_and(pred, ref).sum()
    union = np.logical_or(pred, ref).sum()
    return 1.0 if union == 0 else inter / union


def dense_mha(x, attn):
    """Reference multi-head attention written directly in numpy."""
    q = x @ attn.q.weight.data + attn.q.bias.data
    k = x @ attn.k.weight.data + attn.k.bias.data
    v = x @ attn.v.weight.data + attn.v.bias.data
    n, length, c = x.shape
    d = c // attn.heads
    out = np.zeros_like(x)
    for b in range(n):
        for hd in range(attn.heads):
            sl = slice(hd * d, (hd + 1) * d)
            s = q[b, :, sl] @ k[b, :, sl].T / np.sqrt(d)
            s = np.exp(s - s.max(axis=1, keepdims=True))
            s /= s.sum(axis=1, keepdims=True)
            out[b, :, sl] = s @ v[b, :, sl]
    return out @ attn.proj.weight.data + attn.proj.bias.data
