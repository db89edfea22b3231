"""Pixel-level xView2-style scores: F1_loc, per-class damage F1, harmonic F1_dam, weighted F1_oa."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DAMAGE_NAMES = ("no", "minor", "major", "destroyed")
LOC_WEIGHT, DAM_WEIGHT = 0.3, 0.7


def f1(tp: int, fp: int, fn: int) -> float:
    den = 2 * tp + fp + fn
    return 0.0 if den == 0 else 2 * tp / den


def damage_f1(scores) -> float:
    """Harmonic mean of the per-class scores; any zero score gives 0."""
    scores = [float(s) for s in scores]
    if any(s <= 0 for s in scores):
        return 0.0
    return len(scores) / sum(1.0 / s for s in scores)


def overall_f1(f1_loc: float, f1_dam: float) -> float:
    return LOC_WEIGHT * f1_loc + DAM_WEIGHT * f1_dam


def predictions_from_logits(loc_logits: np.ndarray, dam_logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """loc = sigmoid(z) > 0.5; dam = argmax, zeroed wherever loc is background.

    ``loc_logits`` is [N,1,H,W], ``dam_logits`` [N,5,H,W]; masks are [N,H,W].
    """
    loc = (loc_logits[:, 0] > 0).astype(np.uint8)
    dam = np.argmax(dam_logits, axis=1).astype(np.uint8)
    dam[loc == 0] = 0
    return loc, dam


@dataclass
class MetricsReport:
    loc_counts: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))  # TP FP FN TN
    dam_counts: np.ndarray = field(default_factory=lambda: np.zeros((4, 3), dtype=np.int64))  # class 1..4 x TP FP FN

    def accumulate(self, pred_loc, pred_dam, ref_loc, ref_dam) -> "MetricsReport":
        pred_loc, pred_dam, ref_loc, ref_dam = (np.asarray(a) for a in (pred_loc, pred_dam, ref_loc, ref_dam))
        if not (pred_loc.shape == pred_dam.shape == ref_loc.shape == ref_dam.shape):
            raise ValueError(
                f"mask shapes differ: {pred_loc.shape}, {pred_dam.shape}, {ref_loc.shape}, {ref_dam.shape}"
            )
        for m in (pred_dam, ref_dam):
            if m.size and (m.min() < 0 or m.max() > 4):
                raise ValueError("damage masks must lie in 0..4")
        p, r = pred_loc.astype(bool), ref_loc.astype(bool)
        self.loc_counts += np.array([(p & r).sum(), (p & ~r).sum(), (~p & r).sum(), (~p & ~r).sum()])
        for k, c in enumerate(range(1, 5)):
            pc, rc = pred_dam == c, ref_dam == c
            self.dam_counts[k] += np.array([(pc & rc).sum(), (pc & ~rc).sum(), (~pc & rc).sum()])
        return self

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport(self.loc_counts + other.loc_counts, self.dam_counts + other.dam_counts)

    @property
    def f1_loc(self) -> float:
        tp, fp, fn, _ = (int(v) for v in self.loc_counts)
        return f1(tp, fp, fn)

    @property
    def f1_per_class(self) -> list[float]:
        return [f1(*(int(v) for v in row)) for row in self.dam_counts]

    @property
    def f1_dam(self) -> float:
        return damage_f1(self.f1_per_class)

    @property
    def f1_oa(self) -> float:
        return overall_f1(self.f1_loc, self.f1_dam)

    def as_dict(self) -> dict[str, float]:
        out = {"f1_oa": self.f1_oa, "f1_loc": self.f1_loc, "f1_dam": self.f1_dam}
        for name, score in zip(DAMAGE_NAMES, self.f1_per_class):
            out[f"f1_{name}"] = score
        tp, fp, fn, tn = (int(v) for v in self.loc_counts)
        out.update(loc_tp=tp, loc_fp=fp, loc_fn=fn, loc_tn=tn)
        for name, (tp, fp, fn) in zip(DAMAGE_NAMES, self.dam_counts.tolist()):
            out.update({f"{name}_tp": tp, f"{name}_fp": fp, f"{name}_fn": fn})
        return out

    def to_kv(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def to_table(self, name: str = "DamFormer") -> str:
        return render_table([(name, self.f1_oa, self.f1_loc, self.f1_dam, *self.f1_per_class)])


def render_table(rows) -> str:
    """Aligned table with scores rendered x100 to two decimals."""
    header = ("Method", "F1_oa", "F1_loc", "F1_dam", "No", "Minor", "Major", "Destroyed")
    body = [(r[0], *(f"{100 * v:.2f}" for v in r[1:])) for r in rows]
    widths = [max(len(str(row[i])) for row in (header, *body)) for i in range(len(header))]
    fmt = lambda row: "  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(row, widths)))
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule, *(fmt(r) for r in body)]) + "\n"


def parse_kv(text: str) -> dict[str, float]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = float(v)
    return out
