"""Training losses and binary-segmentation metrics.

The Dice and cross-entropy losses are fused autodiff ops with
hand-written backward passes; the hybrid loss combines them as an
exact linear blend. Metrics reduce per image and average over the
batch while the raw confusion counts are summed globally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor, _sigmoid_forward


@dataclass(frozen=True)
class LossConfig:
    """Blend weight and smoothing term of the hybrid loss."""

    lambda_: float = 0.5
    epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0,1], got {self.lambda_}")
        if self.epsilon <= 0.0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")


def _pair(a, b, a_name: str, b_name: str) -> tuple[Value, np.ndarray]:
    av = ad.as_value(a)
    bt = b.tensor if isinstance(b, Value) else b
    if not isinstance(bt, Tensor):
        bt = Tensor(bt)
    if av.tensor.shape != bt.shape:
        raise DimensionError(
            f"{a_name} shape {av.tensor.shape} != {b_name} shape {bt.shape}"
        )
    if av.tensor.dtype != bt.dtype:
        raise ContractError(
            f"{a_name} dtype {av.tensor.dtype} != {b_name} dtype {bt.dtype}"
        )
    return av, bt.data


def _check_binary(t: np.ndarray, name: str) -> None:
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ContractError(f"{name} must contain only 0 and 1")


def dice_loss(probs, target, epsilon: float = 1e-6) -> Value:
    """Soft Dice loss, reduced over every element of the batch at once.

    ``probs`` must already be probabilities in [0,1]; ``target`` is a
    binary mask of the same shape. Differentiable in ``probs`` only.
    """
    if epsilon <= 0.0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    pv, td = _pair(probs, target, "probs", "target")
    pd = pv.tensor.data
    if pd.min() < -1e-6 or pd.max() > 1.0 + 1e-6:
        raise ContractError(
            f"probs outside [0,1]: range [{pd.min()}, {pd.max()}]"
        )
    _check_binary(td, "target")
    dt = pd.dtype
    num = 2.0 * float(np.sum(pd * td, dtype=np.float64)) + epsilon
    den = (
        float(np.sum(pd, dtype=np.float64))
        + float(np.sum(td, dtype=np.float64))
        + epsilon
    )
    loss = Tensor._wrap(np.asarray([1.0 - num / den], dtype=dt))

    def mk():
        def vjp(g):
            return ((g[0] * (num - 2.0 * td * den) / (den * den)).astype(dt),)

        return vjp

    return ad.record_op(loss, (pv,), mk)


def bce_loss(logits, target) -> Value:
    """Binary cross-entropy on raw logits, fused log-sigmoid form.

    Uses mean(max(x,0) - x*t + log1p(exp(-|x|))), which stays finite
    for logits of any magnitude. Differentiable in ``logits`` only.
    """
    lv, td = _pair(logits, target, "logits", "target")
    _check_binary(td, "target")
    xd = lv.tensor.data
    dt = xd.dtype
    m = xd.size
    per = np.maximum(xd, 0) - xd * td + np.log1p(np.exp(-np.abs(xd)))
    loss = Tensor._wrap(
        np.asarray([np.sum(per, dtype=np.float64) / m], dtype=dt)
    )

    def mk():
        def vjp(g):
            return ((g[0] * (_sigmoid_forward(xd) - td) / dt.type(m)).astype(dt),)

        return vjp

    return ad.record_op(loss, (lv,), mk)


def hybrid_loss(logits, target, cfg: LossConfig = LossConfig()) -> Value:
    """lambda * BCE + (1 - lambda) * Dice, with Dice fed sigmoid(logits).

    The blend is an exact linear combination: lambda=1 reproduces
    bce_loss bit-for-bit and lambda=0 reproduces dice_loss.
    """
    lv = ad.as_value(logits)
    bce = bce_loss(lv, target)
    dice = dice_loss(ad.sigmoid(lv), target, cfg.epsilon)
    return ad.add(ad.scale(bce, cfg.lambda_), ad.scale(dice, 1.0 - cfg.lambda_))


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricsReport:
    """Six ratio metrics (per-image averaged) plus summed pixel counts."""

    dice: float
    iou: float
    precision: float
    recall: float
    specificity: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int

    _METRICS = ("dice", "iou", "precision", "recall", "specificity", "accuracy")

    def to_record(self) -> str:
        """One-line machine-readable form, six decimal places."""
        parts = [f"{k}={getattr(self, k):.6f}" for k in self._METRICS]
        parts += [f"{k}={getattr(self, k)}" for k in ("tp", "fp", "fn", "tn")]
        return " ".join(parts)

    def to_text(self) -> str:
        lines = [f"{k:<12} {getattr(self, k):.6f}" for k in self._METRICS]
        lines.append(
            f"{'counts':<12} tp={self.tp} fp={self.fp} fn={self.fn} tn={self.tn}"
        )
        return "\n".join(lines)


def _safe_div(num: int, den: int, err: int) -> float:
    if den > 0:
        return num / den
    return 1.0 if err == 0 else 0.0


def _image_metrics(tp: int, fp: int, fn: int, tn: int) -> tuple[float, ...]:
    dice = _safe_div(2 * tp, 2 * tp + fp + fn, fp + fn)
    iou = _safe_div(tp, tp + fp + fn, fp + fn)
    precision = _safe_div(tp, tp + fp, fn)
    recall = _safe_div(tp, tp + fn, fp)
    specificity = _safe_div(tn, tn + fp, fn)
    accuracy = (tp + tn) / (tp + fp + fn + tn)
    return dice, iou, precision, recall, specificity, accuracy


def evaluate(pred_logits: Tensor, target: Tensor, threshold: float = 0.5) -> MetricsReport:
    """Threshold sigmoid(logits) and score against a binary target.

    A rank-4 input is treated as a batch: ratio metrics are computed
    per image and averaged, while tp/fp/fn/tn are summed over the whole
    batch. Lower-rank inputs count as one image. Zero-denominator
    ratios score 1.0 when the corresponding error count is zero, else
    0.0 (the empty-mask convention).
    """
    if isinstance(pred_logits, Value):
        pred_logits = pred_logits.tensor
    if isinstance(target, Value):
        target = target.tensor
    if pred_logits.shape != target.shape:
        raise DimensionError(
            f"logits shape {pred_logits.shape} != target shape {target.shape}"
        )
    _check_binary(target.data, "target")
    probs = _sigmoid_forward(pred_logits.data)
    pred = probs > threshold
    tgt = target.data > 0.5
    if pred.ndim == 4:
        preds = [pred[i] for i in range(pred.shape[0])]
        tgts = [tgt[i] for i in range(tgt.shape[0])]
    else:
        preds, tgts = [pred], [tgt]
    sums = np.zeros(6, dtype=np.float64)
    tp_all = fp_all = fn_all = tn_all = 0
    for p, t in zip(preds, tgts):
        tp = int(np.count_nonzero(p & t))
        fp = int(np.count_nonzero(p & ~t))
        fn = int(np.count_nonzero(~p & t))
        tn = int(np.count_nonzero(~p & ~t))
        sums += np.asarray(_image_metrics(tp, fp, fn, tn))
        tp_all += tp
        fp_all += fp
        fn_all += fn
        tn_all += tn
    means = sums / len(preds)
    return MetricsReport(
        dice=float(means[0]),
        iou=float(means[1]),
        precision=float(means[2]),
        recall=float(means[3]),
        specificity=float(means[4]),
        accuracy=float(means[5]),
        tp=tp_all,
        fp=fp_all,
        fn=fn_all,
        tn=tn_all,
    )
