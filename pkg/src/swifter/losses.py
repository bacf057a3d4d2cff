"""Training losses: masked cross-entropy and the distillation loss."""

import numpy as np

from .autodiff import Tensor, astensor, log_softmax, mul, tensor_sum
from .errors import ContractError
from .vocab import PAD


def xe_loss(logits, targets) -> Tensor:
    """Mean negative log-likelihood over non-PAD target positions.

    ``logits`` is (..., T, V), ``targets`` (..., T) integer ids that exclude
    BOS and include EOS; PAD positions contribute nothing.
    """
    logits = astensor(logits)
    targets = np.asarray(targets)
    if logits.data.shape[:-1] != targets.shape:
        raise ContractError(
            f"targets shape {targets.shape} does not match logits {logits.data.shape}"
        )
    mask = (targets != PAD).astype(np.float64)
    count = mask.sum()
    if count == 0:
        raise ContractError("all target positions are PAD")
    from .autodiff import take_along_last

    picked = take_along_last(log_softmax(logits), targets)
    return mul(tensor_sum(mul(picked, mask)), -1.0 / count)


def kd_loss(student_logits, teacher_logits, student_feat, teacher_feat, adapter=None) -> Tensor:
    """KL(teacher || student) on the prediction heads plus feature MSE.

    Teacher quantities are treated as constants. When the feature widths
    differ, ``adapter`` (a Linear) maps the student features onto the
    teacher's before the MSE; without one the shapes must already agree.
    """
    student_logits = astensor(student_logits)
    tl = astensor(teacher_logits).data
    if student_logits.data.shape != tl.shape:
        raise ContractError("student/teacher logit shapes differ")
    z = tl - tl.max(axis=-1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(log_p)
    positions = max(1, int(np.prod(tl.shape[:-1], dtype=np.int64)))
    log_q = log_softmax(student_logits)
    # sum_v p (log p - log q), averaged over positions
    kl = mul(tensor_sum(mul(log_q, -p)), 1.0 / positions) + float((p * log_p).sum() / positions)

    sf = astensor(student_feat)
    tf = astensor(teacher_feat).data
    if adapter is not None:
        sf = adapter(sf)
    if sf.data.shape != tf.shape:
        raise ContractError(
            f"student features {sf.data.shape} do not match teacher {tf.shape}"
        )
    diff = sf - tf
    mse = mul(tensor_sum(mul(diff, diff)), 1.0 / diff.data.size)
    return kl + mse
