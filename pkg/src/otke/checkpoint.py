"""Binary checkpoint format for a trained model.

Layout, all little-endian::

    magic      8 bytes   b"OTKE0001"
    header     int64 x 6  d, k, p, q, C, kernel (0 gaussian, 1 linear)
    params     float64 x 5  sigma, epsilon, sigma_pos (NaN when off), lam, ridge
    options    int64 x 3  n_iter, pooling (0 ot, 1 dot_product), multilabel
    anchors    float64 (k, d)
    refs       float64 (q, p, k)
    W          float64 (C, q*p*k)
    bias       float64 (C,)

The whitening matrix is recomputed on load, so equal models always give
equal bytes.
"""
import struct

import numpy as np

from .classifier import LinearClassifier
from .embedding import POOLINGS, ReferenceBank
from .exceptions import ParseError
from .kernels import KernelSpec, NystromMap

__all__ = ["MAGIC", "save_model", "load_model", "model_bytes"]

MAGIC = b"OTKE0001"
KERNELS = ("gaussian", "linear")
_HEADER = struct.Struct("<6q5d3q")


def model_bytes(model):
    """Serialize an :class:`~otke.training.OTKEModel` to bytes."""
    ny, bank, clf = model.nystrom, model.bank, model.classifier
    k, d = ny.anchors.shape
    sigma_pos = np.nan if bank.sigma_pos is None else bank.sigma_pos
    header = _HEADER.pack(
        d, k, bank.p, bank.q, clf.n_classes, KERNELS.index(ny.spec.kind),
        ny.spec.sigma, bank.epsilon, sigma_pos, clf.lam, ny.ridge,
        bank.n_iter, POOLINGS.index(bank.pooling), int(model.multilabel),
    )
    arrays = (ny.anchors, bank.refs, clf.W, clf.bias)
    return MAGIC + header + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def save_model(path, model):
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


def load_model(path):
    """Inverse of :func:`save_model`.

    Raises
    ------
    ParseError
        Wrong magic, truncated file or trailing bytes.
    """
    from .training import OTKEModel

    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ParseError("not an OTKE checkpoint (bad magic)")
    offset = len(MAGIC)
    if len(raw) < offset + _HEADER.size:
        raise ParseError("truncated checkpoint header")
    (d, k, p, q, C, kernel, sigma, epsilon, sigma_pos, lam, ridge,
     n_iter, pooling, multilabel) = _HEADER.unpack_from(raw, offset)
    offset += _HEADER.size
    shapes = [(k, d), (q, p, k), (C, q * p * k), (C,)]
    expected = offset + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise ParseError(f"checkpoint has {len(raw)} bytes, expected {expected}")
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64))
        offset += 8 * n
    anchors, refs, W, bias = arrays
    nystrom = NystromMap(anchors, KernelSpec(KERNELS[kernel], sigma), ridge)
    bank = ReferenceBank(
        refs, epsilon=epsilon, n_iter=n_iter,
        sigma_pos=None if np.isnan(sigma_pos) else sigma_pos, pooling=POOLINGS[pooling],
    )
    return OTKEModel(nystrom, bank, LinearClassifier(W, bias, lam), bool(multilabel))
