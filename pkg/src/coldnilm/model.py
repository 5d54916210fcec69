"""The COLD network: forward pass, exact gradients, initialization, checkpoints.

Layout, applied to a batch of spectrograms ``X0`` of shape (B, t, v)::

    h1 -> ReLU -> RPSN x k -> multi-head self-attention -> mean over t -> head

Every layer is a pair of functions: ``<layer>(...)`` returns the output and
a cache, ``<layer>_backward(d_out, cache)`` returns the input gradient and
the parameter gradients. Position-wise layers subtract their bias
(``X @ W.T - theta``). The head is ``1 / (1 - alpha * exp(-z))`` with
``alpha = -softplus(alpha_raw)`` so it always yields a probability.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

LN_EPS = 1e-5
CLAMP = 1e-7
CHECKPOINT_VERSION = 1
_MAGIC = b"COLDCKPT"


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ColdHyperParams:
    q: int
    k: int
    n_head: int
    p_d: float
    n_labels: int
    v_in: int
    relu_first: bool = True  # ReLU between h1 and the first block

    def __post_init__(self):
        if self.q < 1 or self.k < 0 or self.n_head < 1 or self.n_labels < 1 or self.v_in < 1:
            raise ValueError(f"invalid hyperparameters {self}")
        if self.q % self.n_head:
            raise ValueError(f"q={self.q} is not divisible by n_head={self.n_head}")
        if not 0 <= self.p_d < 1:
            raise ValueError("dropout probability must lie in [0, 1)")


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


# -- layers -------------------------------------------------------------------

def position_wise(X, W, theta):
    _check(X.shape[-1] == W.shape[1] and theta.shape == (W.shape[0],),
           f"position-wise layer: input {X.shape}, weights {W.shape}, bias {theta.shape}")
    return X @ W.T - theta, (X, W)


def position_wise_backward(dY, cache):
    X, W = cache
    return dY @ W, _flat(dY).T @ _flat(X), -_flat(dY).sum(axis=0)


def relu(X):
    return np.maximum(X, 0), X > 0


def relu_backward(dY, mask):
    return dY * mask


def dropout(X, p_d: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout: survivors are scaled by 1 / (1 - p_d); identity at inference."""
    if not training or p_d == 0:
        return X, None
    mask = (rng.random(X.shape) >= p_d).astype(X.dtype) / (1.0 - p_d)
    return X * mask, mask


def dropout_backward(dY, mask):
    return dY if mask is None else dY * mask


def layer_norm(X, gain, bias):
    mu = X.mean(axis=-1, keepdims=True)
    var = X.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (X - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dY, cache):
    xhat, inv, gain = cache
    q = xhat.shape[-1]
    dxhat = dY * gain
    dX = inv / q * (q * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dX, _flat(dY * xhat).sum(axis=0), _flat(dY).sum(axis=0)


def rpsn(X, block: dict, p_d: float, rng=None, training: bool = False):
    """ReLU(LayerNorm(X + Dropout(h_b(ReLU(Dropout(h_a(X)))))))."""
    a, c_a = position_wise(X, block["Wa"], block["theta_a"])
    a, m_a = dropout(a, p_d, rng, training)
    r, m_r = relu(a)
    b, c_b = position_wise(r, block["Wb"], block["theta_b"])
    b, m_b = dropout(b, p_d, rng, training)
    n, c_n = layer_norm(X + b, block["gain"], block["bias"])
    out, m_out = relu(n)
    return out, (c_a, m_a, m_r, c_b, m_b, c_n, m_out)


def rpsn_backward(dY, cache):
    c_a, m_a, m_r, c_b, m_b, c_n, m_out = cache
    dn = relu_backward(dY, m_out)
    ds, dgain, dbias = layer_norm_backward(dn, c_n)
    db = dropout_backward(ds, m_b)
    dr, dWb, dtb = position_wise_backward(db, c_b)
    da = dropout_backward(relu_backward(dr, m_r), m_a)
    dX, dWa, dta = position_wise_backward(da, c_a)
    return ds + dX, {"Wa": dWa, "theta_a": dta, "Wb": dWb, "theta_b": dtb,
                     "gain": dgain, "bias": dbias}


def _split_heads(X, n_head):
    *lead, t, q = X.shape
    return X.reshape(*lead, t, n_head, q // n_head).swapaxes(-2, -3)


def _merge_heads(H):
    *lead, h, t, d = H.shape
    return H.swapaxes(-2, -3).reshape(*lead, t, h * d)


def softmax(S):
    S = S - S.max(axis=-1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=-1, keepdims=True)


def mhsa(X, attn: dict, n_head: int):
    """Self-attention with queries = keys = values = X.

    ``attn["WQ"]`` stacks the per-head projections row-wise: rows
    ``[i*d, (i+1)*d)`` are head ``i``'s matrix, ``d = q / n_head``.
    """
    q = X.shape[-1]
    _check(q % n_head == 0 and attn["WQ"].shape == (q, q), f"attention: input width {q}, heads {n_head}")
    d = q // n_head
    Q = _split_heads(X @ attn["WQ"].T, n_head)
    K = _split_heads(X @ attn["WK"].T, n_head)
    V = _split_heads(X @ attn["WV"].T, n_head)
    A = softmax(Q @ K.swapaxes(-1, -2) / math.sqrt(d))
    H = _merge_heads(A @ V)
    return H @ attn["WO"].T, (X, Q, K, V, A, H, attn, n_head)


def mhsa_backward(dY, cache):
    X, Q, K, V, A, H, attn, n_head = cache
    d = Q.shape[-1]
    dWO = _flat(dY).T @ _flat(H)
    dHd = _split_heads(dY @ attn["WO"], n_head)
    dA = dHd @ V.swapaxes(-1, -2)
    dV = A.swapaxes(-1, -2) @ dHd
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / math.sqrt(d)
    dQ = _merge_heads(dS @ K)
    dK = _merge_heads(dS.swapaxes(-1, -2) @ Q)
    dV = _merge_heads(dV)
    dX = dQ @ attn["WQ"] + dK @ attn["WK"] + dV @ attn["WV"]
    Xf = _flat(X)
    return dX, {"WQ": _flat(dQ).T @ Xf, "WK": _flat(dK).T @ Xf, "WV": _flat(dV).T @ Xf, "WO": dWO}


def global_pool(X):
    return X.mean(axis=-2), X.shape[-2]


def global_pool_backward(dy, t):
    return np.repeat(dy[..., None, :] / t, t, axis=-2)


def softplus(a):
    return np.logaddexp(0.0, a)


def alpha_from_raw(alpha_raw):
    return -softplus(alpha_raw)


def predict_head(x, W, theta, alpha_raw):
    """Per-label probability ``1 / (1 - alpha * exp(-(x W^T - theta)))``, alpha < 0."""
    z = x @ W.T - theta
    s = softplus(alpha_raw)
    # 1 / (1 + s e^-z) is the logistic function of z - log(s)
    u = z - np.log(s)
    y = np.where(u >= 0, 1.0 / (1.0 + np.exp(-np.abs(u))), np.exp(-np.abs(u)) / (1.0 + np.exp(-np.abs(u))))
    return y, (x, W, y, s, alpha_raw)


def predict_head_backward(dy, cache):
    x, W, y, s, alpha_raw = cache
    du = dy * y * (1.0 - y)
    sig_a = 1.0 / (1.0 + np.exp(-alpha_raw))
    d_alpha_raw = -(du * (sig_a / s)).reshape(-1, du.shape[-1]).sum(axis=0)
    return du @ W, _flat(du).T @ _flat(x), -_flat(du).sum(axis=0), d_alpha_raw


def bce_loss(y, y_hat):
    """Mean over labels (and batch) of the base-2 binary cross-entropy."""
    p = np.clip(y_hat, CLAMP, 1.0 - CLAMP)
    per = -(y * np.log2(p) + (1.0 - y) * np.log2(1.0 - p))
    return float(per.mean())


def bce_loss_backward(y, y_hat):
    p = np.clip(y_hat, CLAMP, 1.0 - CLAMP)
    inside = (y_hat > CLAMP) & (y_hat < 1.0 - CLAMP)
    return -(y / p - (1.0 - y) / (1.0 - p)) * inside / (y_hat.size * math.log(2.0))


# -- parameters ---------------------------------------------------------------

def param_shapes(hp: ColdHyperParams) -> list[tuple[str, tuple[int, ...]]]:
    """Every learnable tensor in declaration (= checkpoint) order."""
    q, L = hp.q, hp.n_labels
    shapes = [("W1", (q, hp.v_in)), ("theta1", (q,))]
    for j in range(hp.k):
        shapes += [(f"block{j}.Wa", (q, q)), (f"block{j}.theta_a", (q,)),
                   (f"block{j}.Wb", (q, q)), (f"block{j}.theta_b", (q,)),
                   (f"block{j}.gain", (q,)), (f"block{j}.bias", (q,))]
    shapes += [("attn.WQ", (q, q)), ("attn.WK", (q, q)), ("attn.WV", (q, q)), ("attn.WO", (q, q)),
               ("head.W", (L, q)), ("head.theta", (L,)), ("head.alpha_raw", (L,))]
    return shapes


def init_params(hp: ColdHyperParams, seed: int, dtype=np.float64) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, unit LayerNorm gain, alpha = -1."""
    rng = np.random.default_rng(seed)
    d = hp.q // hp.n_head
    params = {}
    for name, shape in param_shapes(hp):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("WQ", "WK", "WV"):
            fan_in, fan_out = hp.q, d  # per-head projection
        elif len(shape) == 2:
            fan_out, fan_in = shape
        if len(shape) == 2:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
        elif leaf == "gain":
            params[name] = np.ones(shape)
        elif leaf == "alpha_raw":
            params[name] = np.full(shape, math.log(math.e - 1.0))  # softplus^-1(1)
        else:
            params[name] = np.zeros(shape)
    return {k: v.astype(dtype) for k, v in params.items()}


def _block(params, j):
    prefix = f"block{j}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def _attn(params):
    return {k[5:]: v for k, v in params.items() if k.startswith("attn.")}


# -- whole network ------------------------------------------------------------

def cold_forward(X0, params: dict, hp: ColdHyperParams, rng=None, training: bool = False):
    """Probabilities (B, |L|) for spectrograms X0 (B, t, v) or (t, v)."""
    _check(X0.shape[-1] == hp.v_in, f"input has {X0.shape[-1]} bins, model expects {hp.v_in}")
    if training and hp.p_d > 0 and rng is None:
        raise ValueError("training with dropout needs an rng")
    X, c_1 = position_wise(X0, params["W1"], params["theta1"])
    m_1 = None
    if hp.relu_first:
        X, m_1 = relu(X)
    c_blocks = []
    for j in range(hp.k):
        X, c = rpsn(X, _block(params, j), hp.p_d, rng, training)
        c_blocks.append(c)
    X, c_att = mhsa(X, _attn(params), hp.n_head)
    x, t = global_pool(X)
    y, c_head = predict_head(x, params["head.W"], params["head.theta"], params["head.alpha_raw"])
    return y, (c_1, m_1, c_blocks, c_att, t, c_head)


def cold_backward(dy, cache) -> dict[str, np.ndarray]:
    c_1, m_1, c_blocks, c_att, t, c_head = cache
    grads = {}
    dx, grads["head.W"], grads["head.theta"], grads["head.alpha_raw"] = predict_head_backward(dy, c_head)
    dX = global_pool_backward(dx, t)
    dX, g_att = mhsa_backward(dX, c_att)
    grads.update({f"attn.{k}": v for k, v in g_att.items()})
    for j in reversed(range(len(c_blocks))):
        dX, g = rpsn_backward(dX, c_blocks[j])
        grads.update({f"block{j}.{k}": v for k, v in g.items()})
    if m_1 is not None:
        dX = relu_backward(dX, m_1)
    _, grads["W1"], grads["theta1"] = position_wise_backward(dX, c_1)
    return grads


def loss_and_grads(X0, Y, params, hp, rng=None, training: bool = False):
    """Mean batch BCE and its gradient with respect to every parameter."""
    y_hat, cache = cold_forward(X0, params, hp, rng, training)
    loss = bce_loss(Y, y_hat)
    grads = cold_backward(bce_loss_backward(Y, y_hat), cache)
    return loss, grads


def predict(X0, params, hp, batch_size: int = 256) -> np.ndarray:
    out = [cold_forward(X0[i:i + batch_size], params, hp)[0] for i in range(0, X0.shape[0], batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, hp.n_labels))


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, params: dict, hp: ColdHyperParams, seed: int, extra: dict | None = None) -> None:
    """Header (hyperparameters, seed, version) + little-endian float32 tensors in declaration order."""
    order = param_shapes(hp)
    header = {"format_version": CHECKPOINT_VERSION, "hp": asdict(hp), "seed": seed,
              "tensors": [[name, list(shape)] for name, shape in order], "extra": extra or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(blob)) + blob)
        for name, shape in order:
            arr = np.asarray(params[name])
            _check(arr.shape == shape, f"{name} has shape {arr.shape}, expected {shape}")
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float64) -> tuple[dict, ColdHyperParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    if header["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    hp = ColdHyperParams(**header["hp"])
    off = 12 + hlen
    params = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape).astype(dtype)
        off += 4 * count
    return params, hp, header
