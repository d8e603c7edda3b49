"""Forward passes for the three forecasting architectures.

All three models map a window of normalized feature rows to one scalar: the
next hour's normalized load.

* recurrent net: h_t = tanh(x_t U + h_{t-1} W + b_h), read out through a
  linear layer after the last step
* LSTM: sigmoid input/forget/output gates over the concatenated
  [h_{t-1}, x_t], tanh candidate, the usual cell update, linear head on the
  final hidden state
* transformer encoder: linear embedding plus a learned per-position table,
  then blocks of single-head self-attention (cosine-similarity scores by
  default) and a relu MLP, each with residual + layer norm, read out from
  the last position

Inference entry points take and return plain numpy arrays. The ``*_predict``
graph builders are shared with the training module so the differentiated
function is the same code that serves predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import numcore
from .errors import DataError, DimensionError
from .numcore import Rng

ARCHITECTURES = ("rnn", "lstm", "transformer")
ATTENTION_KERNELS = ("cosine", "scaled_dot")

LAYER_NORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class RnnParams:
    u: np.ndarray  # feature_dim x hidden
    w: np.ndarray  # hidden x hidden
    v: np.ndarray  # hidden x 1, the output head
    b_h: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.w.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.u.shape[0]


@dataclass
class LstmParams:
    """Gate matrices act on the concatenated [h_prev, x_t], so each has
    hidden_dim rows and hidden_dim + feature_dim columns."""

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_c: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray
    head_w: np.ndarray  # hidden x 1
    head_b: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.w_i.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w_i.shape[1] - self.w_i.shape[0]


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmState":
        return cls(h=np.zeros(hidden_dim), c=np.zeros(hidden_dim))


@dataclass
class BlockParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class TransformerParams:
    embed_w: np.ndarray  # feature_dim x d_model
    embed_b: np.ndarray
    pos_table: np.ndarray  # window x d_model, learned
    blocks: list[BlockParams]
    head_w: np.ndarray  # d_model x 1
    head_b: np.ndarray
    kernel: str = "cosine"
    use_residual_norm: bool = True

    @property
    def window(self) -> int:
        return self.pos_table.shape[0]

    @property
    def d_model(self) -> int:
        return self.embed_w.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.embed_w.shape[0]


ModelParams = RnnParams | LstmParams | TransformerParams


@dataclass
class AttentionInputs:
    """Queries, keys, and values for one attention application."""

    q: np.ndarray  # n_q x d
    k: np.ndarray  # n_k x d
    v: np.ndarray  # n_k x d_v

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.k = np.asarray(self.k, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.q.ndim != 2 or self.k.ndim != 2 or self.v.ndim != 2:
            raise DimensionError("attention inputs must be 2-d matrices")
        if self.q.shape[1] != self.k.shape[1]:
            raise DimensionError(
                f"queries and keys disagree on width: {self.q.shape} vs {self.k.shape}"
            )
        if self.k.shape[0] != self.v.shape[0]:
            raise DimensionError(
                f"keys and values disagree on count: {self.k.shape} vs {self.v.shape}"
            )


# ---------------------------------------------------------------------------
# dimension maps and initialization


def default_dims(arch: str, feature_dim: int, window: int = 6) -> dict:
    """Desk-scale dimensions; small enough to train in seconds on a few
    hundred samples."""
    base = {"feature_dim": int(feature_dim), "window": int(window)}
    if arch in ("rnn", "lstm"):
        return base | {"hidden_dim": 32}
    if arch == "transformer":
        return base | {
            "d_model": 32,
            "d_attn": 32,
            "blocks": 2,
            "mlp_hidden": 64,
            "kernel": "cosine",
            "use_residual_norm": True,
        }
    raise ValueError(f"unknown architecture {arch!r}, expected one of {ARCHITECTURES}")


def _check_positive_dims(arch: str, dims: dict) -> None:
    for key, value in dims.items():
        if key in ("kernel", "use_residual_norm"):
            continue
        if int(value) <= 0:
            raise DimensionError(f"{arch} dimension {key} must be positive, got {value}")


def tensor_shapes(arch: str, dims: dict) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map. The iteration order fixes both the
    initialization draw order and the checkpoint layout."""
    f = int(dims["feature_dim"])
    if arch == "rnn":
        h = int(dims["hidden_dim"])
        return {
            "u": (f, h),
            "w": (h, h),
            "b_h": (h,),
            "head.w": (h, 1),
            "head.b": (1,),
        }
    if arch == "lstm":
        h = int(dims["hidden_dim"])
        gate = (h, h + f)
        return {
            "w_i": gate,
            "w_f": gate,
            "w_o": gate,
            "w_c": gate,
            "b_i": (h,),
            "b_f": (h,),
            "b_o": (h,),
            "b_c": (h,),
            "head.w": (h, 1),
            "head.b": (1,),
        }
    if arch == "transformer":
        L = int(dims["window"])
        d = int(dims["d_model"])
        da = int(dims["d_attn"])
        m = int(dims["mlp_hidden"])
        shapes: dict[str, tuple[int, ...]] = {
            "embed.w": (f, d),
            "embed.b": (d,),
            "pos_table": (L, d),
        }
        for i in range(int(dims["blocks"])):
            p = f"blocks.{i}."
            shapes[p + "wq"] = (d, da)
            shapes[p + "wk"] = (d, da)
            shapes[p + "wv"] = (d, da)
            shapes[p + "wo"] = (da, d)
            shapes[p + "mlp_w1"] = (d, m)
            shapes[p + "mlp_b1"] = (m,)
            shapes[p + "mlp_w2"] = (m, d)
            shapes[p + "mlp_b2"] = (d,)
            shapes[p + "ln1_gain"] = (d,)
            shapes[p + "ln1_bias"] = (d,)
            shapes[p + "ln2_gain"] = (d,)
            shapes[p + "ln2_bias"] = (d,)
        shapes["head.w"] = (d, 1)
        shapes["head.b"] = (1,)
        return shapes
    raise ValueError(f"unknown architecture {arch!r}, expected one of {ARCHITECTURES}")


def init_params(arch: str, dims: dict, rng: Rng) -> ModelParams:
    """Glorot-uniform weight matrices (limit sqrt(6/(fan_in+fan_out))),
    zero biases, LSTM forget-gate bias of one, unit layer-norm gains.

    Only 2-d tensors consume random draws, in the canonical
    :func:`tensor_shapes` order, so equal seeds give bit-identical
    parameters.
    """
    _check_positive_dims(arch, dims)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(arch, dims).items():
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform_array(shape, -limit, limit)
        elif name == "b_f" or name.endswith("gain"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return tensors_to_params(arch, dims, tensors)


def params_to_tensors(params: ModelParams) -> dict[str, np.ndarray]:
    """Flatten a parameter container into the canonical named-tensor map."""
    if isinstance(params, RnnParams):
        return {
            "u": params.u,
            "w": params.w,
            "b_h": params.b_h,
            "head.w": params.v,
            "head.b": params.b_o,
        }
    if isinstance(params, LstmParams):
        return {
            "w_i": params.w_i,
            "w_f": params.w_f,
            "w_o": params.w_o,
            "w_c": params.w_c,
            "b_i": params.b_i,
            "b_f": params.b_f,
            "b_o": params.b_o,
            "b_c": params.b_c,
            "head.w": params.head_w,
            "head.b": params.head_b,
        }
    if isinstance(params, TransformerParams):
        tensors = {
            "embed.w": params.embed_w,
            "embed.b": params.embed_b,
            "pos_table": params.pos_table,
        }
        for i, blk in enumerate(params.blocks):
            p = f"blocks.{i}."
            tensors[p + "wq"] = blk.wq
            tensors[p + "wk"] = blk.wk
            tensors[p + "wv"] = blk.wv
            tensors[p + "wo"] = blk.wo
            tensors[p + "mlp_w1"] = blk.mlp_w1
            tensors[p + "mlp_b1"] = blk.mlp_b1
            tensors[p + "mlp_w2"] = blk.mlp_w2
            tensors[p + "mlp_b2"] = blk.mlp_b2
            tensors[p + "ln1_gain"] = blk.ln1_gain
            tensors[p + "ln1_bias"] = blk.ln1_bias
            tensors[p + "ln2_gain"] = blk.ln2_gain
            tensors[p + "ln2_bias"] = blk.ln2_bias
        tensors["head.w"] = params.head_w
        tensors["head.b"] = params.head_b
        return tensors
    raise TypeError(f"unsupported parameter container {type(params).__name__}")


def arch_of(params: ModelParams) -> str:
    if isinstance(params, RnnParams):
        return "rnn"
    if isinstance(params, LstmParams):
        return "lstm"
    if isinstance(params, TransformerParams):
        return "transformer"
    raise TypeError(f"unsupported parameter container {type(params).__name__}")


def dims_of(params: ModelParams) -> dict:
    """Recover the dimension map (including forward-pass switches) from a
    parameter container."""
    # recurrent containers carry no window key: they accept any length
    if isinstance(params, RnnParams):
        return {"feature_dim": params.feature_dim, "hidden_dim": params.hidden_dim}
    if isinstance(params, LstmParams):
        return {"feature_dim": params.feature_dim, "hidden_dim": params.hidden_dim}
    if isinstance(params, TransformerParams):
        return {
            "feature_dim": params.feature_dim,
            "window": params.window,
            "d_model": params.d_model,
            "d_attn": params.blocks[0].wq.shape[1],
            "blocks": len(params.blocks),
            "mlp_hidden": params.blocks[0].mlp_w1.shape[1],
            "kernel": params.kernel,
            "use_residual_norm": params.use_residual_norm,
        }
    raise TypeError(f"unsupported parameter container {type(params).__name__}")


def tensors_to_params(arch: str, dims: dict, tensors: dict[str, np.ndarray]) -> ModelParams:
    """Rebuild a parameter container from named tensors, validating shapes."""
    expected = tensor_shapes(arch, dims)
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise DimensionError(f"missing tensors for {arch}: {', '.join(missing)}")
    clean: dict[str, np.ndarray] = {}
    for name, shape in expected.items():
        t = np.asarray(tensors[name], dtype=np.float64)
        if t.shape != shape:
            raise DimensionError(f"tensor {name} has shape {t.shape}, expected {shape}")
        clean[name] = t
    if arch == "rnn":
        return RnnParams(
            u=clean["u"], w=clean["w"], v=clean["head.w"], b_h=clean["b_h"], b_o=clean["head.b"]
        )
    if arch == "lstm":
        return LstmParams(
            w_i=clean["w_i"],
            w_f=clean["w_f"],
            w_o=clean["w_o"],
            w_c=clean["w_c"],
            b_i=clean["b_i"],
            b_f=clean["b_f"],
            b_o=clean["b_o"],
            b_c=clean["b_c"],
            head_w=clean["head.w"],
            head_b=clean["head.b"],
        )
    blocks = []
    for i in range(int(dims["blocks"])):
        p = f"blocks.{i}."
        blocks.append(
            BlockParams(
                wq=clean[p + "wq"],
                wk=clean[p + "wk"],
                wv=clean[p + "wv"],
                wo=clean[p + "wo"],
                mlp_w1=clean[p + "mlp_w1"],
                mlp_b1=clean[p + "mlp_b1"],
                mlp_w2=clean[p + "mlp_w2"],
                mlp_b2=clean[p + "mlp_b2"],
                ln1_gain=clean[p + "ln1_gain"],
                ln1_bias=clean[p + "ln1_bias"],
                ln2_gain=clean[p + "ln2_gain"],
                ln2_bias=clean[p + "ln2_bias"],
            )
        )
    kernel = str(dims.get("kernel", "cosine"))
    if kernel not in ATTENTION_KERNELS:
        raise ValueError(f"unknown attention kernel {kernel!r}")
    return TransformerParams(
        embed_w=clean["embed.w"],
        embed_b=clean["embed.b"],
        pos_table=clean["pos_table"],
        blocks=blocks,
        head_w=clean["head.w"],
        head_b=clean["head.b"],
        kernel=kernel,
        use_residual_norm=bool(dims.get("use_residual_norm", True)),
    )


# ---------------------------------------------------------------------------
# single-step recurrent operations


def rnn_step(x_t: np.ndarray, h_prev: np.ndarray, p: RnnParams) -> tuple[np.ndarray, np.ndarray]:
    """One recurrent step: returns (h_t, o_t)."""
    x_t = np.asarray(x_t, dtype=np.float64).reshape(1, -1)
    h_prev = np.asarray(h_prev, dtype=np.float64).reshape(1, -1)
    h_t = numcore.tanh(numcore.matmul(x_t, p.u) + numcore.matmul(h_prev, p.w) + p.b_h)
    o_t = numcore.matmul(h_t, p.v) + p.b_o
    return h_t[0], o_t[0]


def lstm_step(x_t: np.ndarray, state: LstmState, p: LstmParams) -> LstmState:
    """One LSTM step: sigmoid gates over [h_prev, x_t], cell update,
    tanh-squashed hidden output."""
    x_t = np.asarray(x_t, dtype=np.float64)
    z = np.concatenate([state.h, x_t]).reshape(1, -1)
    i = numcore.sigmoid(numcore.matmul(z, p.w_i.T) + p.b_i)[0]
    f = numcore.sigmoid(numcore.matmul(z, p.w_f.T) + p.b_f)[0]
    o = numcore.sigmoid(numcore.matmul(z, p.w_o.T) + p.b_o)[0]
    g = numcore.tanh(numcore.matmul(z, p.w_c.T) + p.b_c)[0]
    c_t = f * state.c + i * g
    h_t = o * numcore.tanh(c_t)
    return LstmState(h=h_t, c=c_t)


# ---------------------------------------------------------------------------
# attention


def _attention_graph(q: ad.Node, k: ad.Node, v: ad.Node, kernel: str) -> tuple[ad.Node, ad.Node]:
    """Shared scoring/weighting/summation pipeline; q, k may be 2-d or
    batched 3-d as long as shapes line up for the product ops."""
    batched = q.value.ndim == 3
    mm = ad.bmm if batched else ad.matmul
    tr = ad.swap_last_axes if batched else ad.transpose
    if kernel == "cosine":
        qn = ad.mul(q, ad.inv_norm_last(q))
        kn = ad.mul(k, ad.inv_norm_last(k))
        scores = mm(qn, tr(kn))
    elif kernel == "scaled_dot":
        scores = ad.scale(mm(q, tr(k)), 1.0 / np.sqrt(q.value.shape[-1]))
    else:
        raise ValueError(f"unknown attention kernel {kernel!r}")
    weights = ad.softmax_last(scores)
    context = mm(weights, v)
    return context, weights


def attention(inp: AttentionInputs, kernel: str = "cosine") -> tuple[np.ndarray, np.ndarray]:
    """Score queries against keys, soften scores into per-query weights, and
    return (weighted value sums, weights).

    The cosine kernel normalizes each query and key row, so it is invariant
    to positive rescaling of individual rows; zero-norm rows score 0 against
    everything.
    """
    context, weights = _attention_graph(
        ad.constant(inp.q), ad.constant(inp.k), ad.constant(inp.v), kernel
    )
    return context.value, weights.value


# ---------------------------------------------------------------------------
# whole-window graph builders (shared between inference and training)


def rnn_predict(t: dict[str, ad.Node], x: np.ndarray) -> ad.Node:
    """Prediction node for a (batch, window, features) array."""
    batch, window, _ = x.shape
    h = ad.constant(np.zeros((batch, t["w"].value.shape[0])))
    for step in range(window):
        x_t = ad.constant(x[:, step, :])
        pre = ad.add(ad.add(ad.matmul(x_t, t["u"]), ad.matmul(h, t["w"])), t["b_h"])
        h = ad.tanh(pre)
    return ad.add(ad.matmul(h, t["head.w"]), t["head.b"])


def lstm_predict(t: dict[str, ad.Node], x: np.ndarray) -> ad.Node:
    batch, window, _ = x.shape
    hidden = t["w_i"].value.shape[0]
    h = ad.constant(np.zeros((batch, hidden)))
    c = ad.constant(np.zeros((batch, hidden)))
    w_i, w_f = ad.transpose(t["w_i"]), ad.transpose(t["w_f"])
    w_o, w_c = ad.transpose(t["w_o"]), ad.transpose(t["w_c"])
    for step in range(window):
        z = ad.concat_cols(h, ad.constant(x[:, step, :]))
        i = ad.sigmoid(ad.add(ad.matmul(z, w_i), t["b_i"]))
        f = ad.sigmoid(ad.add(ad.matmul(z, w_f), t["b_f"]))
        o = ad.sigmoid(ad.add(ad.matmul(z, w_o), t["b_o"]))
        g = ad.tanh(ad.add(ad.matmul(z, w_c), t["b_c"]))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
    return ad.add(ad.matmul(h, t["head.w"]), t["head.b"])


def _layer_norm(h: ad.Node, gain: ad.Node, bias: ad.Node) -> ad.Node:
    mu = ad.mean_last(h)
    centered = ad.sub(h, mu)
    var = ad.mean_last(ad.mul(centered, centered))
    inv = ad.pow_scalar(ad.add(var, ad.constant(LAYER_NORM_EPS)), -0.5)
    return ad.add(ad.mul(ad.mul(centered, inv), gain), bias)


def transformer_predict(
    t: dict[str, ad.Node], x: np.ndarray, n_blocks: int, kernel: str, use_residual_norm: bool
) -> ad.Node:
    batch, window, feat = x.shape
    pos = t["pos_table"]
    if pos.value.shape[0] != window:
        raise DimensionError(
            f"window length {window} does not match positional table rows {pos.value.shape[0]}"
        )
    d_model = t["embed.w"].value.shape[1]
    flat = ad.constant(x.reshape(batch * window, feat))
    e = ad.add(ad.matmul(flat, t["embed.w"]), t["embed.b"])
    h = ad.add(ad.reshape(e, (batch, window, d_model)), pos)
    for i in range(n_blocks):
        p = f"blocks.{i}."
        h2d = ad.reshape(h, (batch * window, d_model))
        q = ad.reshape(ad.matmul(h2d, t[p + "wq"]), (batch, window, -1))
        k = ad.reshape(ad.matmul(h2d, t[p + "wk"]), (batch, window, -1))
        v = ad.reshape(ad.matmul(h2d, t[p + "wv"]), (batch, window, -1))
        context, _ = _attention_graph(q, k, v, kernel)
        ctx2d = ad.reshape(context, (batch * window, -1))
        attn_out = ad.reshape(ad.matmul(ctx2d, t[p + "wo"]), (batch, window, d_model))
        if use_residual_norm:
            h = _layer_norm(ad.add(h, attn_out), t[p + "ln1_gain"], t[p + "ln1_bias"])
        else:
            h = attn_out
        h2d = ad.reshape(h, (batch * window, d_model))
        hidden = ad.relu(ad.add(ad.matmul(h2d, t[p + "mlp_w1"]), t[p + "mlp_b1"]))
        mlp_out = ad.reshape(
            ad.add(ad.matmul(hidden, t[p + "mlp_w2"]), t[p + "mlp_b2"]),
            (batch, window, d_model),
        )
        if use_residual_norm:
            h = _layer_norm(ad.add(h, mlp_out), t[p + "ln2_gain"], t[p + "ln2_bias"])
        else:
            h = mlp_out
    last = ad.take_position(h, window - 1)
    return ad.add(ad.matmul(last, t["head.w"]), t["head.b"])


def build_prediction(params: ModelParams, nodes: dict[str, ad.Node], x: np.ndarray) -> ad.Node:
    """Dispatch to the architecture's graph builder; x is (batch, window,
    features), the result node is (batch, 1)."""
    if x.ndim != 3:
        raise DimensionError(f"expected a (batch, window, features) array, got {x.shape}")
    if isinstance(params, RnnParams):
        return rnn_predict(nodes, x)
    if isinstance(params, LstmParams):
        return lstm_predict(nodes, x)
    if isinstance(params, TransformerParams):
        return transformer_predict(
            nodes, x, len(params.blocks), params.kernel, params.use_residual_norm
        )
    raise TypeError(f"unsupported parameter container {type(params).__name__}")


def _constant_nodes(params: ModelParams) -> dict[str, ad.Node]:
    return {name: ad.constant(v) for name, v in params_to_tensors(params).items()}


def transformer_forward(window: np.ndarray, p: TransformerParams) -> float:
    """Scalar prediction for one (window, features) input."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise DimensionError(f"expected a 2-d window, got shape {window.shape}")
    out = build_prediction(p, _constant_nodes(p), window[np.newaxis])
    return float(out.value[0, 0])


def predict_batch(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Predictions for a stacked (n, window, features) array, teacher-forced
    (each window independent)."""
    out = build_prediction(params, _constant_nodes(params), np.asarray(x, dtype=np.float64))
    return out.value[:, 0]


def forecast_sequence(params: ModelParams, windows) -> np.ndarray:
    """One prediction per window sample; stateless across windows."""
    if len(windows) == 0:
        raise DataError("no windows to forecast")
    x = np.stack([np.asarray(w.inputs, dtype=np.float64) for w in windows])
    return predict_batch(params, x)
