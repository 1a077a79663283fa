"""The five neural abduction models.

All share the same input pipeline (three learned visual projections, human /
object / union) and the same head (set pooling followed by one linear layer
to |A| logits). They differ in what happens to the relation set in between.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import diffmath as dm
from ..diffmath import ParamStore
from .layers import Dense, EncoderDecoder, Mode

NEURAL_KINDS = ("mlp", "transformer", "gnned", "rbp", "biged")
MODEL_KINDS = ("rule",) + NEURAL_KINDS


@dataclass
class ModelConfig:
    model_kind: str = "gnned"
    d_model: int = 64
    n_enc: int = 1
    n_dec: int = 3
    n_heads: int = 8
    d_bilinear: int = 64
    pooling: str = "max"
    dropout: float = 0.1
    use_semantics: bool = True
    d_vis: int = 32
    ff_mult: int = 2

    def validate(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_bilinear < 1:
            raise ValueError("d_bilinear must be >= 1")
        if self.pooling not in ("max", "mean"):
            raise ValueError(f"pooling must be 'max' or 'mean', got {self.pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self

    def to_json(self):
        return asdict(self)


@dataclass(frozen=True)
class DataDims:
    d_raw: int
    d_emb: int
    n_actions: int


class AbductionModel:
    kind = None

    def __init__(self, config: ModelConfig, dims: DataDims, seed=0):
        self.config = config.validate()
        self.dims = dims
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        v = config.d_vis
        self.proj_h = Dense(self.store, "proj.human", dims.d_raw, v, rng)
        self.proj_o = Dense(self.store, "proj.object", dims.d_raw, v, rng)
        self.proj_u = Dense(self.store, "proj.union", dims.d_raw, v, rng)
        width = self._build(rng)
        self.classifier = Dense(self.store, "classifier", width, dims.n_actions, rng)
        self.store.flatten()
        self.featurizer = None
        self._inputs = {}

    @property
    def n_actions(self):
        return self.dims.n_actions

    @property
    def d_relation(self):
        return 3 * self.config.d_vis + 2 * self.dims.d_emb

    @property
    def d_ff(self):
        return self.config.ff_mult * self.config.d_model

    def _build(self, rng):
        raise NotImplementedError

    def _body(self, xh, xo, xu, inp, mode):
        raise NotImplementedError

    def _body_backward(self, drows, cache):
        raise NotImplementedError

    def forward(self, inp, train=False, rng=None):
        """Logits (length |A|) for one relation set, plus the backward cache."""
        if inp.n == 0:
            raise dm.EmptySetError("a snapshot needs at least one relation")
        mode = Mode(train, rng, self.config.dropout)
        xh, ch = self.proj_h.forward(inp.human)
        xo, co = self.proj_o.forward(inp.objects)
        xu, cu = self.proj_u.forward(inp.unions)
        rows, cb = self._body(xh, xo, xu, inp, mode)
        pooled, cp = dm.pool(rows, self.config.pooling)
        logits, cc = self.classifier.forward(pooled)
        return logits[0], {"proj": (ch, co, cu), "body": cb, "pool": cp, "cls": cc, "rows": rows}

    def backward(self, dlogits, cache):
        dpooled = self.classifier.backward(np.asarray(dlogits).reshape(1, -1), cache["cls"])
        drows = dm.pool_backward(dpooled, cache["pool"], self.config.pooling)
        dxh, dxo, dxu = self._body_backward(drows, cache["body"])
        ch, co, cu = cache["proj"]
        self.proj_h.backward(dxh, ch)
        self.proj_o.backward(dxo, co)
        self.proj_u.backward(dxu, cu)

    # scoring -----------------------------------------------------------------

    def inputs_for(self, example):
        key = (example.video_id, example.snapshot_index)
        if key not in self._inputs:
            if self.featurizer is None:
                raise RuntimeError("attach a featurizer before scoring examples")
            self._inputs[key] = self.featurizer.inputs(example.snapshot, self.config.use_semantics)
        return self._inputs[key]

    def score(self, example):
        return self.forward(self.inputs_for(example))[0]


def relation_matrix(xh, xo, xu, inp):
    """Rows r = [x_h, x_o, x_u, y_h, y_o], one per relation."""
    n = xo.shape[0]
    return np.concatenate(
        [np.repeat(xh, n, axis=0), xo, xu, np.repeat(inp.human_emb, n, axis=0), inp.object_emb],
        axis=1,
    )


def split_relation_grad(dr, v):
    return dr[:, :v].sum(axis=0, keepdims=True), dr[:, v:2 * v], dr[:, 2 * v:3 * v]


class MLPModel(AbductionModel):
    """Per-relation linear -> ReLU -> dropout -> linear, pooled."""

    kind = "mlp"

    def _build(self, rng):
        d = self.config.d_model
        self.l1 = Dense(self.store, "mlp.l1", self.d_relation, d, rng)
        self.l2 = Dense(self.store, "mlp.l2", d, d, rng)
        return d

    def _body(self, xh, xo, xu, inp, mode):
        h, c1 = self.l1.forward(relation_matrix(xh, xo, xu, inp))
        a, mask = dm.relu(h)
        a, dmask = mode.drop(a)
        y, c2 = self.l2.forward(a)
        return y, (c1, mask, dmask, c2)

    def _body_backward(self, drows, cache):
        c1, mask, dmask, c2 = cache
        da = dm.dropout_backward(self.l2.backward(drows, c2), dmask)
        dr = self.l1.backward(dm.relu_backward(da, mask), c1)
        return split_relation_grad(dr, self.config.d_vis)


class _SetEncoderModel(AbductionModel):
    mixer = None

    def _build(self, rng):
        c = self.config
        self.net = EncoderDecoder(self.store, self.kind, self.d_relation, c.d_model, c.n_enc,
                                  c.n_dec, self.d_ff, rng, self.mixer, c.n_heads)
        return c.d_model

    def _body(self, xh, xo, xu, inp, mode):
        return self.net.forward(relation_matrix(xh, xo, xu, inp), mode)

    def _body_backward(self, drows, cache):
        return split_relation_grad(self.net.backward(drows, cache), self.config.d_vis)


class TransformerModel(_SetEncoderModel):
    """Multi-head attention encoder-decoder, no positional encoding."""

    kind = "transformer"
    mixer = "attention"

    def attention_maps(self, cache):
        return self.net.attention_maps(cache["body"])


class GNNEDModel(_SetEncoderModel):
    """Graph encoder-decoder: attention replaced by the Jaccard graph module."""

    kind = "gnned"
    mixer = "graph"


def _with_semantics(x, emb):
    return np.concatenate([x, emb], axis=1)


class _BilinearHead:
    """r_b = ReLU([h' W_b o' ; [h'; o'] W_bl + b_bl]) W_jb + b_jb, with dropout
    on the ReLU output."""

    def __init__(self, store, prefix, d_b, d_out, rng):
        self.w_b = store.add(f"{prefix}.W_b", rng.normal(0.0, 1.0 / d_b, (d_b, d_b, d_b)))
        self.lin = Dense(store, f"{prefix}.bl", 2 * d_b, d_b, rng)
        self.joint = Dense(store, f"{prefix}.jb", 2 * d_b, d_out, rng)
        self.d_b = d_b

    def forward(self, hp, op, mode):
        n = op.shape[0]
        bil, cb = dm.bilinear_form(hp, self.w_b, op)
        lin, cl = self.lin.forward(np.concatenate([np.repeat(hp, n, axis=0), op], axis=1))
        z, mask = dm.relu(np.concatenate([bil, lin], axis=1))
        z, dmask = mode.drop(z)
        rb, cj = self.joint.forward(z)
        return rb, (cb, cl, mask, dmask, cj)

    def backward(self, drb, cache):
        cb, cl, mask, dmask, cj = cache
        dz = dm.dropout_backward(self.joint.backward(drb, cj), dmask)
        dz = dm.relu_backward(dz, mask)
        d = self.d_b
        dh1, do1 = dm.bilinear_form_backward(np.ascontiguousarray(dz[:, :d]), cb)
        dcat = self.lin.backward(dz[:, d:], cl)
        dh = dh1 + dcat[:, :d].sum(axis=0, keepdims=True)
        do = do1 + dcat[:, d:]
        return dh, do


class RBPModel(AbductionModel):
    """Relational bilinear pooling over (human, object) pairs; [r_b; x_u] pooled."""

    kind = "rbp"

    def _build(self, rng):
        c = self.config
        d_in = c.d_vis + self.dims.d_emb
        self.obj = Dense(self.store, "rbp.o", d_in, c.d_bilinear, rng)
        self.hum = Dense(self.store, "rbp.h", d_in, c.d_bilinear, rng)
        self.head = _BilinearHead(self.store, "rbp", c.d_bilinear, c.d_model, rng)
        return c.d_model + c.d_vis

    def _body(self, xh, xo, xu, inp, mode):
        po, c_o = self.obj.forward(_with_semantics(xo, inp.object_emb))
        op, mo = dm.relu(po)
        ph, c_h = self.hum.forward(_with_semantics(xh, inp.human_emb))
        hp, mh = dm.relu(ph)
        rb, chd = self.head.forward(hp, op, mode)
        return np.concatenate([rb, xu], axis=1), (c_o, mo, c_h, mh, chd)

    def _body_backward(self, drows, cache):
        c_o, mo, c_h, mh, chd = cache
        d = self.config.d_model
        v = self.config.d_vis
        dhp, dop = self.head.backward(drows[:, :d], chd)
        dxo = self.obj.backward(dm.relu_backward(dop, mo), c_o)[:, :v]
        dxh = self.hum.backward(dm.relu_backward(dhp, mh), c_h)[:, :v]
        return dxh, dxo, drows[:, d:]


class BiGEDModel(AbductionModel):
    """Bilinear graph encoder-decoder.

    Branch A replaces the object projection with a graph encoder-decoder over
    the object set and feeds it to the bilinear head; branch B runs a second
    graph encoder-decoder over joint [x_h; x_o] rows. Rows are
    [r_b; G_B; x_u].
    """

    kind = "biged"

    def _build(self, rng):
        c = self.config
        d_in = c.d_vis + self.dims.d_emb
        d_b = c.d_bilinear
        self.obj_net = EncoderDecoder(self.store, "biged.obj", d_in, d_b, c.n_enc, c.n_dec,
                                      c.ff_mult * d_b, rng, "graph")
        self.hum = Dense(self.store, "biged.h", d_in, d_b, rng)
        self.head = _BilinearHead(self.store, "biged", d_b, c.d_model, rng)
        self.joint_net = EncoderDecoder(self.store, "biged.joint", 2 * d_in, c.d_model, c.n_enc,
                                        c.n_dec, self.d_ff, rng, "graph")
        return 2 * c.d_model + c.d_vis

    def _body(self, xh, xo, xu, inp, mode):
        n = xo.shape[0]
        hs = _with_semantics(xh, inp.human_emb)
        os_ = _with_semantics(xo, inp.object_emb)
        op, c_obj = self.obj_net.forward(os_, mode)
        ph, c_h = self.hum.forward(hs)
        hp, mh = dm.relu(ph)
        rb, chd = self.head.forward(hp, op, mode)
        gb, c_joint = self.joint_net.forward(np.concatenate([np.repeat(hs, n, axis=0), os_], axis=1), mode)
        return np.concatenate([rb, gb, xu], axis=1), (c_obj, c_h, mh, chd, c_joint)

    def _body_backward(self, drows, cache):
        c_obj, c_h, mh, chd, c_joint = cache
        d = self.config.d_model
        v = self.config.d_vis
        d_in = v + self.dims.d_emb
        dhp, dop = self.head.backward(drows[:, :d], chd)
        dos = self.obj_net.backward(dop, c_obj)
        dhs = self.hum.backward(dm.relu_backward(dhp, mh), c_h)
        djoint = self.joint_net.backward(drows[:, d:2 * d], c_joint)
        dhs = dhs + djoint[:, :d_in].sum(axis=0, keepdims=True)
        dos = dos + djoint[:, d_in:]
        return dhs[:, :v], dos[:, :v], drows[:, 2 * d:]


MODEL_CLASSES = {
    "mlp": MLPModel,
    "transformer": TransformerModel,
    "gnned": GNNEDModel,
    "rbp": RBPModel,
    "biged": BiGEDModel,
}


def build_model(config: ModelConfig, dims: DataDims, seed=0) -> AbductionModel:
    try:
        cls = MODEL_CLASSES[config.model_kind]
    except KeyError:
        raise ValueError(f"{config.model_kind!r} is not a neural model kind") from None
    return cls(config, dims, seed)


def expected_param_count(config: ModelConfig, dims: DataDims) -> int:
    """Closed-form parameter count (see the README for the formulas)."""
    c, D, e, K = config, dims.d_raw, dims.d_emb, dims.n_actions
    v, d, b, f = c.d_vis, c.d_model, c.d_bilinear, c.ff_mult
    r = 3 * v + 2 * e

    def lin(i, o):
        return i * o + o

    def ffn(w):
        return lin(w, f * w) + lin(f * w, w)

    def attn(w):
        return 3 * lin(w, w) + w * w

    def graph(w):
        return 2 * lin(w, w)

    def stack(d_in, w, mixer):
        enc = (attn(w) if mixer == "attention" else graph(w)) + ffn(w) + 4 * w
        dec = (2 * attn(w) if mixer == "attention" else 2 * graph(w)) + ffn(w) + 6 * w
        return lin(d_in, w) + c.n_enc * enc + c.n_dec * dec

    def bilinear_head():
        return b**3 + lin(2 * b, b) + lin(2 * b, d)

    total = 3 * lin(D, v)
    kind = c.model_kind
    if kind == "mlp":
        total += lin(r, d) + lin(d, d) + lin(d, K)
    elif kind == "transformer":
        total += stack(r, d, "attention") + lin(d, K)
    elif kind == "gnned":
        total += stack(r, d, "graph") + lin(d, K)
    elif kind == "rbp":
        total += 2 * lin(v + e, b) + bilinear_head() + lin(d + v, K)
    elif kind == "biged":
        total += (stack(v + e, b, "graph") + lin(v + e, b) + bilinear_head()
                  + stack(2 * (v + e), d, "graph") + lin(2 * d + v, K))
    else:
        raise ValueError(kind)
    return total
