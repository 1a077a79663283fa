"""Building blocks with explicit backward passes.

Blocks register their parameters in a :class:`ParamStore` under a dotted
prefix. ``forward`` returns ``(out, cache)``; ``backward`` consumes the cache,
accumulates parameter gradients and returns input gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffmath as dm


@dataclass
class Mode:
    train: bool = False
    rng: np.random.Generator = None
    dropout: float = dm.DEFAULT_DROPOUT

    def drop(self, x):
        if not self.train:
            return x, None
        return dm.dropout(x, self.dropout, True, self.rng)


EVAL = Mode()


class Dense:
    def __init__(self, store, name, d_in, d_out, rng, bias=True):
        self.w = store.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_out)))
        self.b = store.add(f"{name}.b", np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x):
        if self.b is not None:
            return dm.linear(x, self.w, self.b)
        return x @ self.w.value, x

    def backward(self, dout, cache):
        if self.b is not None:
            return dm.linear_backward(dout, cache)
        self.w.grad += cache.T @ dout
        return dout @ self.w.value.T


class LayerNorm:
    def __init__(self, store, name, d):
        self.gain = store.add(f"{name}.gain", np.ones(d))
        self.shift = store.add(f"{name}.shift", np.zeros(d))

    def forward(self, x):
        return dm.layer_norm(x, self.gain, self.shift)

    def backward(self, dout, cache):
        return dm.layer_norm_backward(dout, cache)


class FeedForward:
    def __init__(self, store, name, d, d_ff, rng):
        self.l1 = Dense(store, f"{name}.l1", d, d_ff, rng)
        self.l2 = Dense(store, f"{name}.l2", d_ff, d, rng)

    def forward(self, x):
        h, c1 = self.l1.forward(x)
        a, mask = dm.relu(h)
        y, c2 = self.l2.forward(a)
        return y, (c1, mask, c2)

    def backward(self, dy, cache):
        c1, mask, c2 = cache
        return self.l1.backward(dm.relu_backward(self.l2.backward(dy, c2), mask), c1)


class MultiHeadAttention:
    """Scaled dot-product attention. The key projection has no bias: a key
    bias only adds a per-row constant to the scores, which softmax ignores."""

    def __init__(self, store, name, d, n_heads, rng):
        if d % n_heads:
            raise ValueError(f"d_model={d} not divisible by n_heads={n_heads}")
        self.q = Dense(store, f"{name}.q", d, d, rng)
        self.k = Dense(store, f"{name}.k", d, d, rng, bias=False)
        self.v = Dense(store, f"{name}.v", d, d, rng)
        self.o = Dense(store, f"{name}.o", d, d, rng)
        self.h = n_heads
        self.dh = d // n_heads

    def _split(self, x):
        return x.reshape(x.shape[0], self.h, self.dh).transpose(1, 0, 2)

    def forward(self, xq, xkv):
        q, cq = self.q.forward(xq)
        k, ck = self.k.forward(xkv)
        v, cv = self.v.forward(xkv)
        Q, K, V = self._split(q), self._split(k), self._split(v)
        scale = 1.0 / np.sqrt(self.dh)
        s = (Q @ K.transpose(0, 2, 1)) * scale  # h x n x m
        hn, n, m = s.shape
        a, _ = dm.softmax_rows(s.reshape(hn * n, m))
        a = a.reshape(hn, n, m)
        ctx = (a @ V).transpose(1, 0, 2).reshape(n, -1)
        out, co = self.o.forward(ctx)
        return out, (cq, ck, cv, Q, K, V, a, co, scale)

    def backward(self, dout, cache):
        cq, ck, cv, Q, K, V, a, co, scale = cache
        dctx = self.o.backward(dout, co)
        dC = self._split(dctx)
        da = dC @ V.transpose(0, 2, 1)
        dV = a.transpose(0, 2, 1) @ dC
        hn, n, m = a.shape
        ds = dm.softmax_rows_backward(da.reshape(hn * n, m), a.reshape(hn * n, m)).reshape(hn, n, m)
        ds *= scale
        dQ = ds @ K
        dK = ds.transpose(0, 2, 1) @ Q

        def merge(t):
            return t.transpose(1, 0, 2).reshape(t.shape[1], -1)

        dxq = self.q.backward(merge(dQ), cq)
        dxkv = self.k.backward(merge(dK), ck) + self.v.backward(merge(dV), cv)
        return dxq, dxkv


class GraphModule:
    """Project, build the Jaccard affinity, mix rows, project and rectify:
    G = ReLU((W_A R') W_g + b_g) with R' = R W_l + b_l."""

    def __init__(self, store, name, d_in, d_out, rng):
        self.proj = Dense(store, f"{name}.l", d_in, d_out, rng)
        self.out = Dense(store, f"{name}.g", d_out, d_out, rng)

    def forward(self, x):
        rp, c1 = self.proj.forward(x)
        wa, ca = dm.jaccard_affinity(rp)
        mixed = wa @ rp
        pre, c2 = self.out.forward(mixed)
        g, mask = dm.relu(pre)
        return g, (c1, rp, wa, ca, c2, mask)

    def backward(self, dg, cache):
        c1, rp, wa, ca, c2, mask = cache
        dmixed = self.out.backward(dm.relu_backward(dg, mask), c2)
        drp = wa.T @ dmixed + dm.jaccard_affinity_backward(dmixed @ rp.T, ca)
        return self.proj.backward(drp, c1)


class CrossGraphModule:
    """Decoder-to-encoder mixing: affinity JVS(dec_i, enc_j) on shared
    projections, then ReLU((W (E W_l + b_l)) W_g + b_g)."""

    def __init__(self, store, name, d, rng):
        self.proj = Dense(store, f"{name}.l", d, d, rng)
        self.out = Dense(store, f"{name}.g", d, d, rng)

    def forward(self, x, mem):
        xp, cx = self.proj.forward(x)
        mp, cm = self.proj.forward(mem)
        w, ca = dm.cross_affinity(xp, mp)
        mixed = w @ mp
        pre, c2 = self.out.forward(mixed)
        g, mask = dm.relu(pre)
        return g, (cx, cm, mp, w, ca, c2, mask)

    def backward(self, dg, cache):
        cx, cm, mp, w, ca, c2, mask = cache
        dmixed = self.out.backward(dm.relu_backward(dg, mask), c2)
        dxp, dmp = dm.cross_affinity_backward(dmixed @ mp.T, ca)
        dmp = dmp + w.T @ dmixed
        return self.proj.backward(dxp, cx), self.proj.backward(dmp, cm)


# -- encoder / decoder layers ------------------------------------------------------
# Post-norm residual blocks: y = LN(x + dropout(sublayer(x))).


class _Residual:
    def __init__(self, store, name, d):
        self.norm = LayerNorm(store, f"{name}.norm", d)

    def forward(self, x, sub_out, mode):
        dropped, mask = mode.drop(sub_out)
        y, cn = self.norm.forward(x + dropped)
        return y, (mask, cn)

    def backward(self, dy, cache):
        """Returns the gradient w.r.t. both the skip input and the sublayer output."""
        mask, cn = cache
        ds = self.norm.backward(dy, cn)
        return ds, dm.dropout_backward(ds, mask)


class EncoderLayer:
    def __init__(self, store, name, d, d_ff, rng, kind, n_heads=1):
        self.kind = kind
        if kind == "attention":
            self.mix = MultiHeadAttention(store, f"{name}.attn", d, n_heads, rng)
        else:
            self.mix = GraphModule(store, f"{name}.graph", d, d, rng)
        self.res1 = _Residual(store, f"{name}.res1", d)
        self.ff = FeedForward(store, f"{name}.ff", d, d_ff, rng)
        self.res2 = _Residual(store, f"{name}.res2", d)

    def _mix_fwd(self, x):
        return self.mix.forward(x, x) if self.kind == "attention" else self.mix.forward(x)

    def _mix_bwd(self, d, c):
        if self.kind == "attention":
            dq, dkv = self.mix.backward(d, c)
            return dq + dkv
        return self.mix.backward(d, c)

    def forward(self, x, mode):
        m, cm = self._mix_fwd(x)
        y1, cr1 = self.res1.forward(x, m, mode)
        f, cf = self.ff.forward(y1)
        y, cr2 = self.res2.forward(y1, f, mode)
        return y, (cm, cr1, cf, cr2)

    def backward(self, dy, cache):
        cm, cr1, cf, cr2 = cache
        dskip, dsub = self.res2.backward(dy, cr2)
        dy1 = dskip + self.ff.backward(dsub, cf)
        dskip, dsub = self.res1.backward(dy1, cr1)
        return dskip + self._mix_bwd(dsub, cm)


class DecoderLayer:
    def __init__(self, store, name, d, d_ff, rng, kind, n_heads=1):
        self.kind = kind
        if kind == "attention":
            self.self_mix = MultiHeadAttention(store, f"{name}.self_attn", d, n_heads, rng)
            self.cross_mix = MultiHeadAttention(store, f"{name}.cross_attn", d, n_heads, rng)
        else:
            self.self_mix = GraphModule(store, f"{name}.graph", d, d, rng)
            self.cross_mix = CrossGraphModule(store, f"{name}.cross_graph", d, rng)
        self.res1 = _Residual(store, f"{name}.res1", d)
        self.res2 = _Residual(store, f"{name}.res2", d)
        self.ff = FeedForward(store, f"{name}.ff", d, d_ff, rng)
        self.res3 = _Residual(store, f"{name}.res3", d)

    def forward(self, x, mem, mode):
        if self.kind == "attention":
            s, cs = self.self_mix.forward(x, x)
        else:
            s, cs = self.self_mix.forward(x)
        y1, cr1 = self.res1.forward(x, s, mode)
        c, cc = self.cross_mix.forward(y1, mem)
        y2, cr2 = self.res2.forward(y1, c, mode)
        f, cf = self.ff.forward(y2)
        y, cr3 = self.res3.forward(y2, f, mode)
        return y, (cs, cr1, cc, cr2, cf, cr3)

    def backward(self, dy, cache):
        cs, cr1, cc, cr2, cf, cr3 = cache
        dskip, dsub = self.res3.backward(dy, cr3)
        dy2 = dskip + self.ff.backward(dsub, cf)
        dskip, dsub = self.res2.backward(dy2, cr2)
        dq, dmem = self.cross_mix.backward(dsub, cc)
        dy1 = dskip + dq
        dskip, dsub = self.res1.backward(dy1, cr1)
        if self.kind == "attention":
            a, b = self.self_mix.backward(dsub, cs)
            dx = dskip + a + b
        else:
            dx = dskip + self.self_mix.backward(dsub, cs)
        return dx, dmem


class EncoderDecoder:
    """Input projection, encoder stack, then a decoder stack whose input is the
    projected set itself and whose memory is the encoder output.

    Maps an n x d_in set to n x d rows; every step is row-equivariant.
    """

    def __init__(self, store, name, d_in, d, n_enc, n_dec, d_ff, rng, kind, n_heads=1):
        self.inp = Dense(store, f"{name}.in", d_in, d, rng)
        self.enc = [EncoderLayer(store, f"{name}.enc{i}", d, d_ff, rng, kind, n_heads)
                    for i in range(n_enc)]
        self.dec = [DecoderLayer(store, f"{name}.dec{i}", d, d_ff, rng, kind, n_heads)
                    for i in range(n_dec)]

    def forward(self, x, mode):
        x0, ci = self.inp.forward(x)
        e, enc_caches = x0, []
        for layer in self.enc:
            e, c = layer.forward(e, mode)
            enc_caches.append(c)
        if not self.dec:
            return e, (ci, enc_caches, [])
        y, dec_caches = x0, []
        for layer in self.dec:
            y, c = layer.forward(y, e, mode)
            dec_caches.append(c)
        return y, (ci, enc_caches, dec_caches)

    def backward(self, dy, cache):
        ci, enc_caches, dec_caches = cache
        if dec_caches:
            dmem = np.zeros_like(dy)
            for layer, c in zip(reversed(self.dec), reversed(dec_caches)):
                dy, dm_ = layer.backward(dy, c)
                dmem += dm_
            dx0, de = dy, dmem
        else:
            dx0, de = 0.0, dy
        for layer, c in zip(reversed(self.enc), reversed(enc_caches)):
            de = layer.backward(de, c)
        return self.inp.backward(dx0 + de, ci)


    def attention_maps(self, cache):
        """Softmax weights of every attention block, for inspection."""
        _, enc_caches, dec_caches = cache
        maps = [c[0][6] for c in enc_caches]
        for c in dec_caches:
            maps.extend([c[0][6], c[2][6]])
        return maps
