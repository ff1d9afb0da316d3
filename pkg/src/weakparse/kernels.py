"""Compiled forward/backward passes for the attention encoder-decoder.

Everything here works on one example at a time with explicit loops; at these
sizes (hidden 20) loop-level code beats dispatching many tiny numpy calls.

Parameter tuples follow ``PARAM_ORDER`` in :mod:`weakparse.seq2seq`::

    emb_src, emb_tgt, enc_W1, enc_b1, enc_W, enc_b, dec_W1, dec_b1, dec_W,
    dec_b, att_Ws, att_Wh, att_b, att_v, bridge_W, bridge_b, out_W, out_b

LSTM weight matrices act on ``[x; h_prev]`` and stack the gates as rows in the
order input, forget, output, candidate.
"""

import math

import numpy as np
from numba import njit

# Reassociation lets LLVM vectorize the dot-product reductions; inf/nan semantics stay strict.
FASTMATH = {"reassoc", "contract"}


@njit(cache=True, fastmath=FASTMATH)
def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True, fastmath=FASTMATH)
def lstm_forward(W, b, x, h_prev, c_prev, gates, c_out, h_out):
    H = h_prev.shape[0]
    D = x.shape[0]
    for r in range(4 * H):
        acc = b[r]
        for k in range(D):
            acc += W[r, k] * x[k]
        for k in range(H):
            acc += W[r, D + k] * h_prev[k]
        gates[r] = acc
    for j in range(H):
        i = _sigmoid(gates[j])
        f = _sigmoid(gates[H + j])
        o = _sigmoid(gates[2 * H + j])
        g = math.tanh(gates[3 * H + j])
        gates[j] = i
        gates[H + j] = f
        gates[2 * H + j] = o
        gates[3 * H + j] = g
        c = f * c_prev[j] + i * g
        c_out[j] = c
        h_out[j] = o * math.tanh(c)


@njit(cache=True, fastmath=FASTMATH)
def lstm_backward(W, x, h_prev, c_prev, gates, c, dh, dc, dW, db, dx, dh_prev, dc_prev, da):
    """Backward through one cell.

    ``dh``/``dc`` are the total gradients reaching h_t and c_t.  Writes (does
    not accumulate) ``dx``, ``dh_prev`` and ``dc_prev``; accumulates ``dW``/``db``.
    """
    H = h_prev.shape[0]
    D = x.shape[0]
    for j in range(H):
        i = gates[j]
        f = gates[H + j]
        o = gates[2 * H + j]
        g = gates[3 * H + j]
        tc = math.tanh(c[j])
        dcj = dc[j] + dh[j] * o * (1.0 - tc * tc)
        da[j] = dcj * g * i * (1.0 - i)
        da[H + j] = dcj * c_prev[j] * f * (1.0 - f)
        da[2 * H + j] = dh[j] * tc * o * (1.0 - o)
        da[3 * H + j] = dcj * i * (1.0 - g * g)
        dc_prev[j] = dcj * f
    for k in range(D):
        dx[k] = 0.0
    for k in range(H):
        dh_prev[k] = 0.0
    for r in range(4 * H):
        a = da[r]
        db[r] += a
        for k in range(D):
            dW[r, k] += a * x[k]
            dx[k] += W[r, k] * a
        for k in range(H):
            dW[r, D + k] += a * h_prev[k]
            dh_prev[k] += W[r, D + k] * a


@njit(cache=True, fastmath=FASTMATH)
def encode_forward(P, src, T, enc_masks):
    """Bidirectional stacked encoder over the first ``T`` source positions.

    ``enc_masks[l]`` (shape (T, 2H)) is applied to layer ``l``'s output before
    it feeds layer ``l + 1``.
    """
    emb_src, enc_W1, enc_b1, enc_W, enc_b = P[0], P[2], P[3], P[4], P[5]
    L = enc_b.shape[0] + 1
    H = enc_b1.shape[1] // 4
    E = emb_src.shape[1]
    x0 = np.zeros((T, E))
    for t in range(T):
        x0[t, :] = emb_src[src[t]]
    xs = np.zeros((L - 1, T, 2 * H))
    gates = np.zeros((L, 2, T, 4 * H))
    cs = np.zeros((L, 2, T, H))
    hs = np.zeros((L, 2, T, H))
    zero = np.zeros(H)
    for l in range(L):
        for d in range(2):
            if l == 0:
                W = enc_W1[d]
                b = enc_b1[d]
            else:
                W = enc_W[l - 1, d]
                b = enc_b[l - 1, d]
            for step in range(T):
                t = step if d == 0 else T - 1 - step
                if step == 0:
                    hp = zero
                    cp = zero
                else:
                    tp = t - 1 if d == 0 else t + 1
                    hp = hs[l, d, tp]
                    cp = cs[l, d, tp]
                if l == 0:
                    lstm_forward(W, b, x0[t], hp, cp, gates[l, d, t], cs[l, d, t], hs[l, d, t])
                else:
                    lstm_forward(W, b, xs[l - 1, t], hp, cp, gates[l, d, t], cs[l, d, t], hs[l, d, t])
        if l < L - 1:
            for t in range(T):
                for j in range(H):
                    xs[l, t, j] = hs[l, 0, t, j] * enc_masks[l, t, j]
                    xs[l, t, H + j] = hs[l, 1, t, j] * enc_masks[l, t, H + j]
    ann = np.zeros((T, 2 * H))
    fin = np.zeros(2 * H)
    for t in range(T):
        ann[t, :H] = hs[L - 1, 0, t]
        ann[t, H:] = hs[L - 1, 1, t]
    if T > 0:
        fin[:H] = hs[L - 1, 0, T - 1]
        fin[H:] = hs[L - 1, 1, 0]
    return x0, xs, gates, cs, hs, ann, fin


@njit(cache=True, fastmath=FASTMATH)
def bridge_forward(P, fin, L, H):
    bridge_W, bridge_b = P[14], P[15]
    h0 = np.zeros((L, H))
    c0 = np.zeros((L, H))
    for l in range(L):
        for j in range(H):
            rh = 2 * l * H + j
            rc = rh + H
            acc_h = bridge_b[rh]
            acc_c = bridge_b[rc]
            for k in range(fin.shape[0]):
                acc_h += bridge_W[rh, k] * fin[k]
                acc_c += bridge_W[rc, k] * fin[k]
            h0[l, j] = acc_h
            c0[l, j] = acc_c
    return h0, c0


@njit(cache=True, fastmath=FASTMATH)
def attention_keys(P, ann):
    att_Wh = P[11]
    T = ann.shape[0]
    A = att_Wh.shape[0]
    keys = np.zeros((T, A))
    for t in range(T):
        for a in range(A):
            acc = 0.0
            for k in range(ann.shape[1]):
                acc += att_Wh[a, k] * ann[t, k]
            keys[t, a] = acc
    return keys


@njit(cache=True, fastmath=FASTMATH)
def attend_step(P, q, ann, keys, att_tanh, alpha, ctx):
    """Additive attention for one decoder step; fills ``att_tanh``, ``alpha``, ``ctx``."""
    att_Ws, att_b, att_v = P[10], P[12], P[13]
    T = ann.shape[0]
    A = att_Ws.shape[0]
    qa = np.empty(A)
    for a in range(A):
        acc = att_b[a]
        for k in range(q.shape[0]):
            acc += att_Ws[a, k] * q[k]
        qa[a] = acc
    emax = -np.inf
    for t in range(T):
        e = 0.0
        for a in range(A):
            u = math.tanh(keys[t, a] + qa[a])
            att_tanh[t, a] = u
            e += att_v[a] * u
        alpha[t] = e
        if e > emax:
            emax = e
    total = 0.0
    for t in range(T):
        alpha[t] = math.exp(alpha[t] - emax)
        total += alpha[t]
    for k in range(ctx.shape[0]):
        ctx[k] = 0.0
    for t in range(T):
        alpha[t] /= total
        for k in range(ctx.shape[0]):
            ctx[k] += alpha[t] * ann[t, k]


@njit(cache=True, fastmath=FASTMATH)
def decode_forward(P, ann, keys, h0, c0, tgt, S, dec_masks, out_masks):
    """Teacher-forced decoder over ``S`` steps; returns the summed loss and trace."""
    emb_tgt, dec_W1, dec_b1, dec_W, dec_b = P[1], P[6], P[7], P[8], P[9]
    out_W, out_b = P[16], P[17]
    L = dec_b.shape[0] + 1
    H = dec_b1.shape[0] // 4
    E = emb_tgt.shape[1]
    T = ann.shape[0]
    A = P[10].shape[0]
    V = out_b.shape[0]
    att_tanh = np.zeros((S, T, A))
    alpha = np.zeros((S, T))
    x0 = np.zeros((S, E + 2 * H))
    xs = np.zeros((S, L - 1, H))
    gates = np.zeros((S, L, 4 * H))
    cs = np.zeros((S, L, H))
    hs = np.zeros((S, L, H))
    ho = np.zeros((S, H))
    probs = np.zeros((S, V))
    ctx = np.zeros(2 * H)
    loss = 0.0
    for k in range(S):
        q = h0[L - 1] if k == 0 else hs[k - 1, L - 1]
        attend_step(P, q, ann, keys, att_tanh[k], alpha[k], ctx)
        x0[k, :E] = emb_tgt[tgt[k]]
        x0[k, E:] = ctx
        for l in range(L):
            if k == 0:
                hp = h0[l]
                cp = c0[l]
            else:
                hp = hs[k - 1, l]
                cp = cs[k - 1, l]
            if l == 0:
                lstm_forward(dec_W1, dec_b1, x0[k], hp, cp, gates[k, 0], cs[k, 0], hs[k, 0])
            else:
                for j in range(H):
                    xs[k, l - 1, j] = hs[k, l - 1, j] * dec_masks[l - 1, k, j]
                lstm_forward(dec_W[l - 1], dec_b[l - 1], xs[k, l - 1], hp, cp, gates[k, l], cs[k, l], hs[k, l])
        for j in range(H):
            ho[k, j] = hs[k, L - 1, j] * out_masks[k, j]
        m = -np.inf
        for v in range(V):
            acc = out_b[v]
            for j in range(H):
                acc += out_W[v, j] * ho[k, j]
            probs[k, v] = acc
            if acc > m:
                m = acc
        z = 0.0
        for v in range(V):
            z += math.exp(probs[k, v] - m)
        logz = m + math.log(z)
        loss += logz - probs[k, tgt[k + 1]]
        for v in range(V):
            probs[k, v] = math.exp(probs[k, v] - logz)
    return loss, att_tanh, alpha, x0, xs, gates, cs, hs, ho, probs


@njit(cache=True, fastmath=FASTMATH)
def forward(P, src, T, tgt, S, enc_masks, dec_masks, out_masks):
    x0e, xse, ge, ce, he, ann, fin = encode_forward(P, src, T, enc_masks)
    L = P[9].shape[0] + 1
    H = P[7].shape[0] // 4
    h0, c0 = bridge_forward(P, fin, L, H)
    keys = attention_keys(P, ann)
    loss, att_tanh, alpha, x0d, xsd, gd, cd, hd, ho, probs = decode_forward(
        P, ann, keys, h0, c0, tgt, S, dec_masks, out_masks)
    return (loss, x0e, xse, ge, ce, he, ann, fin, h0, c0, keys,
            att_tanh, alpha, x0d, xsd, gd, cd, hd, ho, probs)


@njit(cache=True, fastmath=FASTMATH)
def backward(P, G, src, T, tgt, S, enc_masks, dec_masks, out_masks, trace):
    """Accumulate d(loss)/d(params) into the gradient tuple ``G``."""
    (loss, x0e, xse, ge, ce, he, ann, fin, h0, c0, keys,
     att_tanh, alpha, x0d, xsd, gd, cd, hd, ho, probs) = trace
    emb_tgt, enc_W1, enc_W = P[1], P[2], P[4]
    dec_W1, dec_W = P[6], P[8]
    att_Ws, att_Wh, att_v = P[10], P[11], P[13]
    bridge_W, out_W = P[14], P[16]
    g_emb_src, g_emb_tgt, g_enc_W1, g_enc_b1, g_enc_W, g_enc_b = G[0], G[1], G[2], G[3], G[4], G[5]
    g_dec_W1, g_dec_b1, g_dec_W, g_dec_b = G[6], G[7], G[8], G[9]
    g_att_Ws, g_att_Wh, g_att_b, g_att_v = G[10], G[11], G[12], G[13]
    g_bridge_W, g_bridge_b, g_out_W, g_out_b = G[14], G[15], G[16], G[17]

    L = P[9].shape[0] + 1
    H = P[7].shape[0] // 4
    E = emb_tgt.shape[1]
    A = att_Ws.shape[0]
    V = out_W.shape[0]

    dann = np.zeros((T, 2 * H))
    dkeys = np.zeros((T, A))
    dh_next = np.zeros((L, H))
    dc_next = np.zeros((L, H))
    dq_carry = np.zeros(H)
    dh = np.zeros(H)
    dx0 = np.zeros(E + 2 * H)
    dxh = np.zeros(H)
    dh_prev = np.zeros(H)
    dc_prev = np.zeros(H)
    da = np.zeros(4 * H)
    dlog = np.zeros(V)
    dalpha = np.zeros(T)
    du = np.zeros(A)

    for k in range(S - 1, -1, -1):
        # softmax + cross-entropy
        for v in range(V):
            dlog[v] = probs[k, v]
        dlog[tgt[k + 1]] -= 1.0
        for j in range(H):
            dh[j] = 0.0
        for v in range(V):
            g_out_b[v] += dlog[v]
            for j in range(H):
                g_out_W[v, j] += dlog[v] * ho[k, j]
                dh[j] += out_W[v, j] * dlog[v]
        for j in range(H):
            dh[j] = dh[j] * out_masks[k, j] + dh_next[L - 1, j] + dq_carry[j]

        for l in range(L - 1, -1, -1):
            if k == 0:
                hp = h0[l]
                cp = c0[l]
            else:
                hp = hd[k - 1, l]
                cp = cd[k - 1, l]
            if l == 0:
                lstm_backward(dec_W1, x0d[k], hp, cp, gd[k, 0], cd[k, 0], dh, dc_next[0],
                              g_dec_W1, g_dec_b1, dx0, dh_prev, dc_prev, da)
            else:
                lstm_backward(dec_W[l - 1], xsd[k, l - 1], hp, cp, gd[k, l], cd[k, l], dh, dc_next[l],
                              g_dec_W[l - 1], g_dec_b[l - 1], dxh, dh_prev, dc_prev, da)
            dc_next[l, :] = dc_prev
            dh_next[l, :] = dh_prev
            if l > 0:
                for j in range(H):
                    dh[j] = dxh[j] * dec_masks[l - 1, k, j] + dh_next[l - 1, j]

        tok = tgt[k]
        for j in range(E):
            g_emb_tgt[tok, j] += dx0[j]

        # attention: ctx = sum_t alpha_t ann_t, alpha = softmax(e), e_t = v . tanh(keys_t + Ws q + b)
        q = h0[L - 1] if k == 0 else hd[k - 1, L - 1]
        s = 0.0
        for t in range(T):
            acc = 0.0
            for j in range(2 * H):
                acc += dx0[E + j] * ann[t, j]
                dann[t, j] += alpha[k, t] * dx0[E + j]
            dalpha[t] = acc
            s += alpha[k, t] * acc
        for a in range(A):
            du[a] = 0.0
        for t in range(T):
            de = alpha[k, t] * (dalpha[t] - s)
            for a in range(A):
                u = att_tanh[k, t, a]
                g_att_v[a] += de * u
                dz = de * att_v[a] * (1.0 - u * u)
                dkeys[t, a] += dz
                du[a] += dz
        for j in range(H):
            dq_carry[j] = 0.0
        for a in range(A):
            g_att_b[a] += du[a]
            for j in range(H):
                g_att_Ws[a, j] += du[a] * q[j]
                dq_carry[j] += att_Ws[a, j] * du[a]

    # decoder initial state: gradients left in the carries
    dz = np.zeros(2 * L * H)
    for l in range(L):
        for j in range(H):
            extra = dq_carry[j] if l == L - 1 else 0.0
            dz[2 * l * H + j] = dh_next[l, j] + extra
            dz[2 * l * H + H + j] = dc_next[l, j]
    dfin = np.zeros(2 * H)
    for r in range(2 * L * H):
        g_bridge_b[r] += dz[r]
        for k in range(2 * H):
            g_bridge_W[r, k] += dz[r] * fin[k]
            dfin[k] += bridge_W[r, k] * dz[r]

    for t in range(T):
        for a in range(A):
            for j in range(2 * H):
                g_att_Wh[a, j] += dkeys[t, a] * ann[t, j]
                dann[t, j] += att_Wh[a, j] * dkeys[t, a]

    if T == 0:
        return
    # encoder
    dout = np.zeros((L, 2, T, H))
    for t in range(T):
        for j in range(H):
            dout[L - 1, 0, t, j] = dann[t, j]
            dout[L - 1, 1, t, j] = dann[t, H + j]
    for j in range(H):
        dout[L - 1, 0, T - 1, j] += dfin[j]
        dout[L - 1, 1, 0, j] += dfin[H + j]
    E_src = P[0].shape[1]
    dx_first = np.zeros(E_src)
    dx_upper = np.zeros(2 * H)
    zero = np.zeros(H)
    for l in range(L - 1, -1, -1):
        for d in range(2):
            for j in range(H):
                dh_prev[j] = 0.0
                dc_prev[j] = 0.0
            dc_carry = np.zeros(H)
            dh_carry = np.zeros(H)
            for step in range(T - 1, -1, -1):
                t = step if d == 0 else T - 1 - step
                if step == 0:
                    hp = zero
                    cp = zero
                else:
                    tp = t - 1 if d == 0 else t + 1
                    hp = he[l, d, tp]
                    cp = ce[l, d, tp]
                for j in range(H):
                    dh[j] = dout[l, d, t, j] + dh_carry[j]
                if l == 0:
                    lstm_backward(enc_W1[d], x0e[t], hp, cp, ge[l, d, t], ce[l, d, t], dh, dc_carry,
                                  g_enc_W1[d], g_enc_b1[d], dx_first, dh_prev, dc_prev, da)
                    for j in range(E_src):
                        g_emb_src[src[t], j] += dx_first[j]
                else:
                    lstm_backward(enc_W[l - 1, d], xse[l - 1, t], hp, cp, ge[l, d, t], ce[l, d, t], dh, dc_carry,
                                  g_enc_W[l - 1, d], g_enc_b[l - 1, d], dx_upper, dh_prev, dc_prev, da)
                    for j in range(H):
                        dout[l - 1, 0, t, j] += dx_upper[j] * enc_masks[l - 1, t, j]
                        dout[l - 1, 1, t, j] += dx_upper[H + j] * enc_masks[l - 1, t, H + j]
                dh_carry[:] = dh_prev
                dc_carry[:] = dc_prev


@njit(cache=True, fastmath=FASTMATH)
def score_many(P, src, T, tgts, lengths, enc_masks, dec_masks, out_masks):
    """Summed loss of every target row against one source; dropout masks are ones."""
    x0e, xse, ge, ce, he, ann, fin = encode_forward(P, src, T, enc_masks)
    L = P[9].shape[0] + 1
    H = P[7].shape[0] // 4
    h0, c0 = bridge_forward(P, fin, L, H)
    keys = attention_keys(P, ann)
    out = np.zeros(tgts.shape[0])
    for n in range(tgts.shape[0]):
        res = decode_forward(P, ann, keys, h0, c0, tgts[n], lengths[n] - 1, dec_masks, out_masks)
        out[n] = res[0]
    return out


@njit(cache=True, fastmath=FASTMATH)
def greedy(P, src, T, go_id, end_id, max_len, enc_masks):
    """Argmax decoding from ``Go``; returns the ids including Go (and End if reached)."""
    x0e, xse, ge, ce, he, ann, fin = encode_forward(P, src, T, enc_masks)
    emb_tgt, dec_W1, dec_b1, dec_W, dec_b = P[1], P[6], P[7], P[8], P[9]
    out_W, out_b = P[16], P[17]
    L = dec_b.shape[0] + 1
    H = dec_b1.shape[0] // 4
    E = emb_tgt.shape[1]
    A = P[10].shape[0]
    V = out_b.shape[0]
    h0, c0 = bridge_forward(P, fin, L, H)
    keys = attention_keys(P, ann)
    h = h0.copy()
    c = c0.copy()
    hn = np.zeros((L, H))
    cn = np.zeros((L, H))
    g = np.zeros(4 * H)
    att_tanh = np.zeros((T, A))
    alpha = np.zeros(T)
    ctx = np.zeros(2 * H)
    x = np.zeros(E + 2 * H)
    out = np.zeros(max_len, dtype=np.int64)
    out[0] = go_id
    n = 1
    prev = go_id
    while n < max_len:
        attend_step(P, h[L - 1], ann, keys, att_tanh, alpha, ctx)
        x[:E] = emb_tgt[prev]
        x[E:] = ctx
        lstm_forward(dec_W1, dec_b1, x, h[0], c[0], g, cn[0], hn[0])
        for l in range(1, L):
            lstm_forward(dec_W[l - 1], dec_b[l - 1], hn[l - 1], h[l], c[l], g, cn[l], hn[l])
        h[:, :] = hn
        c[:, :] = cn
        best = 0
        best_v = -np.inf
        for v in range(V):
            acc = out_b[v]
            for j in range(H):
                acc += out_W[v, j] * h[L - 1, j]
            if acc > best_v:
                best_v = acc
                best = v
        out[n] = best
        n += 1
        prev = best
        if best == end_id:
            break
    return out[:n]


@njit(cache=True, fastmath=FASTMATH)
def rmsprop(theta, grad, cache, lr, rho, eps):
    for n in range(theta.shape[0]):
        g = grad[n]
        c = rho * cache[n] + (1.0 - rho) * g * g
        cache[n] = c
        theta[n] -= lr * g / (math.sqrt(c) + eps)
