"""Independent scalar-arithmetic oracle for one pre-norm transformer block.

Pure Python floats and explicit loops only; no numpy and no imports from the
package under test. Run it to (re)generate the golden numbers frozen in
tests/test_nn.py::test_block_matches_scalar_oracle.
"""

import math

EPS = 1e-6
GELU_C = 0.7978845608028654
GELU_A = 0.044715

# two tokens, embedding width 2, one head, mlp hidden 4
X = [[0.5, -1.0], [1.5, 2.0]]
LN1_G, LN1_B = [1.1, 0.9], [0.05, -0.05]
WQ, BQ = [[0.2, -0.1], [0.4, 0.3]], [0.01, -0.02]
WK, BK = [[-0.3, 0.25], [0.15, 0.1]], [0.0, 0.03]
WV, BV = [[0.5, 0.2], [-0.2, 0.35]], [-0.01, 0.02]
WO, BO = [[0.3, -0.4], [0.2, 0.1]], [0.02, 0.0]
LN2_G, LN2_B = [0.95, 1.05], [0.0, 0.1]
W1 = [[0.25, -0.15], [0.1, 0.3], [-0.2, 0.05], [0.4, -0.35]]
B1 = [0.01, -0.01, 0.02, 0.0]
W2 = [[0.3, -0.1, 0.2, 0.05], [-0.25, 0.15, 0.1, -0.3]]
B2 = [0.0, 0.015]


def linear(vec, w, b):
    return [sum(w[o][i] * vec[i] for i in range(len(vec))) + b[o]
            for o in range(len(w))]


def layernorm(vec, g, b):
    mu = sum(vec) / len(vec)
    var = sum((v - mu) ** 2 for v in vec) / len(vec)
    inv = 1.0 / math.sqrt(var + EPS)
    return [(v - mu) * inv * g[i] + b[i] for i, v in enumerate(vec)]


def gelu(v):
    inner = GELU_C * (v + GELU_A * v ** 3)
    return 0.5 * v * (1.0 + math.tanh(inner))


def softmax(row):
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def one_head_attention(tokens):
    dh = len(tokens[0])
    q = [linear(t, WQ, BQ) for t in tokens]
    k = [linear(t, WK, BK) for t in tokens]
    v = [linear(t, WV, BV) for t in tokens]
    scale = 1.0 / math.sqrt(dh)
    out = []
    for qi in q:
        scores = [sum(qi[d] * kj[d] for d in range(dh)) * scale for kj in k]
        weights = softmax(scores)
        mixed = [sum(weights[j] * v[j][d] for j in range(len(tokens)))
                 for d in range(dh)]
        out.append(linear(mixed, WO, BO))
    return out


def block(tokens):
    normed = [layernorm(t, LN1_G, LN1_B) for t in tokens]
    attn = one_head_attention(normed)
    mid = [[tokens[i][d] + attn[i][d] for d in range(len(tokens[0]))]
           for i in range(len(tokens))]
    normed2 = [layernorm(t, LN2_G, LN2_B) for t in mid]
    ff = [linear([gelu(h) for h in linear(t, W1, B1)], W2, B2) for t in normed2]
    return [[mid[i][d] + ff[i][d] for d in range(len(tokens[0]))]
            for i in range(len(tokens))]


if __name__ == "__main__":
    for row in block(X):
        print([f"{v!r}" for v in row])
