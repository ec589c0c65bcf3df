# A toy graph through one attention layer and one pooling layer, small enough
# to read every number.
import numpy as np

from rawgat_st.gat import GatLayer, attention_weights
from rawgat_st.pooling import pool, pooled_count
from rawgat_st.tensor import Tensor

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(0)

# five nodes with four features; nodes 0 and 3 are near-duplicates
h = rng.standard_normal((5, 4))
h[3] = h[0] + 0.05 * rng.standard_normal(4)

layer = GatLayer(4, 2, rng, np.float64)
alpha = attention_weights(Tensor(h), layer.w_map).data
print("attention alpha[u, n] (column n = weights node n gives its contributors):")
print(alpha)
print("column sums:", alpha.sum(axis=0))

out = layer(Tensor(h)).data
print("layer output (5 nodes, 2 features):")
print(out)

# permuting nodes only permutes the output rows
p = np.array([4, 2, 0, 1, 3])
print("equivariant:", np.allclose(layer(Tensor(h[p])).data, out[p]))

# pooling keeps the top-scoring nodes in graph order and gates them
q = rng.standard_normal(2)
scores = out @ q
kept, idx = pool(Tensor(out), Tensor(q), 0.5)
print("scores:", scores)
print(f"k=0.5 keeps {pooled_count(5, 0.5)} nodes:", idx)
print("gates:", 1 / (1 + np.exp(-scores[idx])))
print(kept.data)

# the table's counts come from floor(k * N)
for n, k in ((23, 0.64), (29, 0.81), (12, 0.64)):
    print(f"N={n}, k={k}: {n} -> {pooled_count(n, k)}")
