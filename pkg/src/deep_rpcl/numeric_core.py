"""Shared numeric primitives: row normalization, stable log-softmax, cosine
similarity and a small seeded generator.

Every module draws randomness from :class:`Rng`, never from numpy's global
state, so a seed fully determines a run.
"""

import numpy as np

COS_EPS = 1e-7

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def as_matrix(m, name="matrix"):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def normalize_rows(m, epsilon=1e-12):
    """Scale every row to unit Euclidean norm.

    Returns ``(normalized, degenerate)`` where ``degenerate`` flags rows whose
    norm is below ``epsilon``; those rows are passed through unchanged.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a = as_matrix(m)
    if a.size == 0:
        raise ValueError("empty input")
    norms = np.sqrt(np.sum(a * a, axis=1))
    degenerate = norms < epsilon
    safe = np.where(degenerate, 1.0, norms)
    return a / safe[:, None], degenerate


def log_softmax_stable(logits):
    """Row-wise ``log softmax`` with max-shift; accepts a vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cosine_matrix(a, b):
    """Pairwise cosine similarity, ``out[i, j] = cos(a_i, b_j)`` in [-1, 1]."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    an, a_bad = normalize_rows(a) if a.size else (a, np.zeros(0, bool))
    bn, b_bad = normalize_rows(b) if b.size else (b, np.zeros(0, bool))
    if a_bad.any():
        raise ValueError(f"zero row in a at index {int(np.flatnonzero(a_bad)[0])}")
    if b_bad.any():
        raise ValueError(f"zero row in b at index {int(np.flatnonzero(b_bad)[0])}")
    return np.clip(an @ bn.T, -1.0, 1.0)


def clamp_cos(c):
    """Keep cosines off +/-1 so arccos and 1/sin stay finite."""
    return np.clip(c, -1.0 + COS_EPS, 1.0 - COS_EPS)


def _mix(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _MIX1
    z = z ^ (z >> np.uint64(27))
    z = z * _MIX2
    return z ^ (z >> np.uint64(31))


def _fnv1a(text):
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class Rng:
    """SplitMix64 in counter form.

    Output ``i`` (1-based) is ``mix(seed + i * 0x9E3779B97F4A7C15 mod 2**64)``
    with the standard SplitMix64 finalizer, so the stream is the same on every
    platform and can be produced in vectorized blocks. Uniform doubles take the
    top 53 bits; normals use Box-Muller over consecutive uniform pairs.

    Not thread-safe: one owner per instance.
    """

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * _GOLDEN)

    def random(self, shape=None):
        n = 1 if shape is None else int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return float(u[0]) if shape is None else u.reshape(shape)

    def uniform(self, low, high, shape):
        return low + (high - low) * self.random(shape)

    def normal(self, shape, scale=1.0):
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u = self.random((m, 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        t = 2.0 * np.pi * u[:, 1]
        # interleave so consecutive values come from one pair
        z = np.stack([r * np.cos(t), r * np.sin(t)], axis=1).ravel()[:n]
        return scale * z.reshape(shape)

    def permutation(self, n):
        return np.argsort(self.next_u64(n), kind="stable")

    def choice(self, n, k):
        """``k`` distinct indices from ``range(n)``."""
        if k > n:
            raise ValueError(f"cannot choose {k} of {n} without replacement")
        return self.permutation(n)[:k]

    def integers(self, high, size):
        # modulo bias is below 2**-40 for any high used here
        return (self.next_u64(size) % np.uint64(high)).astype(np.int64)

    def spawn(self, label):
        """Independent child generator keyed by ``label``."""
        with np.errstate(over="ignore"):
            key = _mix(np.array([self.seed ^ _fnv1a(str(label))], dtype=np.uint64))
        return Rng(int(key[0]))
