import numpy as np


def unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def basis(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def spike_only(v, s, k=3):
    """Noiseless s v^(x)k as a symmetric DenseTensor."""
    from tensorpca import DenseTensor, outer_power

    return DenseTensor(s * outer_power(v, k), symmetric=True)


def orthogonal_spikes(n, p, beta, seed, noise=True):
    """Symmetric noise plus p orthonormal planted spikes at the given beta."""
    import math

    from tensorpca import DenseTensor, generate_spiked, outer_power

    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    U = Q.T.copy()
    data = generate_spiked(n, 3, 0.0, seed=seed).noise.data.copy() if noise else np.zeros((n, n, n))
    for u in U:
        data += math.sqrt(n) * beta * outer_power(u, 3)
    return DenseTensor(data, symmetric=True), U


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
