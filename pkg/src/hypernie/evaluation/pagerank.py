import numpy as np
import scipy.sparse as sp


class ConvergenceError(RuntimeError):
    pass


def pagerank_from_edges(n, src, dst, damping=0.85, personalization=None, tol=1e-10,
                        max_iter=1000, weights=None):
    """Power iteration on a directed multigraph.

    Out-links are weighted by multiplicity. Teleport and dangling-node mass
    both go to ``personalization`` (uniform when ``None``). Stops once the
    L1 change drops below ``tol``.
    """
    if personalization is None:
        p = np.full(n, 1.0 / n)
    else:
        p = np.asarray(personalization, dtype=np.float64)
        if p.shape != (n,) or np.any(p < 0) or not np.isfinite(p).all():
            raise ValueError("personalization must be a nonnegative vector over nodes")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"personalization must sum to 1, got {p.sum():.12g}")
    if not 0.0 <= damping <= 1.0:
        raise ValueError("damping must lie in [0, 1]")
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    A = sp.csr_matrix((w, (src, dst)), shape=(n, n))
    out_w = np.asarray(A.sum(axis=1)).ravel()
    dangling = out_w == 0
    inv = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, out_w))
    PT = (sp.diags(inv) @ A).T.tocsr()

    x = p.copy()
    for it in range(1, max_iter + 1):
        x_new = damping * (PT @ x + x[dangling].sum() * p) + (1.0 - damping) * p
        if np.abs(x_new - x).sum() < tol:
            return x_new
        x = x_new
    raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations")


def pagerank(kg, damping=0.85, tol=1e-10, max_iter=1000):
    """PageRank over the head -> tail graph of a knowledge graph."""
    t = kg.triples
    return pagerank_from_edges(kg.n_nodes, t[:, 0], t[:, 2], damping, None, tol, max_iter)


def ppr(kg, damping, personalization, tol=1e-10, max_iter=1000):
    """Personalized PageRank: teleport to ``personalization`` instead of uniform."""
    t = kg.triples
    return pagerank_from_edges(kg.n_nodes, t[:, 0], t[:, 2], damping, personalization, tol,
                               max_iter)
