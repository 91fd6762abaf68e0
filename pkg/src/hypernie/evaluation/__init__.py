from .metrics import MetricReport, average_ranks, ndcg_at_k, spearman
from .pagerank import ConvergenceError, pagerank, ppr

__all__ = ["ConvergenceError", "MetricReport", "average_ranks", "ndcg_at_k", "pagerank", "ppr",
           "spearman"]
