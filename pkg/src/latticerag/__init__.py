"""Extraction-free graph retrieval over chunk embeddings.

Residual-quantization k-means clusters the chunk embeddings, fuzzy c-means
memberships turn clusters into fuzzy concept extents, soft join/meet nodes and
co-occurrence edges complete a concept graph, and queries are scored by BM25,
cosine and Łukasiewicz fuzzy routing over that graph.
"""

__version__ = "0.1.0"
