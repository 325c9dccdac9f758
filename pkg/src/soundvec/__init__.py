"""Word embeddings grounded in audio.

Tags attached to sounds are embedded so that a bag of tags predicts which
audio-feature cluster the sound belongs to.  The package covers the whole
pipeline: corpus ingestion, feature summarization, k-means clustering,
embedding training (cluster-target and tag-context variants), and the
cosine-ranking evaluations (text-based retrieval, foley-technique
discovery, word relatedness).
"""

__version__ = "0.1.0"
