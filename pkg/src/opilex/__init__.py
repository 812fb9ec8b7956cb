"""Corpus analytics for opioid-related discussion dumps: ingestion, text
normalization, subreddit discovery, SGNS embeddings, lexicon expansion, trends
and proximity-conditioned odds ratios."""

__version__ = "0.1.0"
