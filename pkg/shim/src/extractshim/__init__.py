"""Offline extractor for facial region masks and image embeddings.

Writes the file formats the pairforge pipeline reads: 0/255 single-channel
PNG masks and EMB1 binary embeddings. Self-contained; does not import the
consumer package.
"""

__version__ = "0.1.0"
