"""Airway-tree shape phenotyping: synthetic labeled trees, 3-view MIP
preprocessing, a skip-free UNet autoencoder trained with hand-written
backpropagation, and kNN-graph Louvain clustering of its bottleneck features."""

__version__ = "0.1.0"
