"""Emotion recognition and forecasting for dyadic conversations.

Pipeline stages: ingest a diarized conversation corpus (``corpus``),
assemble paired speaker turns (``turns``), build flattened context-window
examples with PCA-reduced modalities (``pca``, ``features``), train a
two-level stacking forecaster over pluggable base learners (``model``),
and evaluate session splits / experiment grids (``eval``).  ``synth``
generates coupled-Markov benchmark corpora with Bayes oracles, and
``cli`` wires everything into the ``erfc`` command.
"""

__version__ = "0.1.0"
