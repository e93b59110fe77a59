"""kernscribe: desk-scale piano audio-to-score toolkit.

Modules: score (in-memory model), kern (**Kern io), preprocess (cleansing,
voice normalization, clip segmentation), tokens (serialization and
vocabularies), augment (key/tempo augmentation), vqt (spectrogram frontend),
model (hierarchical seq2seq transcriber), metrics (WER / macro-F1 /
MV2H-lite), cli (pipeline commands).
"""

__version__ = "0.1.0"
