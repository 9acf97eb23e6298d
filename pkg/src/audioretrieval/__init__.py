"""Language-based audio retrieval: bi-encoder training and ranking evaluation.

The package wires a log-mel front end (:mod:`audioretrieval.dsp`), a frozen
word-vector caption encoder (:mod:`audioretrieval.text`) and a trainable CRNN
audio encoder (:mod:`audioretrieval.nnet`) into a dot-product retrieval system
optimized with a sampling-based triplet loss (:mod:`audioretrieval.train`) and
scored with mAP@10 / R@k plus jackknife confidence intervals
(:mod:`audioretrieval.evaluation`).
"""

__version__ = "0.1.0"
