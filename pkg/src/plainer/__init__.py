"""Sentence simplification with an external paraphrase rulebase.

A small, self-contained stack: a float64 autodiff core, a multi-head
attention encoder-decoder, rule-aware training (a critic loss and a
key-value rule memory), greedy/beam decoding, and a SARI/FKGL/rule-use
evaluation suite with TSV reports and figures.
"""

__version__ = "0.1.0"
