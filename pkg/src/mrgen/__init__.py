"""mrgen: utterance generation from flat meaning representations.

A condition-prefixed causal transformer decoder trained from scratch on
slot/value conditions, plus sim-delexicalization for unseen values and a
self-contained multi-reference evaluation suite.
"""

__version__ = "0.1.0"
