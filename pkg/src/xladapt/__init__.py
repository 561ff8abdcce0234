"""Cross-lingual adaptation toolkit: tokenizer extension, embedding
bootstrapping, 4-bit quantization with low-rank adapters, corpus curation,
dialogue rendering, and model-graded evaluation."""

__version__ = "0.1.0"
