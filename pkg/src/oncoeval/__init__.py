"""Corpus-to-report pipeline for cancer phenotype extraction and diagnosis
generation: dataset construction, robustness testbeds, few-shot retrieval,
endpoint-driven generation, and generative-metric scoring."""

__version__ = "0.1.0"
