"""LLM-guided and conventional architecture search over NAS-Bench-201 and macro spaces."""

__version__ = "0.1.0"
