"""shirshak (शीर्षक, "headline") — a desk-scale workbench for Nepali news
headline generation.

The package covers the full pipeline at laptop scale: corpus cleaning and
splitting, subword tokenizer training, a toy encoder-decoder transformer,
LoRA adapters over frozen (optionally quantized) base weights, an AdamW
fine-tuning loop with per-epoch ROUGE validation, and a blinded human
evaluation service.
"""

__version__ = "0.1.0"
