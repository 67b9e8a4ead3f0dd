"""Desk-scale audio SSL laboratory.

Subpackages:
    numerics  - tensors, gradient tape, finite-difference checks, AdamW
    frontend  - WAV ingestion, mel pipelines, patchification
    encoder   - ViT encoder with optional gated attention and per-block traces
    pretrain  - masked latent regression loop with EMA teacher
    probe     - convex gated probing and linear-probe baselines
    metrics   - mAP / F1 / accuracy
    harness   - CLI, configs, synthetic corpora, containers, reports
"""

__version__ = "0.1.0"
