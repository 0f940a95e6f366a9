"""Lag-aware asynchronous multimodal fusion toolkit.

Modules:
    tensor       fp64 tensors with reverse-mode autodiff
    nn           layers, attention, AdamW
    gradcheck    finite-difference gradient oracle
    data         OHLCV / web-snapshot loading, alignment, features, labels
    synth        deterministic synthetic corpus generator
    models       the gated cross-modal model, baselines and controls
    walkforward  rolling fold generation and per-fold training
    metrics      classification, trading and interval statistics
    cli          batch command-line front end
"""

__version__ = "0.1.0"
