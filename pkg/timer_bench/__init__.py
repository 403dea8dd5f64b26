"""
TIMER Bench - temporal instruction data for longitudinal health records.

Modules:
    timeline   - event ingestion, visit timelines, XML records, chunking
    temporal   - normalized evidence positions and distribution analysis
    genpipe    - instruction-pair generation and model-under-test answers
    sampler    - recency / edge / uniform instruction sets, benchmark assembly
    metrics    - ROUGE-L, chrF, METEOR-lite, GLEU, bootstrap, length stats
    judge      - LLM-as-judge verdicts, head-to-head, Spearman validation
    synth      - deterministic synthetic cohorts
    cli        - the timer-bench command
"""

__version__ = "0.1.0"
