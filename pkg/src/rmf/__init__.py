"""rmf: turn student-assigned peer-review tags into reproducible LLM evaluation metrics.

Pipeline: ingest tagged exports -> preprocess (credibility filter, pattern
removal, balanced sampling, stratified split) -> build preference pairs and
verify the preference-loss math -> run three LLM evaluation methods ->
agreement reports with a human-adjudication loop.
"""

__version__ = "0.1.0"
