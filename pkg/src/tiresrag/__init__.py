"""Sufficiency- and thinking-shaped GRPO for retrieval agents, at toy scale."""

__version__ = "0.1.0"
