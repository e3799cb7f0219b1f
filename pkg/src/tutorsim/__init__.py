"""Simulated small-group tutoring practice.

Scenario catalog, chat-model gateway, prompt rendering, the
director/character session engine, feedback generation, an HTTP service,
and a transcript evaluation harness.
"""

__version__ = "0.1.0"
