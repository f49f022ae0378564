"""Synchronized multi-vantage-point web crawl pipeline.

A runnable template for cross-VP web measurement: plan generation, a
queue-and-barrier broker, crawl workers with an exact page-visit
lifecycle, a deterministic simulated web, and the cross-VP analytics.
"""

__version__ = "0.1.0"
