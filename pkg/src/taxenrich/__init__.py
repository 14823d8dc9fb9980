"""Self-supervised taxonomy enrichment: term extraction from item titles and hypernym attachment."""

__version__ = "0.1.0"
