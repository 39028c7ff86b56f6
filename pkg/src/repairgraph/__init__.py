"""Generate, execute and repair Python functions with an LLM in a state graph."""

__version__ = "0.1.0"
