"""Judge-then-solve abstention control: contract parsing, rewards, GRPO, metrics."""

__version__ = "0.1.0"
