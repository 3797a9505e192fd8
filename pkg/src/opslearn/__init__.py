"""Self-learning management agents over a simulated microservice cluster.

The package wires three LLM-driven modules - a curriculum builder, a
hierarchical execution planner, and a knowledge curator - around a
deterministic cluster simulation with a Prometheus-flavored metrics
surface and a kubectl-subset shell. Trials run fully offline against
scripted oracle responses; a live HTTP completion endpoint is optional.
"""

__version__ = "0.1.0"
