"""Evaluation benchmarks: cluster audits, performance prediction, task selection."""
