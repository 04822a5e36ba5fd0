"""Benchmark problems, offline/online orchestration and reporting."""
