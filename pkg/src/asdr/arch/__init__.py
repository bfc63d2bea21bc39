"""Cycle-level model of the compute-in-memory rendering accelerator."""
