"""Grasp-loop topological signatures for rope manipulation planning."""
