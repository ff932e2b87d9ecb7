"""Approximate dynamic programming with relaxed linear programs."""
