"""Tests for the adp package."""
