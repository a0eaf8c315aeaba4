"""Tests for crpevi."""
