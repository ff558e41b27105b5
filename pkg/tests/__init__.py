"""Tests for retrain_audit."""
