"""Test suite for the a3gn attack generator."""
