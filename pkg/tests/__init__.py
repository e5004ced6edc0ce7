"""
Tests for the matrix RL lab
"""
