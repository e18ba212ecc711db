"""Test suite for tcg_detector"""
# Empty __init__.py to mark tests as a Python package
