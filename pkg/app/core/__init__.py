"""
Core configuration and utilities.
"""
