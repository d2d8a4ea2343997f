"""
Utility functions for configuration loading and result output
"""

from .helpers import *

__all__ = ['setup_logging', 'axis_values', 'write_csv', 'format_ms', 'format_probability']
