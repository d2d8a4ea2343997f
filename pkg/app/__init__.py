"""
EDCA Repetition Delay Analyzer
Delay, reliability and platoon-stability analysis of 802.11bd EDCA with packet repetitions
"""

__version__ = "1.0.0"
__author__ = "EDCA Analysis Team"
