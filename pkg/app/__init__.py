"""
PCLab: patronizing and condescending language detection with a numpy encoder-decoder
"""

__version__ = "0.1.0"
