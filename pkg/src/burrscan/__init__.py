"""burrscan: offline DNS tunnel detection from domain-name length statistics."""

__version__ = "0.1.0"
