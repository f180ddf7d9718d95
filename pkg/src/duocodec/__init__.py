"""duocodec: a two-substream learned video codec with a low-resolution base layer."""

__version__ = "0.1.0"
