"""synthscope: a forensic-pipeline engine that detects and explains
AI-generated-image artifacts in low-resolution images."""

__version__ = "0.1.0"
