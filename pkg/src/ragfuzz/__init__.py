"""ragfuzz: coverage-guided stateful RTSP fuzzing with retrieval-augmented crews."""

__version__ = "0.1.0"
