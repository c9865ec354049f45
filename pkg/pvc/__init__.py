"""Progressive visual token compression: vision stack, checks and budget analyzer."""

__version__ = "1.0.0"
