"""Two-stream skeleton hand-gesture recognition."""
