"""
Patch-to-label activity recognition

Channel-independent patch Transformer that labels, segments and forecasts
human activity from wearable sensor streams. See README.rst for usage.
"""
