# Mesh-based inverse rendering package
__version__ = "1.0.0"
