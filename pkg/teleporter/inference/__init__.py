"""Zoom-in geometry and end-to-end teleportation."""
