"""ID token extraction."""
