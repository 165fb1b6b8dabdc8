"""Region similarity scoring and benchmark runs."""
