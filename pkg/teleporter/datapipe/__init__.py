"""Training-pair construction, manifests and timestep sampling."""
