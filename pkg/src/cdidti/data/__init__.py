"""Feature storage, synthetic data and split protocols."""
