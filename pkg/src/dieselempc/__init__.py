"""Economic MPC of diesel feedgas emissions over a recurrent emissions model,
with a surrogate airpath plant, synthetic training data and a scenario harness."""

__version__ = "0.1.0"
