"""reservoirkit: echo-state networks for forecasting and wavepacket propagation."""

__version__ = "0.1.0"
