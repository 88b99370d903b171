"""QoS- and interference-constrained sub-band allocation for MB-OFDM UWB users."""

__version__ = "1.0.0"
