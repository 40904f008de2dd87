"""Joint beamforming, reflection, association and placement for aerial-RIS
assisted secure multibeam satellite multicast."""

__version__ = "0.1.0"
