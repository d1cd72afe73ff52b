"""NLOS-aided occupancy-grid exploration with a simulated single-photon LiDAR."""

__version__ = "0.1.0"
