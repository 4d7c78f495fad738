"""Desk-scale simulator of a bandwidth-constrained host-chip video
acquisition loop: ROI-weighted quadtree skip/acquire coding on the chip,
detection and Kalman tracking on the host, predicted ROIs fed back."""

__version__ = "0.1.0"
