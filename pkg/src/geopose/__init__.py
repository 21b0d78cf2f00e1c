"""geopose: desk-scale 6D object pose estimation from point clouds."""

__version__ = "0.1.0"
