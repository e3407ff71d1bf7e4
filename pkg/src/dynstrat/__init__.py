"""Trust-region simulation optimization with dynamic post-stratified adaptive sampling."""

__version__ = "0.1.0"
