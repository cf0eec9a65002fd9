"""Repair pipeline services: parsing, detection, synthesis, patching and validation."""
