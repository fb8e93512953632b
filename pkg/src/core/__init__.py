"""
PackAudit core: telemetry, fleet, preprocessing, forest, detectors,
streaming audit and evaluation
"""
