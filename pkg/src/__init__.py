"""
PackAudit
Predictive-maintenance classifier auditing with streaming anomaly detectors
"""

__version__ = "1.0.0"
