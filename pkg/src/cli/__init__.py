"""
PackAudit - Command-line interface
"""

from .main_app import main

__all__ = ['main']
