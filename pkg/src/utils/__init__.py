"""PackAudit utilities: structured logging and run configuration"""
