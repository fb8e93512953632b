#!/usr/bin/env python3
"""
PackAudit - CLI Launcher
Checks dependencies, then hands the arguments to the command-line app
"""

import sys
from pathlib import Path

# Add the project to path
sys.path.insert(0, str(Path(__file__).parent))


def check_dependencies():
    """Check if required dependencies are installed"""
    missing = []
    for module, package in (("numpy", "numpy"), ("scipy", "scipy"), ("sklearn", "scikit-learn"),
                            ("imblearn", "imbalanced-learn"),
                            ("pandas", "pandas"), ("joblib", "joblib"), ("tqdm", "tqdm")):
        try:
            __import__(module)
        except ImportError:
            missing.append(package)

    try:
        import matplotlib  # noqa: F401
    except ImportError:
        print("⚠️  matplotlib not installed - boxplot.svg will be skipped", file=sys.stderr)

    if missing:
        print("❌ Missing dependencies:", file=sys.stderr)
        for dep in missing:
            print(f"   - {dep}", file=sys.stderr)
        print("\n💡 Install with: pip install " + " ".join(missing), file=sys.stderr)
        return False
    return True


def main():
    if not check_dependencies():
        sys.exit(1)
    from src.cli.main_app import main as cli_main
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
