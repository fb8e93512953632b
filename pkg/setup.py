#!/usr/bin/env python3
"""
Setup script for PackAudit
Creates ./venv, installs requirements.txt and checks the install:
every pipeline package must import and the shipped presets must resolve.

    python3 setup.py            # interactive
    python3 setup.py --yes      # recreate an existing venv without asking
    python3 setup.py --tests    # also run the fast test suite
"""

import argparse
import os
import shutil
import subprocess
import sys
from pathlib import Path

VENV = Path("venv")
BIN = VENV / ("Scripts" if os.name == "nt" else "bin")

# import name -> requirements.txt name
REQUIRED = {
    "numpy": "numpy",
    "scipy": "scipy",
    "sklearn": "scikit-learn",
    "imblearn": "imbalanced-learn",
    "pandas": "pandas",
    "joblib": "joblib",
    "tqdm": "tqdm",
    "pytest": "pytest",
}
OPTIONAL = {"matplotlib": "matplotlib (report boxplot.svg)"}
PRESETS = ("smoke", "full", "lagged")


def run_command(cmd, description, show_output=False):
    """Run a command list and report the outcome"""
    print(f"🔧 {description}...")
    try:
        result = subprocess.run(cmd, check=True, capture_output=True, text=True)
        print(f"✅ {description} completed")
        if show_output and result.stdout.strip():
            print(result.stdout.rstrip())
        return True
    except (subprocess.CalledProcessError, OSError) as e:
        print(f"❌ {description} failed: {e}")
        print(f"Error output: {getattr(e, 'stderr', '')}")
        return False


def _venv_python():
    return str(BIN / ("python.exe" if os.name == "nt" else "python"))


def create_venv(assume_yes):
    if VENV.exists():
        print("⚠️  Virtual environment already exists")
        answer = "y" if assume_yes else input("Recreate virtual environment? (y/N): ").lower().strip()
        if answer != "y":
            print("✅ Using existing virtual environment")
            return True
        shutil.rmtree(VENV)
    return run_command([sys.executable, "-m", "venv", str(VENV)], "Creating virtual environment")


def install_requirements():
    python = _venv_python()
    return (run_command([python, "-m", "pip", "install", "--upgrade", "pip"], "Upgrading pip")
            and run_command([python, "-m", "pip", "install", "-r", "requirements.txt"],
                            "Installing requirements"))


def check_imports():
    """Every required package imports inside the venv; optional ones only warn"""
    python = _venv_python()
    ok = True
    for module, dist in REQUIRED.items():
        ok &= run_command([python, "-c", f"import {module}"], f"Importing {dist}")
    for module, what in OPTIONAL.items():
        found = subprocess.run([python, "-c", f"import {module}"], capture_output=True).returncode == 0
        if not found:
            print(f"⚠️  {what} not installed; that output is skipped")
    return ok


def check_presets():
    """Dry-run fleetgen with each shipped preset: config resolves, nothing written"""
    python = _venv_python()
    ok = True
    for name in PRESETS:
        ok &= run_command([python, "launch_cli.py", "fleetgen", "--preset", name,
                           "--out", f"runs/{name}", "--dry-run"], f"Resolving preset {name!r}")
    return ok


def main():
    parser = argparse.ArgumentParser(description="Create the PackAudit virtual environment")
    parser.add_argument("--yes", action="store_true", help="recreate an existing venv without asking")
    parser.add_argument("--tests", action="store_true", help="run the fast test suite afterwards")
    args = parser.parse_args()

    print("🏭 PackAudit - Setup")
    print("=" * 40)

    if sys.version_info < (3, 9):
        print(f"❌ Python 3.9+ required. You have Python {sys.version}")
        sys.exit(1)
    print(f"✅ Python {sys.version.split()[0]} detected")

    if not create_venv(args.yes) or not install_requirements():
        sys.exit(1)
    if not check_imports() or not check_presets():
        sys.exit(1)
    if args.tests and not run_command([_venv_python(), "-m", "pytest", "-q", "-m", "not slow"],
                                      "Running fast tests", show_output=True):
        sys.exit(1)

    if os.name != "nt":
        run_command(["chmod", "+x", "run_pipeline.sh", "launch_cli.py"], "Making scripts executable")

    print("\n🎉 Setup complete!")
    print("\n🚀 Next:")
    print("   ./run_pipeline.sh runs/smoke smoke")
    print("   ./run_pipeline.sh runs/full full --jobs 4")
    print("\n📚 For help, see README.md")


if __name__ == "__main__":
    main()
