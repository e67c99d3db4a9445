#!/usr/bin/env python3
"""
Setup script for ExpNote
"""

import importlib.util
import subprocess
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent
REQUIRED_PACKAGES = ("requests", "backoff", "pytest")
REQUIRED_DATA = (
    Path("expnote") / "data" / "vocabulary.txt",
    Path("prompts") / "lets",
    Path("prompts") / "clutrr",
    Path("prompts") / "mets",
    Path("prompts") / "emoji",
)


def check_python_version(version_info=sys.version_info):
    """Check if Python version is compatible"""
    if version_info < (3, 10):
        print("❌ Python 3.10 or higher is required")
        return False
    print(f"✅ Python {version_info[0]}.{version_info[1]} detected")
    return True


def install_requirements(root=PROJECT_ROOT):
    requirements = root / "requirements.txt"
    if not requirements.is_file():
        print(f"❌ {requirements} not found")
        return False
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", str(requirements)])
        print("✅ Successfully installed requirements")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Failed to install requirements: {e}")
        return False


def missing_packages(find_spec=importlib.util.find_spec):
    """Names from REQUIRED_PACKAGES that still cannot be imported."""
    return [name for name in REQUIRED_PACKAGES if find_spec(name) is None]


def missing_data(root=PROJECT_ROOT):
    """Bundled vocabulary and prompt directories absent from the checkout."""
    return [str(path) for path in REQUIRED_DATA if not (root / path).exists()]


def main():
    """Main setup routine"""
    print("🔧 Setting up ExpNote...")

    if not check_python_version():
        return False

    if not install_requirements():
        return False

    packages = missing_packages()
    if packages:
        print(f"❌ Still not importable after install: {', '.join(packages)}")
        return False

    data = missing_data()
    if data:
        print(f"❌ Bundled data missing from the checkout: {', '.join(data)}")
        return False
    print("✅ Vocabulary and prompt bundles found")

    print("🎉 Setup complete! Try a deterministic run with:")
    print("   python3 expnote_cli.py train --backend scripted --script tests/fixtures/golden/script.jsonl \\")
    print("       --train tests/fixtures/golden/train.jsonl --n-train 2 --out runs/golden")
    print("Run the test suite with:")
    print("   python3 -m pytest")
    return True


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
