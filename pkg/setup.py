#!/usr/bin/env python3
"""
setup.py - Packaging script for the moe-shear expert pruning toolkit

Installs the library packages plus the `moe-shear` console command.

Usage:
    pip install -e .
"""
from pathlib import Path

from setuptools import find_packages, setup

# Constants
PROJECT_DIR = Path(__file__).resolve().parent
REQUIREMENTS_FILE = PROJECT_DIR / "requirements.txt"
README_FILE = PROJECT_DIR / "README.md"


def read_requirements():
    """Install requirements from requirements.txt, skipping comments and test-only tools"""
    requirements = []
    for line in REQUIREMENTS_FILE.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("pytest"):
            continue
        requirements.append(line)
    return requirements


setup(
    name="moe-shear",
    version="1.0.0",
    description="Task-agnostic expert pruning for sparse Mixture-of-Experts layers",
    long_description=README_FILE.read_text(encoding="utf-8") if README_FILE.exists() else "",
    long_description_content_type="text/markdown",
    python_requires=">=3.8",
    packages=find_packages(exclude=("tests", "tests.*", "examples", "examples.*")),
    py_modules=["app", "config"],
    install_requires=read_requirements(),
    extras_require={"test": ["pytest>=7.0"]},
    entry_points={"console_scripts": ["moe-shear=app:main"]},
)
