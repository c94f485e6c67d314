"""
Setup configuration for ConDA-TTA
"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="conda-tta",
    version="1.0.0",
    description="Adaptation de domaine contrastive avec TTA pour la détection de falsifications",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["src", "src.*", "config"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.10",
    install_requires=[
        "python-dotenv>=1.0.0",
        "numpy>=2.0.0",
        "pandas>=2.2.0",
        "colorama>=0.4.6",
        "python-json-logger>=2.0.7",
        "tabulate>=0.9.0",
        "joblib>=1.3.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "pytest-cov>=3.0.0",
            "pytest-mock>=3.10.0",
            "scikit-learn>=1.4.0",
            "black>=22.0.0",
            "flake8>=4.0.0",
            "mypy>=0.950",
        ],
    },
    entry_points={
        "console_scripts": [
            "conda-tta=src.cli:main",
        ],
    },
    include_package_data=True,
    package_data={
        "config": ["*.conf"],
    },
)
