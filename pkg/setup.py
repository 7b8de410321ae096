from setuptools import setup, find_packages
import os

# Read version from version.py
version = {}
with open(os.path.join(os.path.dirname(__file__), 'plebo', 'version.py')) as f:
    exec(f.read(), version)

setup(
    name="plebo",
    version=version['__version__'],
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    include_package_data=True,
    install_requires=[
        "numpy>=1.26",
        "scipy>=1.11",
        "pandas>=2.1",
        "matplotlib>=3.8",
        "pyyaml>=6.0",
        "rich==14.0.0",
        "tqdm==4.67.1",
        "loguru==0.7.3",
        "psutil==7.0.0",
        "python-dotenv==1.1.1",
        "setuptools==80.9.0",
        "pydantic==2.11.7",
    ],
    extras_require={
        "test": ["pytest>=8.0"],
    },
    entry_points={
        "console_scripts": [
            "plebo = plebo.cli:main",
        ],
    },
    description="Learn Gaussian-process hyperparameter priors from past tasks and benchmark Bayesian optimisation",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.10",
)
