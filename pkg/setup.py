from setuptools import setup, find_packages

setup(
    name="tcg-detector",
    version="0.1.0",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.21",
        "networkx>=2.6",
        "tqdm>=4.60",
    ],
    entry_points={
        "console_scripts": ["tcg-detector=tcg_detector.cli:main"],
    },
    author="Tom Campbell",
    description="Behavioral ransomware detection over temporal correlation graphs",
)
