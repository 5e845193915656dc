from setuptools import setup

setup(
    name="mmhar",
    version="0.1.0",
    py_modules=[
        "bililstm", "cli", "config", "cost_tracking", "ctc", "errors", "evaluation", "gru", "hmm", "lpn",
        "model", "nncore", "pcloud", "spca", "storage", "stream", "synth", "train",
    ],
    install_requires=[
        "numpy>=1.24.0",
        "pandas>=2.0.0",
        "python-dotenv>=1.0.0",
        "psutil>=5.8.0",
    ],
    entry_points={"console_scripts": ["mmhar = cli:main"]},
)
