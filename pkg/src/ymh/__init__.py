"""Yang-Mills-Higgs numerical lab."""

__version__ = "0.1.0"
