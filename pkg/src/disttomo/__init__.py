"""Link delay distribution tomography from unicast path measurements."""

from .gh import GHModel, gh_approximate, gh_cdf, gh_mgf, gh_sample, gh_validate
from .topology import PathLinkMatrix, is_k_identifiable

__version__ = "0.1.0"

__all__ = [
    "GHModel",
    "PathLinkMatrix",
    "gh_approximate",
    "gh_cdf",
    "gh_mgf",
    "gh_sample",
    "gh_validate",
    "is_k_identifiable",
]
