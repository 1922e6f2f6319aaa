"""uacbridge: turn audio into the file formats the unitaccent toolkit reads.

The bridge only writes files; it never imports the toolkit, so either side
can be installed without the other.
"""

__version__ = "0.1.0"

from .errors import BridgeError
from .formats import (
    write_fuf1,
    write_manifest,
    write_posterior_file,
    write_token_sequences,
)

__all__ = [
    "BridgeError",
    "write_fuf1",
    "write_manifest",
    "write_posterior_file",
    "write_token_sequences",
]
