"""Corpus-to-embedding exporter for the memerobust toolkit.

Reads a listing of meme images with their extracted text and labels, encodes
both channels with a pluggable encoder, and writes the toolkit's manifest +
binary embedding store. The file formats are the only coupling to the main
package; nothing is imported from it.
"""

from .encoders import get_encoder
from .export import CorpusEntry, export, read_listing

__version__ = "0.1.0"
