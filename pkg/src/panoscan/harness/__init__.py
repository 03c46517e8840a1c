from .config import RunConfig
from .io import (FormatError, ManifestEntry, load_frames, load_manifest, load_scanpaths, read_pnm,
                 save_scanpaths, write_pnm)
from .synth import SyntheticSpec, synthesize

__all__ = ["RunConfig", "FormatError", "ManifestEntry", "load_frames", "load_manifest", "load_scanpaths",
           "read_pnm", "save_scanpaths", "write_pnm", "SyntheticSpec", "synthesize"]
