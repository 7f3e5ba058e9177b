"""Object-level multi-modal knowledge bases: build, align, store, query,
benchmark.

Triplets carry textual labels; visual entities and relations additionally
carry region-level image groundings. All large-model inference is delegated
to external HTTP providers, so the package itself stays deterministic.
"""

from .graph import (Box, Entity, Kind, KnowledgeGraph, Provenance,
                    RegionAnnotation, Relation, RleMask, SourceRef, Triplet,
                    VerifyState, normalize_label)
from .persistence import (FORMAT_VERSION, MediaManifest, MediaManifestEntry,
                          MediaSource, import_media_manifest, load_kb, save_kb)
from .schema import RelationSchema

__version__ = "0.1.0"

__all__ = [
    "Box", "Entity", "Kind", "KnowledgeGraph", "Provenance",
    "RegionAnnotation", "Relation", "RleMask", "SourceRef", "Triplet",
    "VerifyState", "normalize_label",
    "FORMAT_VERSION", "MediaManifest", "MediaManifestEntry", "MediaSource",
    "import_media_manifest", "load_kb", "save_kb",
    "RelationSchema", "__version__",
]
