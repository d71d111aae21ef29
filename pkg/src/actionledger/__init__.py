"""Per-sample difficulty ("action") scores from losses accumulated over training."""

from .analysis import (
    ClassStats,
    EnrichmentReport,
    GalleryManifest,
    RankReport,
    class_stats,
    extreme_enrichment,
    gallery_manifest,
    hypergeom_sf,
    rank,
)
from .errors import (
    ActionLedgerError,
    CoverageError,
    DuplicateRecordError,
    HeaderError,
    LabelError,
    TraceFormatError,
    UnknownComponentError,
)
from .ledger import (
    ActionLedger,
    ActionTable,
    FinalizePolicy,
    accumulate,
    action_score,
    finalize,
    merge,
    read_table,
    write_table,
)
from .trace_format import (
    LabelMap,
    TraceHeader,
    TraceRecord,
    TraceWriter,
    decode_record,
    encode_record,
    read_label_map,
    read_trace,
    validate_trace,
)

__version__ = "0.1.0"
