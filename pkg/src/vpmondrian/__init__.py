"""Online Mondrian Forests with emulated reduced-precision floating point."""
from ._backend import BACKEND
from .evaluation import (
    ConfusionMatrix,
    PrequentialReport,
    aggregate_orderings,
    delta_f1,
    macro_f1,
    micro_f1,
    prequential_run,
)
from .forest import (
    DimensionMismatch,
    ForestConfig,
    MondrianForest,
    footprint_bytes,
    node_bytes,
    sample_split,
)
from .instrument import (
    InstrumentationMode,
    Mode,
    NonFiniteBound,
    NonFiniteFeature,
    NonFiniteValue,
    store_bounds,
    wi_op,
    wi_value,
)
from .stream import StreamSample, featurize_windows, normalize, shuffle_stream, synthesize
from .vprec import (
    BINARY32,
    BINARY64,
    Op,
    OverflowPolicy,
    PrecisionFormat,
    RangeOverflow,
    dynamic_range,
    round_array,
    round_to_precision,
    rounded_arith,
)

__version__ = "0.1.0"
