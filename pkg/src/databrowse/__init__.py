"""databrowse: a scientific-data browsing engine.

Resolve compact data-set URIs to a self-describing array model,
aggregate time-partitioned remote files into one series, render series
and spectrograms to PNG/SVG, and drive the whole pipeline through the
library, the CLI, or the HTTP service.
"""

from .aggregation import AggregationPlan, aggregate_read, expand, merge
from .chrono import (FileTemplate, TimeInterval, enumerate_intervals,
                     format_template, match_template, parse_timerange)
from .datasource import (PluginRegistry, about_plugins, default_registry,
                         read_ascii, read_qds, write_csv, write_qds)
from .dom import DOM
from .qdataset import (Datum, DatumRange, QDataSet, Units, add, convert,
                       dimensionality, divide, histogram, make_dataset,
                       maximum, mean, minimum, multiply, rank, slice0,
                       slice1, subtract, total, validity)
from .render import autorange, render_canvas, render_type_default, ticks
from .service import Service, make_server, plot_bytes
from .uri import DataSetURI, complete, format_uri, parse_uri, validate
from .vfs import Vfs, cache_root

__version__ = "0.1.0"

__all__ = [
    "AggregationPlan", "aggregate_read", "expand", "merge",
    "FileTemplate", "TimeInterval", "enumerate_intervals", "format_template",
    "match_template", "parse_timerange",
    "PluginRegistry", "about_plugins", "default_registry", "read_ascii",
    "read_qds", "write_csv", "write_qds",
    "DOM",
    "Datum", "DatumRange", "QDataSet", "Units", "add", "convert",
    "dimensionality", "divide", "histogram", "make_dataset", "maximum",
    "mean", "minimum", "multiply", "rank", "slice0", "slice1", "subtract",
    "total", "validity",
    "autorange", "render_canvas", "render_type_default", "ticks",
    "Service", "make_server", "plot_bytes",
    "DataSetURI", "complete", "format_uri", "parse_uri", "validate",
    "Vfs", "cache_root",
]
