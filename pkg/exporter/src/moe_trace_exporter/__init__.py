"""Gate-score trace exporter for MoE models.

Attaches observation-only forward hooks to a model's gating modules and
records post-softmax score vectors, tagged prefill/decode by token origin,
to the moelab binary trace format.
"""

__version__ = "0.1.0"

from .session import (ExportError, ExportSession, ExportStats, HookHandle,
                      attach_hooks, export_run)
from .toy_model import MODEL_REGISTRY, ToyMoELM, build_model
from .writer import TraceFileWriter
