"""Export sessions: hook a model's gates and stream scores to a trace file.

The hooks are observation-only: they read each gate's softmax output and
queue a copy, never altering activations, so model outputs with and without
hooks attached are bitwise identical. Phase tagging follows token origin:
positions processed while consuming the prompt are prefill, tokens the model
generated itself are decode.

Only routed-expert gate scores are recorded. Architectures with extra
always-on (shared) experts contribute nothing for them here, since those
experts receive no gate scores to observe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from .toy_model import ToyMoELM
from .writer import PHASE_DECODE, PHASE_PREFILL, TraceFileWriter


class ExportError(Exception):
    pass


@dataclass
class ExportSession:
    model: ToyMoELM
    model_id: str
    out_path: Path
    num_layers: int
    num_experts: int
    max_prefill_tokens: int | None = None
    max_decode_tokens: int = 4
    _handle: "HookHandle | None" = field(default=None, repr=False)

    @classmethod
    def for_model(cls, model: ToyMoELM, model_id: str, out_path,
                  max_prefill_tokens=None, max_decode_tokens=4):
        return cls(model=model, model_id=model_id, out_path=Path(out_path),
                   num_layers=model.num_layers,
                   num_experts=model.num_experts,
                   max_prefill_tokens=max_prefill_tokens,
                   max_decode_tokens=max_decode_tokens)


class HookHandle:
    """Attached gate hooks plus the in-process score queue.

    Hook callbacks append (layer, scores) in forward order; the exporter
    drains the queue sequentially after each forward pass.
    """

    def __init__(self, session: ExportSession):
        self.session = session
        self.queue: list[tuple[int, torch.Tensor]] = []
        self._hooks = []
        gates = session.model.gate_modules()
        if len(gates) != session.num_layers:
            raise ExportError(
                f"session expects {session.num_layers} gated layers, model "
                f"exposes {len(gates)}; aborting before writing")
        for layer, gate in enumerate(gates):
            self._hooks.append(gate.register_forward_hook(
                self._make_hook(layer)))

    def _make_hook(self, layer: int):
        def hook(module, args, output):
            self.queue.append((layer, output.detach().to("cpu")))
            return None  # observation only
        return hook

    def drain(self):
        out = self.queue
        self.queue = []
        return out

    def remove(self):
        for h in self._hooks:
            h.remove()
        self._hooks = []
        if self.session._handle is self:
            self.session._handle = None


def attach_hooks(session: ExportSession) -> HookHandle:
    """Register observation hooks on every gating module.

    Raises before any file is written when the model's gated layer count
    does not match the session.
    """
    if session._handle is not None:
        raise ExportError("hooks already attached for this session")
    handle = HookHandle(session)
    session._handle = handle
    return handle


@dataclass
class ExportStats:
    path: Path
    prefill_records: int = 0
    decode_records: int = 0
    prompts: int = 0

    @property
    def total(self) -> int:
        return self.prefill_records + self.decode_records

    @property
    def empty(self) -> bool:
        return self.total == 0

    def summary_line(self) -> str:
        note = " (EMPTY: header-only trace)" if self.empty else ""
        return (f"{self.path}: {self.prompts} prompts, "
                f"{self.prefill_records} prefill + "
                f"{self.decode_records} decode records{note}")


def export_run(session: ExportSession, prompts: list[str]) -> ExportStats:
    """Run prefill + greedy decode over each prompt, writing one trace file.

    One prompt is one batch; token ids are sequence positions (prompt
    positions are prefill, generated positions decode). The CRC trailer is
    written only on clean completion, so aborted runs leave an invalid file.
    """
    if session._handle is None:
        raise ExportError("attach_hooks(session) must be called first")
    handle = session._handle
    stats = ExportStats(path=Path(session.out_path))
    model = session.model
    with TraceFileWriter(session.out_path, session.num_experts,
                         session.num_layers) as writer, torch.no_grad():
        for batch, prompt in enumerate(prompts):
            stats.prompts += 1
            tokens = model.tokenize(prompt)
            if session.max_prefill_tokens is not None:
                tokens = tokens[:session.max_prefill_tokens]
            if not tokens:
                continue
            handle.drain()  # defensive: start each prompt from a clean queue

            logits = model(torch.tensor(tokens))
            for layer, scores in handle.drain():
                for row in range(scores.shape[0]):
                    writer.write(batch, layer, row, PHASE_PREFILL,
                                 scores[row].numpy())
                    stats.prefill_records += 1

            position = len(tokens)
            current = int(logits[-1].argmax())
            for _ in range(session.max_decode_tokens):
                step_logits = model(torch.tensor([current]))
                for layer, scores in handle.drain():
                    writer.write(batch, layer, position, PHASE_DECODE,
                                 scores[0].numpy())
                    stats.decode_records += 1
                current = int(step_logits[-1].argmax())
                position += 1
    return stats
