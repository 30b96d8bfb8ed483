"""Parameter and multiply-accumulate accounting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .model import T2TViT

PARAM_CONVENTION = (
    "params: every trainable scalar, including linear biases, LayerNorm gain/shift, "
    "class token, tokenizer projection and classifier head; fixed sinusoidal "
    "position tables and Performer random features are not parameters"
)
MAC_CONVENTION = (
    "MACs: multiply-accumulates of matrix products only, for one image; linear = "
    "l*d_in*d_out; softmax attention = 2*l^2*d; Performer attention = "
    "4*l*d*m + heads*l*m; convolutions as im2col products; the classifier head runs "
    "on the class token only; biases, norms, activations, softmax and gates are free"
)


@dataclass
class CostRow:
    name: str
    params: int
    macs: int | None = None


@dataclass
class CostReport:
    model: str
    rows: list[CostRow] = field(default_factory=list)
    convention: str = PARAM_CONVENTION
    input_size: int | None = None

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs or 0 for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "params", "macs"])
        for r in self.rows:
            writer.writerow([r.name, r.params, "" if r.macs is None else r.macs])
        writer.writerow(["total", self.total_params, self.total_macs if self.has_macs else ""])
        return buf.getvalue()

    @property
    def has_macs(self) -> bool:
        return any(r.macs is not None for r in self.rows)

    def to_text(self, per_layer: bool = True) -> str:
        lines = [f"# {self.model}" + (f" @ {self.input_size}x{self.input_size}" if self.input_size else ""), f"# {self.convention}"]
        if per_layer:
            width = max([len(r.name) for r in self.rows] + [5])
            lines.append(f"{'layer':<{width}}  {'params':>12}  {'MACs':>16}")
            for r in self.rows:
                macs = "" if r.macs is None else f"{r.macs:,}"
                lines.append(f"{r.name:<{width}}  {r.params:>12,}  {macs:>16}")
        lines.append(f"total params: {self.total_params:,} ({self.total_params / 1e6:.2f} M)")
        if self.has_macs:
            lines.append(f"total MACs:   {self.total_macs:,} ({self.total_macs / 1e9:.2f} G)")
        return "\n".join(lines)


def count_params(model: T2TViT) -> CostReport:
    """One row per named parameter tensor."""
    rows = [CostRow(name, p.size) for name, p in model.named_parameters()]
    return CostReport(model.cfg.name, rows, PARAM_CONVENTION)


def count_macs(model: T2TViT, input_size: int | None = None) -> CostReport:
    """One row per layer with its parameters and MACs at ``input_size``."""
    size = input_size or model.cfg.image_size
    rows = []
    for name, module, macs in model.cost_rows(size):
        if module is None:
            params = model.cls_token.size if name == "cls_token" else 0
        else:
            params = module.num_parameters()
        rows.append(CostRow(name, params, macs))
    if model.cfg.backbone.learned_pe:
        rows.append(CostRow("pos_embed", model.pos_embed.size, 0))
    return CostReport(model.cfg.name, rows, f"{PARAM_CONVENTION}; {MAC_CONVENTION}", size)
