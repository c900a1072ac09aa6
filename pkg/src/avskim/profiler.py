"""Analytic parameter and MACs-per-second accounting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .config import SUBSYSTEMS, ModelConfig, declare_layers
from .nn_core import layer_cost
from .weights import WeightStore

MAC_CONVENTION = (
    "MAC = one scalar weight multiply (with its accumulate); additions, activations, "
    "pooling and element-wise mask products are not counted"
)


@dataclass(frozen=True)
class CostRow:
    path: str
    subsystem: str
    params: int
    macs_per_frame: int
    rate: Fraction  # frames (or steps) per second at the layer's native rate

    @property
    def macs_per_s(self) -> Fraction:
        return self.macs_per_frame * self.rate


@dataclass
class CostReport:
    rows: list
    config: Optional[ModelConfig] = None
    subsystems: dict = field(init=False)

    def __post_init__(self):
        self.subsystems = {}
        for r in self.rows:
            p, m = self.subsystems.get(r.subsystem, (0, Fraction(0)))
            self.subsystems[r.subsystem] = (p + r.params, m + r.macs_per_s)

    @property
    def total_params(self) -> int:
        return sum(p for p, _ in self.subsystems.values())

    @property
    def total_macs_per_s(self) -> Fraction:
        return sum((m for _, m in self.subsystems.values()), Fraction(0))

    def subsystem(self, name: str) -> tuple:
        return self.subsystems.get(name, (0, Fraction(0)))

    def to_text(self) -> str:
        lines = [f"# {MAC_CONVENTION}", "# params in millions (M), MACs per second of input in billions (G)"]
        lines.append(f"{'layer':<28}{'subsystem':<11}{'params':>11}{'rate/s':>9}{'MACs/s':>16}")
        for r in self.rows:
            lines.append(f"{r.path:<28}{r.subsystem:<11}{r.params:>11,}{float(r.rate):>9g}{float(r.macs_per_s):>16,.0f}")
        lines.append("")
        for name in SUBSYSTEMS:
            if name in self.subsystems:
                p, m = self.subsystems[name]
                lines.append(f"{name:<12}{p / 1e6:9.4f} M {float(m) / 1e9:9.4f} G")
        lines.append(f"{'total':<12}{self.total_params / 1e6:9.4f} M {float(self.total_macs_per_s) / 1e9:9.4f} G")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "subsystem", "params", "macs_per_frame", "rate_per_s", "macs_per_s"])
        for r in self.rows:
            w.writerow([r.path, r.subsystem, r.params, r.macs_per_frame, float(r.rate), float(r.macs_per_s)])
        for name, (p, m) in self.subsystems.items():
            w.writerow([f"total:{name}", name, p, "", "", float(m)])
        w.writerow(["total", "", self.total_params, "", "", float(self.total_macs_per_s)])
        return buf.getvalue()


def profile(config: ModelConfig, weights: Optional[WeightStore] = None) -> CostReport:
    """Cost of every declared layer.

    With ``weights`` the store is audited first (missing, orphan or misshapen
    tensors raise) and parameter counts come from the stored tensor shapes.
    """
    if weights is not None:
        weights.audit(config)
    rows = []
    for decl in declare_layers(config):
        params, macs = layer_cost(decl.spec)
        if weights is not None:
            params = sum(weights[name].size for name in decl.tensor_shapes())
        rows.append(CostRow(decl.path, decl.subsystem, params, macs, decl.rate))
    return CostReport(rows, config)
