"""
Event-driven energy accounting: synaptic operations and neuron updates.

Energy = synops * e_syn + updates * e_upd; average power divides by audio
duration. The figure is a lower bound: the sinc filterbank, framing and the
real-valued input currents of the first convolution are ordinary DSP and are
reported only as a MAC count.
"""

from __future__ import annotations

from dataclasses import dataclass

from .snn import RunTrace

ACCOUNTING_NOTES = (
    "readout neurons counted as neuron updates",
    "attention product counted as one synop per surviving spike",
    "sinc filtering, framing and real-valued sConv1D input excluded (DSP MACs listed separately)",
)


@dataclass(frozen=True)
class EnergyModel:
    e_syn: float = 23.6e-12
    e_upd: float = 81e-12
    name: str = "loihi"

    def __post_init__(self):
        if not (self.e_syn > 0 and self.e_upd > 0):
            raise ValueError("per-op energies must be positive")

    @classmethod
    def from_pj(cls, e_syn_pj: float, e_upd_pj: float, name: str = "custom") -> "EnergyModel":
        return cls(e_syn_pj * 1e-12, e_upd_pj * 1e-12, name)


LOIHI = EnergyModel()


@dataclass(frozen=True)
class OpCounts:
    synops: int
    updates: int


@dataclass(frozen=True)
class LayerPower:
    name: str
    synops: int
    updates: int
    energy: float


@dataclass(frozen=True)
class PowerReport:
    synops: int
    updates: int
    energy: float
    avg_power: float
    duration_s: float
    model: EnergyModel
    layers: tuple[LayerPower, ...] = ()
    dsp_macs: int = 0
    label: str = "lower bound"

    @property
    def floor_power(self) -> float:
        return self.updates * self.model.e_upd / self.duration_s


def count_ops(trace: RunTrace) -> OpCounts:
    synops = updates = 0
    for lt in trace.layers:
        if lt.spike_count < 0 or lt.fan_out < 0 or lt.n_neurons < 0:
            raise ValueError(f"negative count in layer {lt.name!r}")
        if lt.spike_count > lt.n_neurons * trace.n_steps:
            raise ValueError(f"layer {lt.name!r}: {lt.spike_count} spikes exceed "
                             f"{lt.n_neurons} neurons x {trace.n_steps} steps")
        synops += lt.spike_count * lt.fan_out
        if lt.stateful:
            updates += lt.n_neurons * trace.n_steps
    return OpCounts(synops, updates)


def estimate_power(counts: OpCounts, model: EnergyModel = LOIHI, duration_s: float = 1.0,
                   trace: RunTrace | None = None) -> PowerReport:
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    energy = counts.synops * model.e_syn + counts.updates * model.e_upd
    layers = ()
    dsp = 0
    if trace is not None:
        rows = []
        for lt in trace.layers:
            syn = lt.spike_count * lt.fan_out
            upd = lt.n_neurons * trace.n_steps if lt.stateful else 0
            rows.append(LayerPower(lt.name, syn, upd, syn * model.e_syn + upd * model.e_upd))
        layers = tuple(rows)
        dsp = trace.dsp_macs
    return PowerReport(counts.synops, counts.updates, energy, energy / duration_s, duration_s,
                       model, layers, dsp)


def power_from_trace(trace: RunTrace, model: EnergyModel = LOIHI) -> PowerReport:
    return estimate_power(count_ops(trace), model, trace.duration_s, trace)


def format_power(report: PowerReport) -> str:
    m = report.model
    lines = [
        f"# energy model: {m.name} (e_syn = {m.e_syn * 1e12:g} pJ, e_upd = {m.e_upd * 1e12:g} pJ)",
        *(f"# {note}" for note in ACCOUNTING_NOTES),
        f"{'layer':<10}{'synops':>12}{'updates':>12}{'energy_nJ':>12}",
    ]
    for lp in report.layers:
        lines.append(f"{lp.name:<10}{lp.synops:>12}{lp.updates:>12}{lp.energy * 1e9:>12.3f}")
    lines += [
        f"{'total':<10}{report.synops:>12}{report.updates:>12}{report.energy * 1e9:>12.3f}",
        f"duration_s = {report.duration_s:.3f}",
        f"avg_power = {report.avg_power * 1e6:.3f} uW ({report.label})",
        f"update_floor = {report.floor_power * 1e6:.3f} uW",
        f"dsp_macs (excluded) = {report.dsp_macs}",
    ]
    return "\n".join(lines)


def format_power_delimited(report: PowerReport, sep: str = ",") -> str:
    rows = [sep.join(("layer", "synops", "updates", "energy_j"))]
    for lp in report.layers:
        rows.append(sep.join((lp.name, str(lp.synops), str(lp.updates), repr(lp.energy))))
    rows.append(sep.join(("total", str(report.synops), str(report.updates), repr(report.energy))))
    return "\n".join(rows) + "\n"
