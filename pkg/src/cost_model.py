"""
Systolic-Array Cost Model

Analytical access counting for an output-stationary PE array with
zero-skipping: per-layer DRAM/cache/scratchpad/MAC counts, energy in
MAC-normalized units, and PE-bound throughput for the dense baseline,
the zero-skipping baseline, threshold-masked inference and pruned
baselines under Singular and Pipelined task schedules.

Model definition
----------------
P        passes = ceil(c_out / pe) * ceil(h_out*w_out / max(1, pe // min(c_out, pe))) per image
N_w      weight words, times (1 - weight_sparsity) for pruned baselines
nz_in    input words per image times (1 - s_in); nz_out likewise with s_out
macs     n_macs_dense * images * (1 - s_in) * (1 - weight_sparsity)
dram_w   "episode": N_w on a cold episode, 0 when warm
         "pass":    cold N_w + (P-1)*R, warm P*R, R = max(0, N_w - cache_w_words)
dram_t   n_output_neurons * images when thresholds are needed
dram_act nz_in * images * spill + nz_out * images, spill = max(1, ceil(nz_in bytes / act cache))
cache    N_w * P + nz_in * images * k_h * k_w (+ thresholds)
reg      3 * macs (+ 2 per output neuron with thresholds)
Case-1 runs with zero sparsity; the comparator costs one MAC per neuron.
"""

import logging
import math
from dataclasses import dataclass, field, replace, fields
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import ConfigError, MissingSparsityError
from .nn_core import LayerShape, NetworkSpec

logger = logging.getLogger(__name__)

WEIGHT_REUSE_POLICIES = ("episode", "pass")

# scratchpad words an output-stationary PE keeps live
SPAD_WORDS = 4

# task_id -> layer name -> (s_in, s_out)
SparsityTable = Mapping[str, Mapping[str, Tuple[float, float]]]


@dataclass(frozen=True)
class HardwareConfig:
    """PE array, on-chip buffers and normalized access energies."""

    pe_count: int = 1024
    cache_bytes_activation: int = 156 * 1024
    cache_bytes_weight: int = 156 * 1024
    cache_bytes_threshold: int = 156 * 1024
    spad_bytes: int = 512
    bytes_per_word: int = 2
    e_dram: float = 200.0
    e_cache: float = 6.0
    e_reg: float = 2.0
    e_mac: float = 1.0
    weight_reuse: str = "episode"

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name != "weight_reuse" and not value > 0:
                raise ConfigError(f"hardware.{f.name} must be > 0, got {value}")
        if not (self.e_dram > self.e_cache > self.e_reg >= self.e_mac):
            raise ConfigError("energies must satisfy e_dram > e_cache > e_reg >= e_mac")
        if self.weight_reuse not in WEIGHT_REUSE_POLICIES:
            raise ConfigError(f"weight_reuse must be one of {WEIGHT_REUSE_POLICIES}, got '{self.weight_reuse}'")
        if self.spad_bytes < SPAD_WORDS * self.bytes_per_word:
            raise ConfigError(f"spad_bytes must hold {SPAD_WORDS} words (weight, input, partial sum, threshold), "
                              f"got {self.spad_bytes}")
        if self.cache_bytes_threshold < self.pe_count * self.bytes_per_word:
            raise ConfigError(f"threshold cache must hold one threshold per PE, got {self.cache_bytes_threshold} bytes "
                              f"for {self.pe_count} PEs")

    @property
    def weight_cache_words(self) -> float:
        return self.cache_bytes_weight / self.bytes_per_word

    def with_cache_kb(self, kb: float) -> "HardwareConfig":
        """Same hardware with every cache resized to kb kilobytes."""
        size = int(kb * 1024)
        return replace(self, cache_bytes_activation=size, cache_bytes_weight=size,
                       cache_bytes_threshold=size)


class CaseKind(Enum):
    CASE1 = "case1"
    CASE2 = "case2"
    CASE3 = "case3"
    PRUNED = "pruned"


@dataclass(frozen=True)
class InferenceCase:
    kind: CaseKind
    weight_sparsity: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.weight_sparsity < 1.0:
            raise ConfigError(f"weight_sparsity must lie in [0, 1), got {self.weight_sparsity}")
        if self.kind is not CaseKind.PRUNED and self.weight_sparsity != 0.0:
            raise ConfigError("only pruned baselines carry weight sparsity")

    @property
    def label(self) -> str:
        if self.kind is CaseKind.PRUNED:
            return f"pruned{round(self.weight_sparsity * 100):g}"
        return self.kind.value

    @property
    def is_mime(self) -> bool:
        return self.kind is CaseKind.CASE3

    @classmethod
    def parse(cls, text: str) -> "InferenceCase":
        """Accepts case1, case2, case3, pruned, pruned:0.9 (and Case-1 style spellings)."""
        key = text.strip().lower().replace("-", "").replace("_", "")
        if key.startswith("pruned"):
            rest = key[len("pruned"):].lstrip(":")
            try:
                fraction = float(rest) if rest else 0.9
            except ValueError:
                raise ConfigError(f"pruned case needs a numeric weight sparsity, got '{text}'") from None
            return cls(CaseKind.PRUNED, fraction)
        for kind in CaseKind:
            if kind.value == key:
                return cls(kind)
        raise ConfigError(f"unknown inference case '{text}'")


CASE1 = InferenceCase(CaseKind.CASE1)
CASE2 = InferenceCase(CaseKind.CASE2)
CASE3 = InferenceCase(CaseKind.CASE3)


@dataclass(frozen=True)
class TaskSchedule:
    """Sequence of (task, image) slots processed in order."""

    mode: str
    slots: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if self.mode not in ("singular", "pipelined"):
            raise ConfigError(f"schedule mode must be singular or pipelined, got '{self.mode}'")
        if not self.slots:
            raise ConfigError("schedule has no images")
        if self.mode == "singular" and len(set(self.slots)) != 1:
            raise ConfigError("a singular schedule holds images of one task only")

    @classmethod
    def singular(cls, task_id: str, images: int = 3) -> "TaskSchedule":
        return cls("singular", (task_id,) * images)

    @classmethod
    def pipelined(cls, task_ids: Sequence[str], rounds: int = 1) -> "TaskSchedule":
        return cls("pipelined", tuple(task_ids) * rounds)

    @property
    def tasks(self) -> List[str]:
        return list(dict.fromkeys(self.slots))

    def segments(self) -> List[Tuple[str, int]]:
        """Runs of consecutive images of the same task."""
        runs: List[Tuple[str, int]] = []
        for task in self.slots:
            if runs and runs[-1][0] == task:
                runs[-1] = (task, runs[-1][1] + 1)
            else:
                runs.append((task, 1))
        return runs

    @property
    def task_switches(self) -> int:
        return len(self.segments()) - 1


@dataclass(frozen=True)
class Traffic:
    """Word and operation counts of one layer over some images."""

    dram_w: float = 0.0
    dram_t: float = 0.0
    dram_act_in: float = 0.0
    dram_act_out: float = 0.0
    cache_w: float = 0.0
    cache_t: float = 0.0
    cache_act: float = 0.0
    reg_accesses: float = 0.0
    macs: float = 0.0
    cmp_ops: float = 0.0

    def __add__(self, other: "Traffic") -> "Traffic":
        return Traffic(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    @property
    def dram_words(self) -> float:
        return self.dram_w + self.dram_t + self.dram_act_in + self.dram_act_out

    @property
    def cache_words(self) -> float:
        return self.cache_w + self.cache_t + self.cache_act


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energies in units of one MAC."""

    E_DRAM: float = 0.0
    E_cache: float = 0.0
    E_reg: float = 0.0
    E_MAC: float = 0.0

    @property
    def total(self) -> float:
        return self.E_DRAM + self.E_cache + self.E_reg + self.E_MAC

    def __add__(self, other: "EnergyBreakdown") -> "EnergyBreakdown":
        return EnergyBreakdown(self.E_DRAM + other.E_DRAM, self.E_cache + other.E_cache,
                               self.E_reg + other.E_reg, self.E_MAC + other.E_MAC)


@dataclass(frozen=True)
class LayerCostReport:
    layer: str
    mode: str
    case: str
    energy: EnergyBreakdown
    traffic: Traffic
    passes: int
    effective_macs: float
    dense_macs: float
    pe_count: int
    throughput_norm: float = 1.0


def passes(layer: LayerShape, hw: HardwareConfig, images_in_segment: int = 1) -> int:
    """
    Output-stationary passes, spatial positions first.

    Args:
        layer: Layer geometry
        hw: Hardware configuration
        images_in_segment: Images processed back to back

    Returns:
        Total number of passes
    """
    positions = layer.h_out * layer.w_out
    per_pass = max(1, hw.pe_count // min(layer.c_out, hw.pe_count))
    channel_groups = math.ceil(layer.c_out / hw.pe_count)
    return channel_groups * math.ceil(positions / per_pass) * images_in_segment


def _weight_words(layer: LayerShape) -> int:
    n = layer.c_out * layer.c_in * layer.k_h * layer.k_w
    return n + (layer.c_out if layer.has_bias else 0)


def layer_traffic(layer: LayerShape, hw: HardwareConfig, case: InferenceCase,
                  sparsity_in: float, sparsity_out: float, weight_residency: str = "cold",
                  threshold_needed: bool = False, images: int = 1) -> Traffic:
    """
    Word counts of one layer over one residency segment.

    Args:
        layer: Layer geometry
        hw: Hardware configuration
        case: Inference case
        sparsity_in: Fraction of zero input activations
        sparsity_out: Fraction of zero output activations
        weight_residency: "cold" (weights fetched) or "warm" (already cached)
        threshold_needed: Fetch and apply per-neuron thresholds
        images: Images in the segment

    Returns:
        Traffic

    Raises:
        ConfigError: On thresholds outside Case-3, bad sparsity or residency
    """
    if threshold_needed and not case.is_mime:
        raise ConfigError(f"thresholds are only fetched by case3, not {case.label}")
    if weight_residency not in ("cold", "warm"):
        raise ConfigError(f"weight_residency must be cold or warm, got '{weight_residency}'")
    for s in (sparsity_in, sparsity_out):
        if not 0.0 <= s <= 1.0:
            raise ConfigError(f"sparsity must lie in [0, 1], got {s}")
    if case.kind is CaseKind.CASE1:
        sparsity_in = sparsity_out = 0.0

    keep_w = 1.0 - case.weight_sparsity
    n_w = _weight_words(layer) * keep_w
    n_out = layer.n_outputs
    nz_in = layer.n_inputs * (1.0 - sparsity_in)
    nz_out = n_out * (1.0 - sparsity_out)
    dense_macs = n_out * layer.c_in * layer.k_h * layer.k_w
    macs = dense_macs * images * (1.0 - sparsity_in) * keep_w
    n_pass = passes(layer, hw, images)

    cold = weight_residency == "cold"
    if hw.weight_reuse == "pass":
        remainder = max(0.0, n_w - min(n_w, hw.weight_cache_words))
        dram_w = (n_w + (n_pass - 1) * remainder) if cold else n_pass * remainder
    else:
        dram_w = n_w if cold else 0.0

    thresholds = n_out * images if threshold_needed else 0
    spill = max(1, math.ceil(nz_in * hw.bytes_per_word / hw.cache_bytes_activation))

    return Traffic(
        dram_w=dram_w,
        dram_t=thresholds,
        dram_act_in=nz_in * images * spill,
        dram_act_out=nz_out * images,
        cache_w=n_w * n_pass,
        cache_t=thresholds,
        cache_act=nz_in * images * layer.k_h * layer.k_w,
        reg_accesses=3 * macs + 2 * thresholds,
        macs=macs,
        cmp_ops=thresholds,
    )


def energy_layer(traffic: Traffic, hw: HardwareConfig) -> EnergyBreakdown:
    """Weigh word counts by per-access energies."""
    return EnergyBreakdown(
        E_DRAM=hw.e_dram * traffic.dram_words,
        E_cache=hw.e_cache * traffic.cache_words,
        E_reg=hw.e_reg * traffic.reg_accesses,
        E_MAC=hw.e_mac * (traffic.macs + traffic.cmp_ops),
    )


def _layer_index(spec: NetworkSpec) -> Dict[str, Tuple[int, LayerShape]]:
    return {name: (i, layer) for i, (name, layer) in enumerate(zip(spec.layer_names(), spec.layers))}


def covered_layers(spec: NetworkSpec, sparsity: SparsityTable, tasks: Sequence[str]) -> List[str]:
    """Layers, in network order, that every task's sparsity covers."""
    for task in tasks:
        if task not in sparsity:
            raise MissingSparsityError(task)
    return [name for name in spec.layer_names() if all(name in sparsity[t] for t in tasks)]


def energy_schedule(spec: NetworkSpec, hw: HardwareConfig, case: InferenceCase, schedule: TaskSchedule,
                    sparsity: SparsityTable, layers: Sequence[str] = None,
                    threshold_kinds: Sequence[str] = ("conv", "fc")) -> List[LayerCostReport]:
    """
    Per-layer cost of a schedule.

    Conventional cases open a cold weight episode at every task segment.
    Case-3 loads weights cold on its first segment only and fetches the
    thresholds of every image.

    Args:
        spec: Network description
        hw: Hardware configuration
        case: Inference case
        schedule: Task schedule
        sparsity: Per task, per layer (s_in, s_out)
        layers: Layer names to report (default: all layers covered by every task)
        threshold_kinds: Layer kinds that carry thresholds

    Returns:
        One LayerCostReport per layer

    Raises:
        MissingSparsityError: If a task or requested layer has no sparsity
    """
    tasks = schedule.tasks
    names = list(layers) if layers is not None else covered_layers(spec, sparsity, tasks)
    index = _layer_index(spec)
    last = len(spec.layers) - 1
    reports = []
    for name in names:
        if name not in index:
            raise ConfigError(f"network has no layer '{name}'")
        i, layer = index[name]
        thresholded = case.is_mime and i < last and layer.kind in threshold_kinds
        traffic = Traffic()
        n_pass = 0
        for seg, (task, images) in enumerate(schedule.segments()):
            if task not in sparsity:
                raise MissingSparsityError(task)
            if name not in sparsity[task]:
                raise MissingSparsityError(task, name)
            s_in, s_out = sparsity[task][name]
            residency = "warm" if case.is_mime and seg > 0 else "cold"
            traffic = traffic + layer_traffic(layer, hw, case, s_in, s_out, residency, thresholded, images)
            n_pass += passes(layer, hw, images)
        dense = float(layer.n_outputs * layer.c_in * layer.k_h * layer.k_w * len(schedule.slots))
        effective = traffic.macs
        reports.append(LayerCostReport(
            layer=name,
            mode=schedule.mode,
            case=case.label,
            energy=energy_layer(traffic, hw),
            traffic=traffic,
            passes=n_pass,
            effective_macs=effective,
            dense_macs=dense,
            pe_count=hw.pe_count,
            throughput_norm=dense / effective if effective > 0 else math.inf,
        ))
        logger.debug(f"{case.label}/{schedule.mode} {name}: total={reports[-1].energy.total:.6g}")
    return reports


def throughput_layer(report: LayerCostReport, baseline: LayerCostReport) -> float:
    """
    Throughput relative to a baseline under the PE-bound cycle model.

    cycles = effective_macs / pe_count.
    """
    if report.layer != baseline.layer or report.dense_macs != baseline.dense_macs:
        raise ConfigError(f"cannot compare layer {report.layer} with baseline layer {baseline.layer}")
    cycles = report.effective_macs / report.pe_count
    if cycles == 0:
        return math.inf
    return (baseline.effective_macs / baseline.pe_count) / cycles


@dataclass(frozen=True)
class AblationRow:
    layer: str
    variant: str
    pe_count: int
    cache_kb: float
    energy: EnergyBreakdown
    ratio_vs_reference: float


def default_variants(hw: HardwareConfig, reduced_pe: int = 256,
                     reduced_cache_kb: float = 128) -> Dict[str, HardwareConfig]:
    """
    Reference hardware, a smaller PE array and smaller caches.

    Every variant re-streams non-resident weights per pass ("pass" reuse);
    under "episode" reuse the weight cache size never reaches DRAM traffic.
    """
    reference = replace(hw, weight_reuse="pass")
    return {
        "CaseA": reference,
        "CaseB": replace(reference, pe_count=reduced_pe),
        "CaseC": reference.with_cache_kb(reduced_cache_kb),
    }


def ablation_compare(spec: NetworkSpec, variants: Mapping[str, HardwareConfig], schedule: TaskSchedule,
                     sparsity: SparsityTable, case: InferenceCase = CASE3,
                     layers: Sequence[str] = None) -> List[AblationRow]:
    """
    Run energy_schedule per hardware variant; ratios are against the first variant.

    Returns:
        Rows ordered by layer, then variant
    """
    if not variants:
        raise ConfigError("ablation needs at least one hardware variant")
    results = {name: energy_schedule(spec, hw, case, schedule, sparsity, layers)
               for name, hw in variants.items()}
    reference = next(iter(variants))
    rows = []
    for k, ref in enumerate(results[reference]):
        for name, hw in variants.items():
            energy = results[name][k].energy
            rows.append(AblationRow(ref.layer, name, hw.pe_count, hw.cache_bytes_weight / 1024,
                                    energy, energy.total / ref.energy.total))
    return rows


@dataclass(frozen=True)
class PrunedComparisonRow:
    layer: str
    n_weights: int
    n_thresholds: int
    mime_total: float
    pruned_total: float

    @property
    def mime_advantage(self) -> float:
        return self.pruned_total / self.mime_total


def pruned_compare(spec: NetworkSpec, hw: HardwareConfig, schedule: TaskSchedule,
                   mime_sparsity: SparsityTable, relu_sparsity: SparsityTable,
                   weight_sparsity: float = 0.9, layers: Sequence[str] = None) -> List[PrunedComparisonRow]:
    """
    Threshold-masked inference against weight-pruned per-task models.

    mime_advantage > 1 means the masked network spends less energy.
    """
    pruned = InferenceCase(CaseKind.PRUNED, weight_sparsity)
    names = list(layers) if layers is not None else [
        n for n in covered_layers(spec, mime_sparsity, schedule.tasks)
        if n in covered_layers(spec, relu_sparsity, schedule.tasks)
    ]
    mime = energy_schedule(spec, hw, CASE3, schedule, mime_sparsity, names)
    base = energy_schedule(spec, hw, pruned, schedule, relu_sparsity, names)
    index = _layer_index(spec)
    rows = []
    for m, b in zip(mime, base):
        i, layer = index[m.layer]
        n_t = layer.n_outputs if i < len(spec.layers) - 1 else 0
        rows.append(PrunedComparisonRow(m.layer, _weight_words(layer), n_t, m.energy.total, b.energy.total))
    return rows
