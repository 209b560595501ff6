"""Run modes behind the CLI: baseline, protected, campaign replay and profiling."""

from __future__ import annotations

import hashlib
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .checksums import InputChecksums, fmap_checksums, kernel_checksums, output_checksums, output_summations
from .errors import ConfigError, IntegrityError
from .faults import (
    CorpusEntry,
    FaultHook,
    LayerShape,
    campaign,
    fault_effect,
    mutate_inplace,
    stage_within,
)
from .model import Model
from .schemes import required_checksums, run_scheme
from .tensor import conv_forward
from .workflow import (
    LayerDims,
    LayerPlan,
    LayerReport,
    default_plan,
    plan_from_profile,
    profile_layer,
    run_protected_layer,
)

# corrected output must be within this fraction of max(|reference|, 1)
RECOVERY_RTOL = 1e-3
CORRECTION_STAGES = ("coc", "rc", "clc", "fc", "checksum_discard", "recompute")


def digest(a: np.ndarray) -> str:
    a = np.ascontiguousarray(a)
    h = hashlib.sha256()
    h.update(str(a.dtype).encode() + str(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def recovered(O: np.ndarray, ref: np.ndarray, rtol: float = RECOVERY_RTOL) -> bool:
    if O.shape != ref.shape or not np.all(np.isfinite(O)):
        return False
    scale = max(float(np.max(np.abs(ref), initial=0.0)), 1.0)
    return float(np.max(np.abs(O.astype(np.float64) - ref), initial=0.0)) <= rtol * scale


def layer_dims(model: Model) -> list[LayerDims]:
    return [LayerDims(l.N, l.Ch, l.H, l.M, l.R, l.U, l.pad, l.G) for l in model.config.layers]


def layer_shapes(model: Model) -> list[LayerShape]:
    return [LayerShape(l.N, l.Ch, l.H, l.M, l.R, l.E, l.G, model.config.dtype) for l in model.config.layers]


def default_plans(model: Model, tau: float | None = None) -> dict[str, LayerPlan]:
    return {lc.name: default_plan(d, tau=tau) for lc, d in zip(model.config.layers, layer_dims(model))}


def resolve_plans(model: Model, plans: Mapping[str, LayerPlan] | None, tau: float | None) -> dict[str, LayerPlan]:
    out = default_plans(model, tau)
    for name, p in (plans or {}).items():
        if name not in out:
            raise ConfigError(f"plan names unknown layer {name!r}")
        if tau is not None:
            p = LayerPlan(**{**p.to_json(), "tau": tau})
        out[name] = p
    return out


# ---------------------------------------------------------------- baseline / protected

@dataclass
class RunResult:
    mode: str
    output: np.ndarray
    layer_outputs: list[np.ndarray]
    reports: list[LayerReport] = field(default_factory=list)
    seconds: float = 0.0

    def to_json(self, timings: bool = False) -> dict:
        d = {
            "mode": self.mode,
            "output_shape": list(self.output.shape),
            "output_sha256": digest(self.output),
            "layer_sha256": [digest(o) for o in self.layer_outputs],
            "layers": [r.to_json(timings) for r in self.reports],
        }
        if timings:
            d["seconds"] = self.seconds
        return d


def run_baseline(model: Model, D: np.ndarray, impl: str = "direct") -> RunResult:
    t = time.perf_counter()
    out, outs = model.forward(D, impl)
    return RunResult("baseline", out, outs, [], time.perf_counter() - t)


def run_protected(model: Model, D: np.ndarray, plans: Mapping[str, LayerPlan] | None = None,
                  impl: str = "direct", hooks: Mapping[int, FaultHook] | None = None,
                  tau: float | None = None) -> RunResult:
    plans = resolve_plans(model, plans, tau if tau is not None else model.config.tau)
    hooks = hooks or {}
    reports: list[LayerReport] = []

    def layer_fn(k, layer, x):
        hook = hooks.get(k)
        if hook is not None:
            hook.prepare(layer)
        O, rep = run_protected_layer(layer, x, plans[layer.name], hook=hook, impl=impl)
        reports.append(rep)
        return O

    t = time.perf_counter()
    out, outs = model.forward(D, impl, layer_fn)
    return RunResult("protected", out, outs, reports, time.perf_counter() - t)


# ---------------------------------------------------------------- campaign

@dataclass
class EntryResult:
    run: int
    label: str
    layer: int
    pattern: str
    expected: str
    above_threshold: bool
    effect_tau: float
    detected: bool
    stage: str
    recovered: bool
    kernel_restored: bool
    error: str = ""

    @property
    def passed(self) -> bool:
        if not self.above_threshold:
            return self.error == ""
        return (self.detected and self.recovered and self.kernel_restored and self.error == ""
                and stage_within(self.stage, self.expected))

    def to_json(self) -> dict:
        return {
            "run": self.run, "target": self.label, "layer": self.layer, "pattern": self.pattern,
            "expected": self.expected, "above_threshold": self.above_threshold,
            "effect_tau": _round_effect(self.effect_tau),
            "detected": self.detected, "stage": self.stage, "recovered": self.recovered,
            "kernel_restored": self.kernel_restored, "error": self.error, "passed": self.passed,
        }


def _round_effect(v: float):
    return "inf" if not np.isfinite(v) else float(f"{v:.6g}")


@dataclass
class CampaignReport:
    entries: list[EntryResult]
    seconds_protected: float = 0.0
    seconds_baseline: float = 0.0

    @property
    def above(self) -> list[EntryResult]:
        return [e for e in self.entries if e.above_threshold]

    def summary(self) -> dict:
        above = self.above
        detected = sum(e.detected for e in above)
        rec = sum(e.recovered and e.detected for e in above)
        stages = Counter(e.stage for e in above if e.detected)
        total = sum(stages.values())
        dist = {s: (stages.get(s, 0) / total if total else 0.0) for s in CORRECTION_STAGES}
        return {
            "entries": len(self.entries),
            "above_threshold": len(above),
            "benign": len(self.entries) - len(above),
            "detected": detected,
            "detection_rate": detected / len(above) if above else 1.0,
            "recovered": rec,
            "recovery_rate": rec / len(above) if above else 1.0,
            "stage_counts": {s: stages.get(s, 0) for s in CORRECTION_STAGES},
            "stage_distribution": dist,
            "recomputed": stages.get("recompute", 0),
            "failures": [e.run for e in self.entries if not e.passed],
            "by_target": dict(sorted(Counter(e.label for e in self.entries).items())),
        }

    @property
    def ok(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_json(self, timings: bool = False) -> dict:
        d = {"mode": "campaign", "summary": self.summary(), "results": [e.to_json() for e in self.entries]}
        if timings:
            base = self.seconds_baseline
            d["seconds_protected"] = self.seconds_protected
            d["seconds_baseline"] = base
            d["overhead_pct"] = 100.0 * (self.seconds_protected - base) / base if base > 0 else None
        return d


def entry_input(model: Model, seed: int, run: int) -> np.ndarray:
    return model.make_input([seed, run])


def replay_entry(model: Model, entry: CorpusEntry, seed: int,
                 plans: Mapping[str, LayerPlan], impl: str = "direct") -> tuple[EntryResult, float, float]:
    spec, truth = entry.spec, entry.truth
    k = spec.layer_index
    if not 0 <= k < len(model.layers):
        raise ConfigError(f"corpus entry {entry.run} targets layer {k}; model has {len(model.layers)}")
    m = model.copy()
    D = entry_input(m, seed, entry.run)
    t = time.perf_counter()
    _, ref_outs = m.forward(D, impl)
    t_base = time.perf_counter() - t
    layer = m.layers[k]
    plan = plans[layer.name]
    tau = plan.tau if plan.tau is not None else m.tau
    x_in = D if k == 0 else _activation(m, k - 1, ref_outs[k - 1])
    above, effect = fault_effect(x_in, layer, spec, tau)
    expected = truth.expected_stage(plan.rc_enabled, plan.clc_enabled)
    hook = FaultHook(spec)
    error = ""
    t = time.perf_counter()
    try:
        res = run_protected(m, D, plans, impl, {k: hook})
        rep = res.reports[k]
        detected, stage = rep.detected, rep.resolving_stage
        ok = recovered(res.layer_outputs[k], ref_outs[k])
    except IntegrityError as e:
        detected, stage, ok, error = True, "integrity_error", False, str(e)
    t_prot = time.perf_counter() - t
    return EntryResult(entry.run, spec.label, k, truth.pattern, expected, above, effect,
                       detected, stage, ok, layer.kernel_intact(), error), t_base, t_prot


def _activation(model: Model, k: int, O: np.ndarray) -> np.ndarray:
    return np.maximum(O, 0) if model.config.layers[k].activation == "relu" else O


def run_campaign(model: Model, corpus: Sequence[CorpusEntry], seed: int = 0,
                 plans: Mapping[str, LayerPlan] | None = None, impl: str = "direct",
                 tau: float | None = None) -> CampaignReport:
    plans = resolve_plans(model, plans, tau if tau is not None else model.config.tau)
    report = CampaignReport([])
    for entry in corpus:
        res, tb, tp = replay_entry(model, entry, seed, plans, impl)
        report.entries.append(res)
        report.seconds_baseline += tb
        report.seconds_protected += tp
    return report


def generate_corpus(model: Model, n_runs: int, seed: int = 0,
                    distribution: Mapping[str, float] | None = None) -> list[CorpusEntry]:
    return campaign(layer_shapes(model), n_runs, distribution, seed)


# ---------------------------------------------------------------- isolated schemes

def isolated_abilities(model: Model, entry: CorpusEntry, seed: int,
                       schemes: Sequence[str] = ("coc", "rc", "clc", "fc")) -> dict[str, bool]:
    """Whether each scheme, run alone on the faulted layer, restores the fault-free output.

    Each scheme sees the checksums it needs plus Co5 (for its verification),
    built from clean fmaps and golden kernels; only checksum faults corrupt
    them.
    """
    m = model.copy()
    spec = entry.spec
    k = spec.layer_index
    D = entry_input(m, seed, entry.run)
    _, ref_outs = m.forward(D)
    layer = m.layers[k]
    x = D if k == 0 else _activation(m, k - 1, ref_outs[k - 1])
    tau = m.tau
    out = {}
    for scheme in schemes:
        hook = FaultHook(spec)
        cd1, cd2 = fmap_checksums(x)
        cw1, cw2 = kernel_checksums(layer.golden, layer.params.groups)
        ic = InputChecksums(cd1, cd2, cw1, cw2)
        hook.checksums(ic, None)
        Wx = np.array(layer.golden, copy=True)
        if spec.target == "kernel":
            mutate_inplace(Wx, spec)
        O = conv_forward(hook.conv_input(x), Wx, layer.B, layer.params)
        hook.output(O)
        need = set(required_checksums(scheme)) | {"co5"}
        cs = output_checksums(need, x, layer.golden, ic, layer.params)
        hook.checksums(ic, cs)
        s = output_summations(O, need, bias=layer.bias)
        res = run_scheme(scheme, cs, s, O, tau)
        # a discard on a data fault is a misdiagnosis even if the residual is small
        right_kind = res.status == "corrected" or entry.truth.pattern == "checksum_discard"
        out[scheme] = res.status != "escalate" and right_kind and recovered(O, ref_outs[k])
    return out


# ---------------------------------------------------------------- profiling

def run_profile(model: Model, reps: int = 5, seed: int = 0, impl: str = "direct",
                tau: float | None = None, timer=None) -> dict[str, LayerPlan]:
    """Profile every layer on a seeded input and derive its plan."""
    import warnings

    plans = {}
    x = model.make_input(seed)
    kw = {} if timer is None else {"timer": timer}
    for lc, layer, d in zip(model.config.layers, model.layers, layer_dims(model)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            prof = profile_layer(layer, reps, D=x, seed=seed, impl=impl, **kw)
            plans[lc.name] = plan_from_profile(d, prof, tau)
        O = layer.forward(x, impl)
        x = np.maximum(O, 0) if lc.activation == "relu" else O
    return plans


# ---------------------------------------------------------------- human output

def format_run(res: RunResult) -> str:
    lines = [f"mode: {res.mode}", f"output shape: {tuple(res.output.shape)}",
             f"output sha256: {digest(res.output)}"]
    if res.reports:
        lines.append(f"{'layer':<10} {'detected':<9} {'stage':<17} {'blocks':<7} recomputed")
        for r in res.reports:
            lines.append(f"{r.name:<10} {str(r.detected):<9} {r.resolving_stage:<17} "
                         f"{len(r.corrected_blocks):<7} {r.recomputed}")
    return "\n".join(lines)


def format_campaign(rep: CampaignReport) -> str:
    s = rep.summary()
    lines = [
        f"entries: {s['entries']}  above threshold: {s['above_threshold']}  benign: {s['benign']}",
        f"detection rate: {s['detection_rate']:.4f}  recovery rate: {s['recovery_rate']:.4f}",
        "resolving stage distribution:",
    ]
    for st in CORRECTION_STAGES:
        lines.append(f"  {st:<17} {s['stage_counts'][st]:>6}  {s['stage_distribution'][st]:.3f}")
    lines.append(f"failures: {len(s['failures'])}" + (f" (runs {s['failures'][:20]})" if s["failures"] else ""))
    return "\n".join(lines)


def format_plans(plans: Mapping[str, LayerPlan]) -> str:
    lines = [f"{'layer':<10} {'rc':<6} {'clc':<6} {'p_r':<8} t0/t1/t2"]
    for name, p in plans.items():
        lines.append(f"{name:<10} {str(p.rc_enabled):<6} {str(p.clc_enabled):<6} {p.p_r:<8.4f} "
                     f"{p.t0:.3g}/{p.t1:.3g}/{p.t2:.3g}")
    return "\n".join(lines)
