"""Experiment drivers behind the command-line subcommands.

Every driver is deterministic given its config (the training seed seeds the
data generator, the weight initialisation and the batch order) and writes
RFC-4180 CSV and schema-versioned JSON with sorted keys, so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from . import metrics as _metrics
from .bptt import lif_temporal_terms, shortcut_attenuation, unrolled_gradient_oracle
from .config import ExperimentConfig
from .data import (
    SpikeBatch,
    bin_events,
    direct_encode,
    load_idx_images,
    read_event_csv,
    synthetic_task,
)
from .gradcheck import finite_difference_check
from .network import (
    LOSSES,
    DenseSpikingLayer,
    SpikingNetwork,
    TrainConfig,
    TrainLog,
    backward_network,
    checkpoint_dict,
    evaluate,
    forward_sequence,
    load_checkpoint,
    train,
)
from .neuron import NeuronParams, Variant

RESULT_SCHEMA_VERSION = 1

ORACLE_TOL = 1e-10
FD_TOL = 1e-4

SWEEP_NOTE = (
    "Desk-scale stand-in for the firing-rate, accuracy and weight-norm versus gamma "
    "curves; only the qualitative trend is meant to carry over."
)


class ExperimentError(RuntimeError):
    """A run failed; the message names the cell that failed."""


class ToleranceError(RuntimeError):
    """A numerical check exceeded its tolerance."""

    def __init__(self, message: str, report: dict):
        self.report = report
        super().__init__(message)


# ---------------------------------------------------------------------------
# output helpers


def write_csv(path, rows: Sequence[dict]) -> None:
    fieldnames: List[str] = []
    for row in rows:
        fieldnames += [k for k in row if k not in fieldnames]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\r\n")
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path) -> List[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def to_json(doc: dict) -> str:
    payload = {"schema_version": RESULT_SCHEMA_VERSION, **_jsonable(doc)}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json(path, doc: dict) -> None:
    with open(path, "w") as f:
        f.write(to_json(doc))


def _out(out_dir) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# data and training


def _event_dataset(cfg: ExperimentConfig) -> SpikeBatch:
    """Event CSVs under ``<events>/<label>/*.csv``, read in sorted order."""
    d = cfg.data
    root = Path(d.events)
    if not root.is_dir():
        raise ExperimentError(f"event directory {root} does not exist")
    frames, labels = [], []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for path in sorted(class_dir.glob("*.csv")):
            batch = bin_events(read_event_csv(path), d.T, d.height, d.width, d.bin_mode)
            frames.append(batch.data[0])
            labels.append(int(class_dir.name))
    if not frames:
        raise ExperimentError(f"no event files found under {root}")
    return SpikeBatch(np.stack(frames), labels)


def load_dataset(cfg: ExperimentConfig):
    """Returns ``(train_set, test_set, input_kind)``."""
    d = cfg.data
    seed = cfg.training.seed
    if d.source in ("rate-pair", "temporal-order"):
        full = synthetic_task(d.source, d.n_samples, d.T, d.features, seed, tuple(d.rates), d.noise)
        kind = "spike"
    elif d.source == "idx":
        images, labels = load_idx_images(d.images, d.labels)
        full = direct_encode(images, d.T, labels)
        kind = "direct"
    else:
        full = _event_dataset(cfg)
        kind = "spike"
    if d.source in ("idx", "events"):
        # file order is often grouped by class
        full = full.subset(np.random.default_rng(seed).permutation(len(full)))
    if full.features != cfg.architecture.layers[0]:
        raise ExperimentError(
            f"data has {full.features} features but architecture.layers starts with "
            f"{cfg.architecture.layers[0]}"
        )
    n_train = int(round(d.train_fraction * len(full)))
    n_train = min(max(n_train, 1), len(full) - 1)
    train_set, test_set = full.split(n_train)
    train_set.num_classes = test_set.num_classes = full.num_classes
    return train_set, test_set, kind


def train_config(cfg: ExperimentConfig, input_kind: str) -> TrainConfig:
    t = cfg.training
    return TrainConfig(
        epochs=t.epochs,
        lr=t.lr,
        weight_decay=t.weight_decay,
        batch_size=t.batch_size,
        seed=t.seed,
        loss=t.loss,
        cosine=t.cosine,
        mac_mode=cfg.outputs.mac_mode,
        input_kind=input_kind,
        inhibitory_policy=cfg.outputs.inhibitory_policy,
    )


@dataclass
class RunResult:
    net: SpikingNetwork
    log: TrainLog

    @property
    def final(self):
        return self.log.final


def run_cell(cfg: ExperimentConfig, data=None) -> RunResult:
    """Build, train and evaluate one network; ``data`` skips reloading."""
    train_set, test_set, kind = data if data is not None else load_dataset(cfg)
    net = SpikingNetwork.build(cfg.architecture.layers, cfg.params, seed=cfg.training.seed)
    log = train(net, train_set, train_config(cfg, kind), test_set)
    return RunResult(net, log)


def epoch_rows(log: TrainLog) -> List[dict]:
    rows = []
    for rec in log.records:
        row = {"epoch": rec.epoch, "loss": rec.loss, "accuracy": rec.accuracy}
        for l, v in enumerate(rec.metrics.firing_rate_per_layer):
            row[f"firing_rate_l{l}"] = v
        for l, v in enumerate(rec.metrics.weight_norm_per_layer):
            row[f"weight_norm_l{l}"] = v
        rows.append(row)
    return rows


def cmd_train(cfg: ExperimentConfig, out_dir) -> dict:
    """Per-epoch CSV, final metrics JSON and a checkpoint."""
    out = _out(out_dir)
    result = run_cell(cfg)
    final = result.final
    if "csv" in cfg.outputs.formats:
        write_csv(out / "train_log.csv", epoch_rows(result.log))
    summary = {
        "command": "train",
        "variant": cfg.params.variant.value,
        "epochs": len(result.log),
        "final_loss": final.loss,
        "final_accuracy": final.accuracy,
        "metrics": final.metrics.to_dict(),
    }
    if "json" in cfg.outputs.formats:
        write_json(out / "metrics.json", summary)
    ckpt = checkpoint_dict(result.net, cfg.training.seed, {"config": cfg.to_ini()})
    with open(out / "checkpoint.json", "w") as f:
        json.dump(ckpt, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


# ---------------------------------------------------------------------------
# gamma sweep


def _variant_pair(cfg: ExperimentConfig):
    base = Variant(cfg.neuron.variant)
    if base.learnable_decay:
        return Variant.PLIF, Variant.IPLIF
    return Variant.LIF, Variant.ILIF


def sweep_rows(cfg: ExperimentConfig, gammas: Sequence[float]) -> List[dict]:
    if len(gammas) < 2:
        raise ValueError("a sweep needs at least two gamma values")
    data = load_dataset(cfg)
    rows = []
    for variant in _variant_pair(cfg):
        for g in gammas:
            cell = cfg.updated("neuron", variant=variant.value, gamma=float(g))
            try:
                final = run_cell(cell, data).final
            except Exception as exc:  # annotate and re-raise
                raise ExperimentError(f"sweep cell {variant.value} gamma={g} failed: {exc}") from exc
            m = final.metrics
            row = {
                "gamma": float(g),
                "variant": variant.value,
                "accuracy": final.accuracy,
                "mean_firing_rate": m.mean_firing_rate,
                "mean_weight_norm": m.mean_weight_norm,
                "loss": final.loss,
            }
            for l, v in enumerate(m.continuous_firing_rate_per_layer):
                row[f"continuous_firing_rate_l{l}"] = v
            rows.append(row)
    return rows


def cmd_sweep_gamma(cfg: ExperimentConfig, gammas: Sequence[float], out_dir) -> List[dict]:
    out = _out(out_dir)
    rows = sweep_rows(cfg, gammas)
    cells = out / "cells"
    cells.mkdir(exist_ok=True)
    for row in rows:
        write_json(cells / f"{row['variant']}_gamma{row['gamma']!r}.json", row)
    if "csv" in cfg.outputs.formats:
        write_csv(out / "sweep.csv", rows)
    if "json" in cfg.outputs.formats:
        write_json(out / "sweep.json", {"command": "sweep-gamma", "note": SWEEP_NOTE, "rows": rows})
    return rows


# ---------------------------------------------------------------------------
# ablation


ABLATION_CELLS = (
    ("both", True, True),
    ("mpiu-only", True, False),
    ("ciu-only", False, True),
    ("none", False, False),
)


def _same_run(a: RunResult, b: RunResult) -> bool:
    same_log = [epoch_rows(a.log)] == [epoch_rows(b.log)]
    same_weights = all(np.array_equal(x, y) for x, y in zip(a.net.weights, b.net.weights))
    return same_log and same_weights


def ablation_rows(cfg: ExperimentConfig):
    """The 2x2 unit grid with one shared seed, plus the explicit LIF reference."""
    base = Variant(cfg.neuron.variant)
    if not base.inhibitory:
        raise ValueError("ablation needs an inhibitory base variant (ILIF or IPLIF)")
    data = load_dataset(cfg)
    rows, runs = [], {}
    for name, mpiu, ciu in ABLATION_CELLS:
        cell = cfg.updated("neuron", mpiu_enabled=mpiu, ciu_enabled=ciu)
        try:
            runs[name] = run_cell(cell, data)
        except Exception as exc:
            raise ExperimentError(f"ablation cell {name} failed: {exc}") from exc
        final = runs[name].final
        p = cell.params
        rows.append(
            {
                "cell": name,
                "mpiu_enabled": mpiu,
                "ciu_enabled": ciu,
                "lam_u": p.lam_u,
                "lam_i": p.lam_i,
                "accuracy": final.accuracy,
                "mean_firing_rate": final.metrics.mean_firing_rate,
                "mean_weight_norm": final.metrics.mean_weight_norm,
                "loss": final.loss,
            }
        )
    plain = Variant.PLIF if base.learnable_decay else Variant.LIF
    reference = run_cell(cfg.updated("neuron", variant=plain.value), data)
    return rows, _same_run(runs["none"], reference)


def cmd_ablate(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    rows, none_matches = ablation_rows(cfg)
    if "csv" in cfg.outputs.formats:
        write_csv(out / "ablation.csv", rows)
    doc = {"command": "ablate", "rows": rows, "none_equals_plain_run": none_matches}
    if "json" in cfg.outputs.formats:
        write_json(out / "ablation.json", doc)
    return doc


# ---------------------------------------------------------------------------
# gradient checks

GRADCHECK_MAX_WIDTH = 6
GRADCHECK_MAX_T = 4


def _small_instance(cfg: ExperimentConfig, params: NeuronParams, rng, twin_safe: bool = False):
    sizes = [min(s, GRADCHECK_MAX_WIDTH) for s in cfg.architecture.layers]
    T = min(cfg.data.T, GRADCHECK_MAX_T)
    net = SpikingNetwork.build(sizes, params, seed=int(rng.integers(2**32)))
    for layer in net.layers:
        # mostly excitatory weights keep the twin's ramps away from saturation
        mag = rng.uniform(0.1, 1.5, size=layer.weights.shape)
        sign = np.where(rng.random(layer.weights.shape) < 0.8, 1.0, -1.0)
        layer.weights[...] = mag * sign
    data = rng.random((3, T, sizes[0])) if twin_safe else (rng.random((3, T, sizes[0])) < 0.6).astype(float)
    labels = rng.integers(0, sizes[-1], size=3)
    return net, SpikeBatch(data, labels, num_classes=sizes[-1])


def _oracle_check(net, batch):
    outputs, tapes = forward_sequence(net, batch)
    _, ds = LOSSES["mse"](outputs, batch.labels)
    rec = backward_network(net, tapes, ds)
    worst, where = 0.0, None
    for l in range(len(tapes) - 1, -1, -1):
        ref = unrolled_gradient_oracle(tapes[l], ds)
        a, b = rec.weight_grads[l], ref.weight_grads[0]
        scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
        if scale > 0:
            gap = np.abs(a - b) / scale
            k = np.unravel_index(int(np.argmax(gap)), gap.shape)
            if gap[k] > worst:
                worst, where = float(gap[k]), (l,) + tuple(int(i) for i in k)
        ds = ref.ds_in
    return worst, where


def cutoff_instance(T: int = 6, neurons: int = 3, lam: float = 0.5):
    """A single-layer instance at ``gamma = v_th`` whose potentials stay in band.

    Input drives of 1.0-1.2 with soft reset keep every LIF potential inside
    ``(v_th - gamma/2, v_th + gamma/2)`` at every step.
    """
    drive = np.linspace(1.0, 1.2, neurons)
    weights = np.diag(drive)
    data = np.ones((1, T, neurons))
    return weights, SpikeBatch(data, [0], num_classes=neurons)


def cutoff_checks(lam: float = 0.5, T: int = 6) -> dict:
    """LIF temporal terms vanish exactly; ILIF keeps a nonzero phi path."""
    weights, batch = cutoff_instance(T, lam=lam)
    lif = SpikingNetwork([DenseSpikingLayer(weights.copy(), NeuronParams.lif(lam=lam, gamma=1.0))])
    outputs, tapes = forward_sequence(lif, batch)
    tape = tapes[0]
    half = tape.params.gamma / 2
    in_band = bool(np.all(np.abs(tape.potential - tape.params.v_th) < half))
    _, ds = LOSSES["mse"](outputs, batch.labels)
    terms = lif_temporal_terms(tape, ds)
    off_diag = [terms[t, tp] for t in range(T) for tp in range(t + 1, T)]
    lif_zero = bool(all(np.all(x == 0.0) for x in off_diag))

    ilif = SpikingNetwork([DenseSpikingLayer(weights.copy(), NeuronParams.ilif(lam=lam, gamma=1.0))])
    outputs, tapes = forward_sequence(ilif, batch)
    _, ds = LOSSES["mse"](outputs, batch.labels)
    phi = backward_network(ilif, tapes, ds).phi_trace[0]
    spikes = bool(np.any(tapes[0].spikes))
    phi_nonzero = bool(np.any(phi[:-1] != 0.0))
    return {
        "lif_all_in_band": in_band,
        "lif_temporal_terms_zero": lif_zero,
        "ilif_spikes": spikes,
        "ilif_phi_nonzero_before_last_step": phi_nonzero,
        "passed": in_band and lif_zero and (phi_nonzero or not spikes),
    }


def shortcut_check(T: int = 8) -> dict:
    rng = np.random.default_rng(0)
    net = SpikingNetwork.build([3, 2], NeuronParams.ilif(lam_u=1.0), seed=0)
    _, tapes = forward_sequence(net, rng.random((1, T, 3)))
    values = [shortcut_attenuation(tapes[0], a, b) for a in range(T) for b in range(a + 1)]
    return {"products": sorted(set(values)), "passed": all(v == 1.0 for v in values)}


def gradcheck_report(cfg: ExperimentConfig, instances: int = 5) -> dict:
    rng = np.random.default_rng(cfg.training.seed)
    params = cfg.params
    variants = [params]
    if params.variant.inhibitory:
        variants.append(NeuronParams.lif(lam=params.lam, v_th=params.v_th, gamma=params.gamma, tau=params.tau))
    oracle_worst, oracle_where = 0.0, None
    fd_worst, fd_where, checked, skipped = 0.0, None, 0, 0
    for p in variants:
        for _ in range(instances):
            net, batch = _small_instance(cfg, p, rng)
            err, where = _oracle_check(net, batch)
            if err > oracle_worst:
                oracle_worst, oracle_where = err, where
            net, batch = _small_instance(cfg, p, rng, twin_safe=True)
            res = finite_difference_check(net, batch, detail=True)
            checked += res.checked
            skipped += res.skipped
            if res.max_relative_error > fd_worst:
                fd_worst, fd_where = res.max_relative_error, res.worst_index
    cutoff = cutoff_checks()
    shortcut = shortcut_check()
    report = {
        "command": "gradcheck",
        "oracle": {"max_relative_error": oracle_worst, "worst_index": oracle_where,
                   "tolerance": ORACLE_TOL, "passed": oracle_worst <= ORACLE_TOL},
        "finite_difference": {"max_relative_error": fd_worst, "worst_index": fd_where,
                              "checked": checked, "skipped": skipped,
                              "tolerance": FD_TOL, "passed": fd_worst < FD_TOL},
        "cutoff": cutoff,
        "shortcut": shortcut,
    }
    report["passed"] = all(report[k]["passed"] for k in ("oracle", "finite_difference", "cutoff", "shortcut"))
    return report


def cmd_gradcheck(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    report = gradcheck_report(cfg)
    write_json(out / "gradcheck.json", report)
    if not report["passed"]:
        failed = [k for k in ("oracle", "finite_difference", "cutoff", "shortcut") if not report[k]["passed"]]
        detail = []
        for k in failed:
            where = report[k].get("worst_index")
            detail.append(f"{k} (worst index {where})" if where is not None else k)
        raise ToleranceError("gradient checks failed: " + ", ".join(detail), report)
    return report


# ---------------------------------------------------------------------------
# energy


def energy_entry(net: SpikingNetwork, batch: SpikeBatch, input_kind: str, cfg: ExperimentConfig) -> dict:
    if batch.features != net.layers[0].n_in:
        raise ExperimentError(
            f"checkpoint expects {net.layers[0].n_in} inputs, dataset has {batch.features} features"
        )
    acc, record, _ = evaluate(net, batch, cfg.outputs.mac_mode, input_kind, cfg.outputs.inhibitory_policy)
    ann_mac = _metrics.count_mac(net.layer_sizes, batch.T, "ann", len(batch))
    return {
        "variant": net.variant.value,
        "accuracy": acc,
        "ac_count": record.ac_count,
        "mac_count": record.mac_count,
        "ann_mac_count": ann_mac,
        "sop_energy_pj": record.sop_energy_pj,
        "ann_energy_pj": _metrics.sop_energy(0, ann_mac),
        "firing_rate_per_layer": record.firing_rate_per_layer,
    }


def cmd_energy(cfg: ExperimentConfig, checkpoints: Sequence[str], out_dir) -> dict:
    if not 1 <= len(checkpoints) <= 2:
        raise ValueError("energy takes one or two checkpoints")
    out = _out(out_dir)
    _, test_set, kind = load_dataset(cfg)
    entries = []
    for path in checkpoints:
        net, _ = load_checkpoint(path)
        entries.append(energy_entry(net, test_set, kind, cfg))
    doc = {
        "command": "energy",
        "e_ac_pj": _metrics.E_AC_PJ,
        "e_mac_pj": _metrics.E_MAC_PJ,
        "inhibitory_policy": cfg.outputs.inhibitory_policy,
        "input_kind": kind,
        "models": entries,
    }
    if len(entries) == 2:
        lif = next((e for e in entries if not Variant(e["variant"]).inhibitory), None)
        ilif = next((e for e in entries if Variant(e["variant"]).inhibitory), None)
        if lif and ilif and lif["mac_count"] > 0:
            doc["ilif_lif_mac_ratio"] = ilif["mac_count"] / lif["mac_count"]
        elif lif and ilif:
            doc["ilif_lif_mac_ratio"] = None
    write_json(out / "energy.json", doc)
    if "csv" in cfg.outputs.formats:
        write_csv(out / "energy.csv", [
            {k: v for k, v in e.items() if k != "firing_rate_per_layer"} for e in entries
        ])
    return doc


__all__ = [
    "ExperimentError",
    "ToleranceError",
    "load_dataset",
    "run_cell",
    "cmd_train",
    "sweep_rows",
    "cmd_sweep_gamma",
    "ablation_rows",
    "cmd_ablate",
    "gradcheck_report",
    "cmd_gradcheck",
    "cutoff_checks",
    "shortcut_check",
    "cmd_energy",
    "write_csv",
    "read_csv",
    "to_json",
]
