"""
Command-Line Application

Experiment front end: resolves configuration, builds networks, hardware
and sparsity inputs, runs one command and writes CSV/JSON reports.

Commands: storage, energy, throughput, ablate, train, sparsity.
Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arch_model import footprint, storage_sweep
from .config_manager import ConfigManager, DEFAULT_SETTINGS
from .cost_model import (
    CASE1, CaseKind, HardwareConfig, InferenceCase, TaskSchedule,
    ablation_compare, covered_layers, default_variants, energy_schedule,
    pruned_compare, throughput_layer,
)
from .datasets import TaskData, load_idx_task, make_child_task, make_parent_task
from .errors import ConfigError, MimeError, MissingSparsityError
from .fixtures import (
    FIXTURE_TASKS, PARENT_ACCURACY, fixture_accuracy, fixture_profile, fixture_rows,
    network_fixture, sparsity_table,
)
from .logger import handle_errors, setup_application_logging
from .nn_core import LayerParams, NetworkSpec, Weights, network_from_config, relu_forward
from .report_writer import (
    ABLATION_HEADER, ACCURACY_HEADER, ENERGY_HEADER, METRICS_HEADER, PRUNED_HEADER,
    SPARSITY_HEADER, STORAGE_HEADER, THROUGHPUT_HEADER, ReportWriter,
)
from .threshold_mask import SparsityProfile, load_profiles, masked_forward, measure_sparsity, save_profiles
from .trainer import (
    TrainConfig, init_head, load_checkpoint, save_checkpoint,
    train_finetuned, train_parent, train_pruned, train_thresholds,
)

COMMANDS = ("storage", "energy", "throughput", "ablate", "train", "sparsity")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per experiment."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config document (JSON)")
    common.add_argument("--pe", type=int, help="PE array size")
    common.add_argument("--cache-kb", type=float, help="size of each on-chip cache in KB")
    common.add_argument("--mode", choices=["singular", "pipelined"], help="run one task mode only")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--weight-reuse", choices=["episode", "pass"], help="weight DRAM reuse policy")
    common.add_argument("--interpolate", action="store_const", const=True,
                        help="fill unpublished layer sparsities by interpolation")
    common.add_argument("--include-heads", action="store_const", const=True,
                        help="count task classifier heads as task storage")
    common.add_argument("--sparsity-source", choices=["fixture", "measured"], help="sparsity input")
    common.add_argument("--profiles", help="measured sparsity profiles written by train")
    common.add_argument("--checkpoint", help="checkpoint to measure sparsity from")
    common.add_argument("--cases", help="comma-separated inference cases, e.g. case1,case3")
    common.add_argument("--epochs", type=int, help="threshold training epochs")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    common.add_argument("--log-dir", help="directory for log files")

    parser = argparse.ArgumentParser(
        prog="mime",
        description="Threshold-masked multi-task inference: training, storage and energy experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "storage": "DRAM storage: one model per task vs shared weights + thresholds",
        "energy": "per-layer energy breakdown per case and task mode",
        "throughput": "per-layer throughput normalized to the dense baseline",
        "ablate": "PE-array / cache-size ablation and pruned-baseline comparison",
        "train": "train parent, task thresholds and fine-tuned baselines",
        "sparsity": "emit fixture sparsity tables or measure a checkpoint",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


class MimeApp:
    """One CLI invocation."""

    def __init__(self, argv: Sequence[str] = None):
        self.args = build_parser().parse_args(argv)
        self.logger = logging.getLogger("mime")
        self.config_manager: Optional[ConfigManager] = None
        self.settings: Dict[str, Any] = {}
        self.writer: Optional[ReportWriter] = None

    def run(self) -> int:
        """Resolve settings, set up logging from them, run the command and return the exit code."""
        load_error = None
        try:
            self._load_settings()
            log_settings = self.settings["logging"]
        except (MimeError, OSError) as e:
            load_error = e
            log_settings = dict(DEFAULT_SETTINGS["logging"])
            log_settings["level"] = self.args.log_level or log_settings["level"]
        mime_logger, error_handler, exception_handler = setup_application_logging(
            self.args.log_dir or log_settings["dir"],
            log_settings["level"],
            log_settings["max_log_size_mb"],
            log_settings["max_log_files"],
        )
        self.logger = mime_logger.get_logger()
        self.logger.info(f"Running command '{self.args.command}'")
        try:
            code = handle_errors(error_handler, self.args.command)(self._dispatch)(load_error)
        finally:
            exception_handler.uninstall()
            mime_logger.close()
        return code

    def _dispatch(self, load_error: Exception = None) -> int:
        if load_error is not None:
            raise load_error
        self.writer = ReportWriter(self.settings["output"]["dir"])
        self.config_manager.save_settings(self.writer.out_dir / "settings.yaml")
        extra = getattr(self, f"cmd_{self.args.command}")() or {}
        extra.setdefault("config_sources", list(self.config_manager.sources))
        if self.settings["output"]["summary"]:
            self.writer.write_summary(self.args.command, self.settings, extra)
        self.logger.info(f"Command '{self.args.command}' finished")
        return 0

    def _load_settings(self):
        args = self.args
        self.config_manager = ConfigManager()
        if args.config:
            self.config_manager.load_experiment(args.config)
        self.config_manager.apply_overrides({
            "hardware.pe_count": args.pe,
            "hardware.cache_kb": args.cache_kb,
            "hardware.weight_reuse": args.weight_reuse,
            "schedule.modes": [args.mode] if args.mode else None,
            "ablation.mode": args.mode,
            "seed": args.seed,
            "output.dir": args.out,
            "sparsity.interpolate": args.interpolate,
            "sparsity.source": args.sparsity_source,
            "sparsity.profiles": args.profiles,
            "sparsity.checkpoint": args.checkpoint,
            "storage.include_heads": args.include_heads,
            "cases": [c.strip() for c in args.cases.split(",") if c.strip()] if args.cases else None,
            "trainer.epochs": args.epochs,
            "logging.level": args.log_level,
        })
        self.config_manager.validate()
        self.settings = self.config_manager.settings

    # -- builders ---------------------------------------------------------

    def _network(self) -> NetworkSpec:
        net = self.settings["network"]
        if net.get("layers"):
            return network_from_config(net["layers"], net.get("classifier_classes"), net.get("fixture") or "")
        if not net.get("fixture"):
            raise ConfigError("network needs either a fixture name or a layer list")
        return network_fixture(net["fixture"], net.get("classifier_classes"))

    def _hardware(self) -> HardwareConfig:
        hw = self.settings["hardware"]
        cache = int(hw["cache_kb"] * 1024)
        return HardwareConfig(
            pe_count=hw["pe_count"],
            cache_bytes_activation=cache,
            cache_bytes_weight=cache,
            cache_bytes_threshold=cache,
            spad_bytes=hw["spad_bytes"],
            bytes_per_word=hw["bytes_per_word"],
            e_dram=float(hw["e_dram"]),
            e_cache=float(hw["e_cache"]),
            e_reg=float(hw["e_reg"]),
            e_mac=float(hw["e_mac"]),
            weight_reuse=hw["weight_reuse"],
        )

    def _cases(self) -> List[InferenceCase]:
        return [InferenceCase.parse(c) for c in self.settings["cases"]]

    def _sparsity_inputs(self, spec: NetworkSpec):
        """
        Resolve sparsity tables.

        Returns:
            (network, mime table, relu table, task list)
        """
        sp = self.settings["sparsity"]
        if sp["source"] == "fixture":
            tasks = list(self.settings["schedule"]["tasks"])
            singular = self.settings["schedule"]["singular_task"]
            needed = list(dict.fromkeys(tasks + [singular]))
            mime = [fixture_profile("mime", t, spec, sp["interpolate"]) for t in needed]
            relu = [fixture_profile("relu", t, spec, sp["interpolate"]) for t in needed]
            return spec, sparsity_table(mime, spec), sparsity_table(relu, spec), tasks
        if not sp.get("profiles"):
            raise ConfigError("measured sparsity needs sparsity.profiles (or --profiles)")
        profiles, measured_spec = load_profiles(sp["profiles"])
        spec = measured_spec or spec
        mime = [p for p in profiles if p.mode == "mime"]
        relu = [p for p in profiles if p.mode == "relu"]
        if not mime:
            raise ConfigError(f"{sp['profiles']} holds no threshold-mask profiles")
        tasks = [p.task_id for p in mime]
        return spec, sparsity_table(mime, spec), sparsity_table(relu, spec), tasks

    def _schedule(self, mode: str, tasks: Sequence[str], table: Dict) -> TaskSchedule:
        sched = self.settings["schedule"]
        if mode == "singular":
            task = sched["singular_task"] if sched["singular_task"] in table else tasks[0]
            return TaskSchedule.singular(task, sched["images"])
        return TaskSchedule.pipelined(tasks, sched["rounds"])

    def _layers(self, spec: NetworkSpec, tables: Sequence[Dict]) -> List[str]:
        """Requested layers, or those every task of every non-empty table covers."""
        tables = [t for t in tables if t]
        tasks = list(tables[0])
        requested = self.settings.get("layers")
        if requested:
            for table in tables:
                for task in table:
                    for name in requested:
                        if name not in table.get(task, {}):
                            raise MissingSparsityError(task, name)
            return list(requested)
        names = covered_layers(spec, tables[0], tasks)
        for table in tables[1:]:
            covered = set(covered_layers(spec, table, list(table)))
            names = [n for n in names if n in covered]
        if not names:
            raise ConfigError("no layer has sparsity for every task; use --interpolate or set layers")
        return names

    @staticmethod
    def _table_for(case: InferenceCase, mime: Dict, relu: Dict) -> Dict:
        return mime if case.kind in (CaseKind.CASE1, CaseKind.CASE3) else relu

    # -- commands ---------------------------------------------------------

    def cmd_storage(self) -> Dict[str, Any]:
        spec = self._network()
        st = self.settings["storage"]
        bpw = self.settings["hardware"]["bytes_per_word"]
        fp = footprint(spec, bpw, threshold_kinds=st["threshold_kinds"])
        head_bytes = 0
        if st["include_heads"]:
            head = spec.classifier
            head_bytes = (head.c_in * head.c_out + (head.c_out if head.has_bias else 0)) * bpw
        plans = storage_sweep(fp, st["n_max"], head_bytes)
        self.writer.write_csv("storage.csv", STORAGE_HEADER, (
            {
                "n_children": p.n_children,
                "conventional_bytes": p.conventional_bytes,
                "mime_bytes": p.mime_bytes,
                "ratio": p.ratio,
                "exceeds_n_times": p.exceeds_n_times,
            }
            for p in plans
        ))
        return {"n_weights": fp.n_weights, "n_thresholds": fp.n_thresholds, "head_bytes": head_bytes}

    def _case_reports(self, spec, hw, mime, relu, tasks):
        """Per mode: Case-1 baseline and the configured cases."""
        cases = self._cases()
        layers = self._layers(spec, [mime, relu])
        results = []
        kinds = self.settings["network"]["threshold_kinds"]
        for mode in self.settings["schedule"]["modes"]:
            schedule = self._schedule(mode, tasks, mime)
            baseline = energy_schedule(spec, hw, CASE1, schedule, mime, layers, kinds)
            per_case = [(case, energy_schedule(spec, hw, case, schedule, self._table_for(case, mime, relu),
                                               layers, kinds))
                        for case in cases]
            results.append((mode, baseline, per_case))
        return layers, results

    def cmd_energy(self) -> Dict[str, Any]:
        spec, mime, relu, tasks = self._sparsity_inputs(self._network())
        layers, results = self._case_reports(spec, self._hardware(), mime, relu, tasks)
        rows = []
        for mode, baseline, per_case in results:
            for k, layer in enumerate(layers):
                for case, reports in per_case:
                    r = reports[k]
                    e = r.energy
                    rows.append({
                        "layer": layer, "mode": mode, "case": case.label,
                        "E_DRAM": e.E_DRAM, "E_cache": e.E_cache, "E_reg": e.E_reg, "E_MAC": e.E_MAC,
                        "total": e.total,
                        "savings_vs_case1": baseline[k].energy.total / e.total,
                    })
        self.writer.write_csv("energy.csv", ENERGY_HEADER, rows)
        return {"layers": layers, "tasks": tasks}

    def cmd_throughput(self) -> Dict[str, Any]:
        spec, mime, relu, tasks = self._sparsity_inputs(self._network())
        layers, results = self._case_reports(spec, self._hardware(), mime, relu, tasks)
        rows = []
        for mode, baseline, per_case in results:
            for k, layer in enumerate(layers):
                for case, reports in per_case:
                    r = reports[k]
                    rows.append({
                        "layer": layer, "mode": mode, "case": case.label,
                        "effective_macs": r.effective_macs, "dense_macs": r.dense_macs,
                        "throughput_norm": throughput_layer(r, baseline[k]),
                    })
        self.writer.write_csv("throughput.csv", THROUGHPUT_HEADER, rows)
        return {"layers": layers, "tasks": tasks}

    def cmd_ablate(self) -> Dict[str, Any]:
        spec, mime, relu, tasks = self._sparsity_inputs(self._network())
        hw = self._hardware()
        ab = self.settings["ablation"]
        layers = self._layers(spec, [mime, relu])
        schedule = self._schedule(ab["mode"], tasks, mime)
        case = InferenceCase.parse(ab["case"])
        variants = default_variants(hw, ab["reduced_pe"], ab["reduced_cache_kb"])
        ablation = ablation_compare(spec, variants, schedule, self._table_for(case, mime, relu), case, layers)
        self.writer.write_csv("ablation.csv", ABLATION_HEADER, (
            {
                "layer": row.layer, "variant": row.variant, "pe_count": row.pe_count, "cache_kb": row.cache_kb,
                "E_DRAM": row.energy.E_DRAM, "E_cache": row.energy.E_cache, "E_reg": row.energy.E_reg,
                "E_MAC": row.energy.E_MAC, "total": row.energy.total, "ratio_vs_case_a": row.ratio_vs_reference,
            }
            for row in ablation
        ))
        pruned = pruned_compare(spec, hw, schedule, mime, relu, ab["prune_fraction"], layers)
        self.writer.write_csv("pruned.csv", PRUNED_HEADER, (
            {
                "layer": row.layer, "n_weights": row.n_weights, "n_thresholds": row.n_thresholds,
                "mime_total": row.mime_total, "pruned_total": row.pruned_total,
                "mime_advantage": row.mime_advantage,
            }
            for row in pruned
        ))
        return {"layers": layers, "variants": list(variants), "schedule": list(schedule.slots)}

    # -- training ---------------------------------------------------------

    def _train_config(self, **overrides) -> TrainConfig:
        tr = dict(self.settings["trainer"])
        tr["seed"] = self.settings["seed"]
        tr.update(overrides)
        return TrainConfig.from_dict(tr)

    def _datasets(self) -> Tuple[TaskData, List[TaskData]]:
        ds = self.settings["dataset"]
        seed = self.settings["seed"]
        shape = tuple(ds["input_shape"])
        if ds["source"] == "idx":
            idx = ds["idx"]
            if not idx.get("parent"):
                raise ConfigError("dataset.idx.parent needs images and labels paths")
            parent = load_idx_task(idx["parent"]["images"], idx["parent"]["labels"], shape, "parent", ds["limit"])
            children = [load_idx_task(c["images"], c["labels"], shape, c["task_id"], ds["limit"])
                        for c in idx.get("children", [])]
            return parent, children
        parent, centroids = make_parent_task(shape, ds["parent_classes"], ds["samples_per_class"],
                                             ds["noise"], seed)
        children = []
        for k, child in enumerate(ds["children"]):
            members = [c for group in child["groups"] for c in group]
            if max(members) >= ds["parent_classes"]:
                raise ConfigError(f"task '{child['task_id']}' merges classes outside the parent's range")
            children.append(make_child_task(centroids, child["groups"], ds["child_samples"], ds["shift"],
                                            ds["noise"], seed + k + 1, child["task_id"]))
        return parent, children

    def _train_network(self, classes: int) -> NetworkSpec:
        name = self.settings["trainer"]["network"]
        return network_fixture(name, classes, self.settings["dataset"]["input_shape"])

    @staticmethod
    def _metric_rows(history) -> List[Dict[str, Any]]:
        return [
            {"task": h.task, "epoch": h.epoch, "loss": h.loss, "l_ce": h.l_ce, "l_t": h.l_t,
             "accuracy": h.accuracy, "mean_sparsity": h.mean_sparsity}
            for h in history
        ]

    def cmd_train(self) -> Dict[str, Any]:
        tr = self.settings["trainer"]
        out = Path(self.settings["output"]["dir"])
        parent, children = self._datasets()
        spec = self._train_network(parent.n_classes)

        parent_config = self._train_config(epochs=tr["parent_epochs"], learning_rate=tr["parent_learning_rate"])
        parent_weights, history = train_parent(spec, parent.inputs, parent.labels, parent_config)
        metrics = self._metric_rows(history)

        threshold_config = self._train_config()
        finetune_config = self._train_config(epochs=tr["finetune_epochs"],
                                             learning_rate=tr["finetune_learning_rate"])
        prune_fraction = self.settings["ablation"]["prune_fraction"]
        names = spec.layer_names()[:-1]
        threshold_sets, profiles, summary = [], [], {}
        for child in children:
            head = None
            if tr["train_head"]:
                head = init_head(spec, parent_weights, child.n_classes, child.class_groups, self.settings["seed"])
            thresholds, history = train_thresholds(spec, parent_weights, child.inputs, child.labels,
                                                   threshold_config, child.task_id, head)
            metrics.extend(self._metric_rows(history))
            thresholds.save(out / "thresholds" / f"{child.task_id}.json", names)
            threshold_sets.append(thresholds)

            child_spec, child_weights = self._child_network(spec, parent_weights, child, head)
            finetuned, history = train_finetuned(child_spec, child_weights, child.inputs, child.labels,
                                                 finetune_config, f"{child.task_id}-finetuned")
            metrics.extend(self._metric_rows(history))
            pruned, history = train_pruned(child_spec, child.inputs, child.labels, finetune_config,
                                           prune_fraction, f"{child.task_id}-pruned")
            metrics.extend(self._metric_rows(history))

            profiles.append(measure_sparsity(spec, parent_weights, thresholds, child.inputs))
            profiles.append(measure_sparsity(spec, parent_weights, None, child.inputs, task_id=child.task_id))
            summary[child.task_id] = self._child_summary(spec, parent_weights, thresholds, child_spec,
                                                         finetuned, pruned, child, profiles[-2])

        save_checkpoint(out / "checkpoints" / "parent.json", spec, parent_weights, self.settings["seed"],
                        parent_config, threshold_sets)
        save_profiles(profiles, out / "sparsity_profiles.json", spec)
        self.writer.write_csv("metrics.csv", METRICS_HEADER, metrics)
        return {"children": summary}

    @staticmethod
    def _child_network(spec: NetworkSpec, parent_weights: Weights, child: TaskData,
                       head: Optional[LayerParams]) -> Tuple[NetworkSpec, Weights]:
        """Parent network with a classifier sized for the child task."""
        classifier = replace(spec.classifier, c_out=child.n_classes)
        child_spec = NetworkSpec(spec.hidden_layers + (classifier,), child.n_classes, spec.name)
        child_spec.validate()
        if head is None:
            head = init_head(spec, parent_weights, child.n_classes, child.class_groups)
        return child_spec, Weights(parent_weights.copy().layers[:-1] + [head.copy()])

    @staticmethod
    def _child_summary(spec, parent_weights, thresholds, child_spec, finetuned, pruned, child,
                       profile) -> Dict[str, float]:
        logits = masked_forward(spec, parent_weights, thresholds, child.inputs).logits
        threshold_acc = float(np.mean(np.argmax(logits, axis=1) == child.labels))
        accuracies = {}
        for name, weights in (("finetuned_accuracy", finetuned), ("pruned_accuracy", pruned)):
            child_logits, _ = relu_forward(child_spec, weights, child.inputs)
            accuracies[name] = float(np.mean(np.argmax(child_logits, axis=1) == child.labels))
        return {
            "threshold_accuracy": threshold_acc,
            **accuracies,
            "mean_sparsity": profile.mean,
        }

    def cmd_sparsity(self) -> Dict[str, Any]:
        sp = self.settings["sparsity"]
        if sp["source"] == "fixture":
            tasks = list(FIXTURE_TASKS)
            for kind, name in (("mime", "sparsity.csv"), ("relu", "sparsity_relu.csv")):
                self.writer.write_csv(name, SPARSITY_HEADER, (
                    {"task": task, "layer": column, "sparsity": value}
                    for task, column, value in fixture_rows(kind, tasks)
                ))
            rows = [{"task": "parent", "mode": "relu", "accuracy": PARENT_ACCURACY}]
            rows += [{"task": t, "mode": kind, "accuracy": fixture_accuracy(kind, t)}
                     for kind in ("mime", "relu") for t in tasks]
            self.writer.write_csv("accuracy.csv", ACCURACY_HEADER, rows)
            return {"tasks": tasks}

        if not sp.get("checkpoint"):
            raise ConfigError("measured sparsity needs sparsity.checkpoint (or --checkpoint)")
        checkpoint = load_checkpoint(sp["checkpoint"])
        _, children = self._datasets()
        by_task = {c.task_id: c for c in children}
        profiles: List[SparsityProfile] = []
        for thresholds in checkpoint.thresholds:
            if thresholds.task_id not in by_task:
                raise MissingSparsityError(thresholds.task_id)
            data = by_task[thresholds.task_id]
            profiles.append(measure_sparsity(checkpoint.spec, checkpoint.weights, thresholds, data.inputs))
            profiles.append(measure_sparsity(checkpoint.spec, checkpoint.weights, None, data.inputs,
                                             task_id=thresholds.task_id))
        self.writer.write_csv("sparsity.csv", SPARSITY_HEADER, (
            {"task": p.task_id if p.mode == "mime" else f"{p.task_id}-relu", "layer": name, "sparsity": value}
            for p in profiles for name, value in zip(p.layers, p.values)
        ))
        save_profiles(profiles, Path(self.settings["output"]["dir"]) / "sparsity_profiles.json", checkpoint.spec)
        return {"tasks": [t.task_id for t in checkpoint.thresholds]}


def main(argv: Sequence[str] = None) -> int:
    """Entry point; returns the process exit code."""
    try:
        app = MimeApp(argv)
    except SystemExit as e:
        return int(e.code or 0)
    return app.run()


if __name__ == "__main__":
    sys.exit(main())
