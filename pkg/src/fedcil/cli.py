"""Operator entry point.

Subcommands: synth, preprocess, central, fed, serve, client, report.
Machine artifacts go to files; logs go to stderr. Exit codes: 0 success,
2 usage/config/data error, 3 network error, 4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import socket
import sys

import numpy as np

from . import nn
from .cil import CilReport, TaskResult, evaluate_task, generate_synthetic, run_cil
from .config import ExperimentConfig, schema_text
from .dataset import (Dataset, apply_normalization, load_flow_csv, normalize,
                      NormStats, partition, save_flow_csv)
from .errors import ConfigError, DataError, FedCilError, ProtocolError, SchemaError
from .flows import assemble_flows, featurize_flow, load_packet_csv, FEATURE_NAMES, DEFAULT_IDLE_TIMEOUT
from .metrics import forgetting
from .report import write_report
from .wire import ParameterServer, client_join

log = logging.getLogger("fedcil")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NETWORK = 3
EXIT_INTERNAL = 4


def _parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise ConfigError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _load_experiment(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("this command needs --config")
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out_dir", None) is not None:
        overrides["output.dir"] = args.out_dir
    return ExperimentConfig.load(args.config, overrides)


def _synthetic_class_names(cfg: ExperimentConfig) -> list[str]:
    n = cfg.raw["synthetic"]["classes"]
    return ["Benign"] + [f"Attack{i:02d}" for i in range(1, n)]


def _resolve_class_names(cfg: ExperimentConfig) -> list[str]:
    if cfg.raw["dataset"]["class_names"]:
        return list(cfg.raw["dataset"]["class_names"])
    if cfg.raw["synthetic"]["enabled"]:
        return _synthetic_class_names(cfg)
    raise ConfigError(
        "client needs dataset.class_names (or synthetic config) to map labels consistently"
    )


def cmd_synth(args) -> int:
    if args.per_class < 1:
        raise ConfigError("--per-class must be >= 1")
    ds = generate_synthetic(args.classes, args.per_class, args.dim, args.separation,
                            args.seed or 0, args.clusters_per_class)
    save_flow_csv(ds, args.output)
    log.info("wrote %d rows, %d classes to %s", len(ds), len(ds.class_names), args.output)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    if args.kind == "packet":
        packets = load_packet_csv(args.input)
        flows = assemble_flows(packets, args.idle_timeout)
        if not flows:
            raise DataError("no flows assembled from packet input")
        feats = np.vstack([featurize_flow(f).features for f in flows])
        ds = Dataset(feats, np.zeros(len(flows), dtype=np.int64), [args.label],
                     feature_names=list(FEATURE_NAMES))
        log.info("assembled %d flows from %d packets", len(flows), len(packets))
    else:
        ds = load_flow_csv(args.input, args.label_column)
        rep = ds.load_report
        log.info("loaded %d rows (%d dropped, %d constant columns removed)",
                 len(ds), rep.rows_dropped, len(rep.dropped_columns))

    if args.norm_stats:
        with open(args.norm_stats) as fh:
            stats = NormStats.from_json(fh.read())
        ds = apply_normalization(ds, stats)
    elif args.normalize != "none":
        ds, stats = normalize(ds, args.normalize)
        stats_path = args.output + ".norm.json"
        with open(stats_path, "w") as fh:
            fh.write(stats.to_json())
        log.info("wrote normalization stats to %s", stats_path)
    save_flow_csv(ds, args.output)
    log.info("wrote %d rows to %s", len(ds), args.output)
    return EXIT_OK


def _write_run_artifacts(report: CilReport, model: nn.MlpModel, out_dir: str,
                         figures: bool) -> None:
    paths = write_report(report, out_dir, figures=figures)
    model_path = os.path.join(out_dir, "model.bin")
    with open(model_path, "wb") as fh:
        fh.write(nn.serialize_model(model))
    paths["model"] = model_path
    for kind, path in paths.items():
        log.info("artifact %s: %s", kind, path)


def cmd_central(args) -> int:
    cfg = _load_experiment(args)
    train, test = cfg.prepare_splits()
    schedule = cfg.make_schedule(train.class_names)
    trainer = cfg.make_centralized_trainer()
    report, model = run_cil(schedule, trainer, train, test,
                            tuple(cfg.raw["model"]["hidden_dims"]),
                            cfg.raw["model"]["value_head"],
                            eval_cadence=args.eval_cadence, config_echo=cfg.raw)
    _write_run_artifacts(report, model, cfg.raw["output"]["dir"], not args.no_figures)
    return EXIT_OK


def cmd_fed(args) -> int:
    cfg = _load_experiment(args)
    if args.mode == "net":
        return _serve(cfg, args.listen, not args.no_figures)
    train, test = cfg.prepare_splits()
    schedule = cfg.make_schedule(train.class_names)
    trainer = cfg.make_federated_trainer(f32_boundary=args.f32_boundary)
    if args.export_shards:
        shards = partition(train, trainer.fed_cfg.num_clients, trainer.partition_scheme,
                           trainer.dirichlet_alpha, trainer.fed_cfg.seed)
        os.makedirs(args.export_shards, exist_ok=True)
        for i, shard in enumerate(shards):
            path = os.path.join(args.export_shards, f"shard_{i:03d}.csv")
            save_flow_csv(shard, path)
        log.info("exported %d shards to %s", len(shards), args.export_shards)
    report, model = run_cil(schedule, trainer, train, test,
                            tuple(cfg.raw["model"]["hidden_dims"]),
                            cfg.raw["model"]["value_head"],
                            eval_cadence=args.eval_cadence, config_echo=cfg.raw)
    _write_run_artifacts(report, model, cfg.raw["output"]["dir"], not args.no_figures)
    return EXIT_OK


def _serve(cfg: ExperimentConfig, listen: str, figures: bool) -> int:
    train, test = cfg.prepare_splits()
    schedule = cfg.make_schedule(train.class_names)
    fed_cfg = cfg.make_fed_config()
    model = nn.mlp_init(
        [train.feature_width, *cfg.raw["model"]["hidden_dims"], len(train.class_names)],
        cfg.seed)
    rounds_per_task = fed_cfg.rounds
    total_rounds = rounds_per_task * len(schedule)
    results: list[TaskResult] = []

    def hook(round_index: int, current: nn.MlpModel):
        if (round_index + 1) % rounds_per_task == 0:
            ti = round_index // rounds_per_task
            res = evaluate_task(current, test, schedule, ti)
            results.append(res)
            log.info("task %d evaluated: multiclass acc %.4f",
                     ti, res.metrics.multiclass_accuracy)
            return res.metrics.as_dict()
        return None

    server = ParameterServer(fed_cfg, model, _parse_addr(listen),
                             total_rounds=total_rounds, round_hook=hook)
    log.info("parameter server listening on %s:%d, expecting %d clients",
             server.address[0], server.address[1], fed_cfg.num_clients)
    final_model, _history = server.run()

    report = CilReport(cfg.raw, schedule.task_names(), schedule.class_names)
    report.tasks = results
    report.forgetting = forgetting([r.per_class_recall for r in results])
    _write_run_artifacts(report, final_model, cfg.raw["output"]["dir"], figures)
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = _load_experiment(args)
    return _serve(cfg, args.listen, not args.no_figures)


def cmd_client(args) -> int:
    cfg = _load_experiment(args)
    class_names = _resolve_class_names(cfg)
    shard = load_flow_csv(args.shard, class_names=class_names)
    schedule = cfg.make_schedule(class_names)
    fed_cfg = cfg.make_fed_config()
    clear_cfg = cfg.make_clear_config()
    rounds_per_task = fed_cfg.rounds

    def shard_for_round(round_index: int) -> Dataset:
        ti = min(round_index // rounds_per_task, len(schedule) - 1)
        return shard.filter_classes(schedule.tasks[ti])

    rounds = client_join(_parse_addr(args.connect), args.client_id, shard, fed_cfg,
                         "clear" if clear_cfg else "plain", clear_cfg, shard_for_round)
    log.info("client %d finished after training in %d rounds", args.client_id, rounds)
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.input) as fh:
        report = CilReport.from_dict(json.load(fh))
    base = os.path.splitext(os.path.basename(args.input))[0]
    out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.input))
    paths = write_report(report, out_dir, basename=base, figures=not args.no_figures)
    for kind, path in paths.items():
        log.info("artifact %s: %s", kind, path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out-dir", default=None, help="override output directory")
    common.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])

    parser = argparse.ArgumentParser(prog="fedcil",
                                     description="Federated class-incremental IDS toolkit")
    parser.add_argument("--print-schema", action="store_true",
                        help="print the config schema and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic flow CSV")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--dim", type=int, default=12)
    p.add_argument("--separation", type=float, default=3.5)
    p.add_argument("--clusters-per-class", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common],
                       help="packet/flow CSV -> normalized flow CSV + norm stats")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=["packet", "flow"], default="flow")
    p.add_argument("--label-column", default="label")
    p.add_argument("--label", default="Unlabeled", help="class assigned to packet-derived flows")
    p.add_argument("--idle-timeout", type=float, default=DEFAULT_IDLE_TIMEOUT)
    p.add_argument("--normalize", choices=["minmax", "zscore", "none"], default="minmax")
    p.add_argument("--norm-stats", help="apply existing stats JSON instead of fitting")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("central", parents=[common], help="centralized incremental run")
    p.add_argument("--eval-cadence", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_central)

    p = sub.add_parser("fed", parents=[common], help="federated incremental run")
    p.add_argument("--mode", choices=["sim", "net"], default="sim")
    p.add_argument("--listen", default="127.0.0.1:7714", help="bind address in net mode")
    p.add_argument("--f32-boundary", action="store_true",
                   help="round weights through float32 at round boundaries (wire parity)")
    p.add_argument("--export-shards", help="write per-client shard CSVs to this directory")
    p.add_argument("--eval-cadence", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_fed)

    p = sub.add_parser("serve", parents=[common], help="run the parameter server")
    p.add_argument("--listen", default="127.0.0.1:7714")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("client", parents=[common], help="join a federation as a client")
    p.add_argument("--connect", required=True, help="server host:port")
    p.add_argument("--client-id", type=int, required=True)
    p.add_argument("--shard", required=True, help="local shard flow CSV")
    p.set_defaults(func=cmd_client)

    p = sub.add_parser("report", parents=[common],
                       help="re-render CSV and figures from a report JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "print_schema", False):
        print(schema_text())
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, DataError, SchemaError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (ProtocolError, ConnectionError, socket.timeout, socket.gaierror, TimeoutError) as exc:
        log.error("network error: %s", exc)
        return EXIT_NETWORK
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_USAGE
    except FedCilError as exc:
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - safety net
        log.exception("unexpected internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
