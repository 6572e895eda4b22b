"""Scenario runner: ``ige-sim <subcommand> [--scenario f.json] [--set k=v] ...``.

Every run writes CSV data, a JSON summary and a manifest holding the fully
resolved config, so ``ige-sim replay manifest.json`` reproduces the CSVs
byte for byte.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import __version__, apps, linkmodel, phy, protocol
from .errors import AllocationError, InvalidInputError, SchedulingError

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CONFIG, EXIT_OUTPUT = 0, 1, 2, 3, 4

SUBCOMMANDS = ("linearity", "estimate", "flood", "sweep-dp", "convergecast", "p2p", "overhead")

DEFAULTS = {
    "topology": {"layout": "testbed19", "seed": 0, "path_loss_exponent": None,
                 "shadowing_sigma_db": None, "ref_gain_db_at_1m": -30.0, "n": 3, "spacing": 1.0},
    "phy": {f.name: f.default for f in dataclasses.fields(phy.PhyConfig)},
    "overshoot": {f.name: f.default for f in dataclasses.fields(phy.OvershootModel)},
    "capture": {f.name: f.default for f in dataclasses.fields(linkmodel.CaptureConfig)},
    "protocol": {**{f.name: f.default for f in dataclasses.fields(protocol.ProtocolConfig)},
                 "power_set_dbm": [-20.0, -16.0, -8.0, -4.0, 0.0]},
    "network": {"rss_model": "trace", "max_sync_error_us": 0.25, "cfo_range_khz": [2.5, 5.0]},
    "linearity": {"rx_dbm_pairs": [[-50.0, -50.0], [-50.0, -53.0], [-32.0, -32.0], [-21.0, -21.0]],
                  "trials": 1000, "ideal": True, "beat_cycle_us": [200.0, 400.0],
                  "max_sync_error_us": 0.0},
    "estimate": {"min_adjust_mw": 0.4, "processes": 100},
    "flood": {"schemes": ["optimized", "flooding+ige", "random", "fixed"], "rounds": 1000},
    "sweep_dp": {"min_adjust_mw": [0.1, 0.2, 0.4, 0.8], "processes": 500},
    "convergecast": {"channels": 37, "trials": 10000, "sinr_floor_db": 10.0, "graph": "estimated",
                     "ige_processes": 3},
    "p2p": {"initial_map_size": 12, "rounds": 5000, "window": 20, "exclusion_threshold": 0.5,
            "min_samples": 20, "min_channels": 2, "sinr_floor_db": 10.0, "graph": "estimated",
            "ige_processes": 3, "pairs": None},
    "overhead": {"n_s": 10, "n_r": 3, "b": 71, "hop_sizes": [3, 3, 3]},
}

# which config entry --trials overrides, per subcommand
TRIALS_KEY = {"linearity": ("linearity", "trials"), "estimate": ("estimate", "processes"),
              "flood": ("flood", "rounds"), "sweep-dp": ("sweep_dp", "processes"),
              "convergecast": ("convergecast", "trials"), "p2p": ("p2p", "rounds")}


class ConfigError(Exception):
    pass


class OutputError(Exception):
    pass


# -- configuration ----------------------------------------------------------

def _merge(base: dict, over: dict, path=""):
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path}{k}")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            _merge(base[k], v, f"{path}{k}.")
        else:
            base[k] = v


def _parse_set(item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = val
    return out


def resolve_config(scenario: dict | None, overrides=(), trials=None, subcommand=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if scenario:
        if not isinstance(scenario, dict):
            raise ConfigError("scenario must be a JSON object")
        _merge(cfg, scenario)
    for item in overrides:
        _merge(cfg, _parse_set(item))
    if trials is not None:
        if trials < 1:
            raise ConfigError("--trials must be positive")
        if subcommand in TRIALS_KEY:
            sec, key = TRIALS_KEY[subcommand]
            cfg[sec][key] = trials
    return cfg


def load_scenario(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed scenario {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    return data


def _build(cls, section: dict, **extra):
    try:
        return cls(**section, **extra)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def build_phy(cfg) -> phy.PhyConfig:
    return _build(phy.PhyConfig, cfg["phy"])


def build_protocol(cfg) -> protocol.ProtocolConfig:
    sec = dict(cfg["protocol"])
    sec["power_set_dbm"] = tuple(float(p) for p in sec["power_set_dbm"])
    return _build(protocol.ProtocolConfig, sec)


def build_network(cfg, seed) -> protocol.Network:
    t = cfg["topology"]
    topo, graph = linkmodel.generate_topology(
        t["layout"], t["path_loss_exponent"], t["ref_gain_db_at_1m"], t["shadowing_sigma_db"],
        t["seed"], n=t["n"], spacing=t["spacing"])
    n = cfg["network"]
    return protocol.Network.build(
        topo, graph, build_phy(cfg), _build(linkmodel.CaptureConfig, cfg["capture"]),
        seed=[seed, 1], cfo_range_hz=tuple(1e3 * f for f in n["cfo_range_khz"]),
        overshoot=_build(phy.OvershootModel, cfg["overshoot"]),
        max_sync_error_s=1e-6 * n["max_sync_error_us"], rss_model=n["rss_model"])


# -- output -----------------------------------------------------------------

class Writer:
    def __init__(self, out_dir):
        self.out = out_dir
        self.files: list[str] = []
        try:
            os.makedirs(out_dir, exist_ok=True)
            probe = os.path.join(out_dir, ".write_probe")
            with open(probe, "w"):
                pass
            os.remove(probe)
        except OSError as e:
            raise OutputError(f"output directory {out_dir} is not writable: {e}") from None

    def _path(self, name):
        self.files.append(name)
        return os.path.join(self.out, name)

    def csv(self, name, header, rows):
        try:
            with open(self._path(name), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows([_fmt(v) for v in r] for r in rows)
        except OSError as e:
            raise OutputError(str(e)) from None

    def json(self, name, obj):
        try:
            with open(self._path(name), "w") as fh:
                json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as e:
            raise OutputError(str(e)) from None


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        return None if not math.isfinite(o) else float(o)
    return o


# -- subcommands ------------------------------------------------------------

def cmd_linearity(cfg, seed, w: Writer) -> dict:
    c = cfg["linearity"]
    config = build_phy(cfg)
    if c["ideal"]:
        config = config.ideal()
    over = _build(phy.OvershootModel, cfg["overshoot"])
    rng = np.random.default_rng(seed)
    rows, summary = [], []
    cycle = tuple(1e-6 * x for x in c["beat_cycle_us"])
    for pair in c["rx_dbm_pairs"]:
        ratios = []
        for k in range(c["trials"]):
            tr = phy.linearity_trial(pair, config, rng, cycle, over,
                                     max_sync_error_s=1e-6 * c["max_sync_error_us"])
            ratios.append(tr.ratio)
            rows.append([pair[0], pair[1], k, tr.beat_hz, *tr.individual_mw[:2], tr.superposed_mw, tr.ratio])
        r = np.array(ratios)
        summary.append({"rx_dbm": pair, "median_ratio": float(np.median(r)),
                        "p5_ratio": float(np.percentile(r, 5)), "p95_ratio": float(np.percentile(r, 95)),
                        "fraction_within_1pct": float(np.mean(np.abs(r - 1) <= 0.01))})
    w.csv("linearity.csv", ["rx1_dbm", "rx2_dbm", "trial", "beat_hz", "alone1_mw", "alone2_mw",
                            "superposed_mw", "power_ratio"], rows)
    return {"pairs": summary}


def _study_rows(study: protocol.IgeStudy):
    return [[study.min_adjust_mw, i, k, e] for i, (k, e) in enumerate(zip(study.kappas, study.errors_db))]


def cmd_estimate(cfg, seed, w: Writer) -> dict:
    c = cfg["estimate"]
    net = build_network(cfg, seed)
    study = protocol.run_ige_study(net, c["min_adjust_mw"], c["processes"], build_protocol(cfg), [seed, 2])
    w.csv("estimate_errors.csv", ["min_adjust_mw", "link", "kappa", "error_db"], _study_rows(study))
    deciles = []
    if len(study.kappas) >= 10:
        order = np.argsort(study.kappas, kind="stable")
        for k, idx in enumerate(np.array_split(order, 10)):
            deciles.append([k, float(np.median(study.kappas[idx])), float(np.median(study.errors_db[idx]))])
    w.csv("estimate_kappa_deciles.csv", ["decile", "median_kappa", "median_error_db"], deciles)
    return {"processes": study.processes, "success_rate": study.success_rate,
            "median_error_db": study.median_error_db, "censored_links": study.censored}


def cmd_flood(cfg, seed, w: Writer) -> dict:
    c = cfg["flood"]
    net = build_network(cfg, seed)
    pc = build_protocol(cfg)
    summary, cov, rounds = [], [], []
    for i, name in enumerate(c["schemes"]):
        try:
            scheme = protocol.Scheme(name)
        except ValueError:
            raise ConfigError(f"unknown scheme {name!r}") from None
        m = protocol.run_campaign(net, scheme, c["rounds"], pc, seed=[seed, 2, i])
        summary.append(m.summary())
        cov += [[scheme.value, s, f] for s, f in enumerate(m.coverage_by_slot)]
        rounds += [[r["scheme"], r["round"], r["phase"], r["complete"],
                    r["latency_slots"] if r["latency_slots"] is not None else ""] for r in m.records]
    w.csv("flood_summary.csv", ["scheme", "rounds", "per_slot_per", "e2e_per", "mean_latency_slots",
                                "ige_success_rate"],
          [[s["scheme"], s["rounds"], s["per_slot_per"], s["e2e_per"], s["mean_latency_slots"],
            "" if s["ige_success_rate"] is None else s["ige_success_rate"]] for s in summary])
    w.csv("flood_coverage.csv", ["scheme", "slot", "coverage_fraction"], cov)
    w.csv("flood_rounds.csv", ["scheme", "round", "phase", "complete", "latency_slots"], rounds)
    return {"schemes": summary}


def cmd_sweep_dp(cfg, seed, w: Writer) -> dict:
    c = cfg["sweep_dp"]
    net = build_network(cfg, seed)
    pc = build_protocol(cfg)
    rows, errs = [], []
    for dp in c["min_adjust_mw"]:
        # common random numbers: every step shares the bootstrap and noise stream
        s = protocol.run_ige_study(net, float(dp), c["processes"], pc, [seed, 2])
        rows.append([s.min_adjust_mw, s.processes, s.success_rate, s.median_error_db, s.censored])
        errs += _study_rows(s)
    w.csv("sweep_dp.csv", ["min_adjust_mw", "processes", "success_rate", "median_error_db",
                           "censored_links"], rows)
    w.csv("sweep_dp_errors.csv", ["min_adjust_mw", "link", "kappa", "error_db"], errs)
    return {"sweep": [dict(zip(["min_adjust_mw", "processes", "success_rate", "median_error_db",
                                "censored_links"], r)) for r in rows]}


def _app_graph(cfg, sec, seed):
    net = build_network(cfg, seed)
    if sec["graph"] == "truth":
        return net, net.graph
    if sec["graph"] != "estimated":
        raise ConfigError(f"graph must be 'truth' or 'estimated', got {sec['graph']!r}")
    return net, protocol.estimate_graph(net, build_protocol(cfg), sec["ige_processes"], [seed, 3])


def cmd_convergecast(cfg, seed, w: Writer) -> dict:
    c = cfg["convergecast"]
    net, est = _app_graph(cfg, c, seed)
    rows, summary = [], []
    for scheme in apps.ConvergecastScheme:
        r = apps.simulate_convergecast(net.topology, scheme, net.graph, c["channels"], c["trials"],
                                       [seed, 4], est, sinr_floor_db=c["sinr_floor_db"],
                                       capture=net.capture)
        rows += [[scheme.value, k, f] for k, f in enumerate(r.collected_fraction)]
        summary.append({"scheme": scheme.value, "success_prob": r.success_prob,
                        "mean_fraction_in_failed_trials": r.mean_fraction_failed(),
                        "groups": [list(g.members) for g in r.groups]})
    w.csv("convergecast.csv", ["scheme", "trial", "collected_fraction"], rows)
    return {"schemes": summary}


def cmd_p2p(cfg, seed, w: Writer) -> dict:
    c = cfg["p2p"]
    net, est = _app_graph(cfg, c, seed)
    pairs = [tuple(p) for p in c["pairs"]] if c["pairs"] else apps.default_pairs(net.topology)
    afh = _build(apps.AfhConfig, {k: c[k] for k in ("window", "exclusion_threshold", "min_samples",
                                                     "min_channels")})
    pdr_rows, trace_rows, reset_rows, summary = [], [], [], []
    for scheme in apps.AfhScheme:
        r = apps.simulate_p2p_afh(pairs, scheme, net.graph, c["initial_map_size"], c["rounds"], afh,
                                  [seed, 4], est, sinr_floor_db=c["sinr_floor_db"], capture=net.capture)
        pdr_rows += [[scheme.value, i, t, rx, p] for i, ((t, rx), p) in enumerate(zip(pairs, r.pdr))]
        trace_rows += [[scheme.value, k, *row] for k, row in enumerate(r.loss_trace)]
        reset_rows += [[scheme.value, k, i] for k, i in r.resets]
        summary.append({"scheme": scheme.value, "worst_pdr": r.worst_pdr, "mean_pdr": float(r.pdr.mean()),
                        "resets": len(r.resets), "groups": [list(g.members) for g in r.groups]})
    w.csv("p2p_pdr.csv", ["scheme", "pair", "tx", "rx", "pdr"], pdr_rows)
    w.csv("p2p_loss_trace.csv", ["scheme", "round", *[f"pair{i}_cumulative_lost_packets"
                                                      for i in range(len(pairs))]], trace_rows)
    w.csv("p2p_resets.csv", ["scheme", "round", "pair"], reset_rows)
    return {"pairs": [list(p) for p in pairs], "schemes": summary}


def cmd_overhead(cfg, seed, w: Writer) -> dict:
    c = cfg["overhead"]
    o_our, o_other, t_our, t_other = protocol.reporting_overhead(c["n_s"], c["n_r"], c["b"], c["hop_sizes"])
    w.csv("overhead.csv", ["scheme", "report_bits", "report_slots"],
          [["ours", o_our, t_our], ["other", o_other, t_other]])
    print(f"O_our={o_our} O_other={o_other} T_our={t_our} T_other={t_other}")
    return {"O_our_bits": o_our, "O_other_bits": o_other, "T_our_slots": t_our, "T_other_slots": t_other}


COMMANDS = {"linearity": cmd_linearity, "estimate": cmd_estimate, "flood": cmd_flood,
            "sweep-dp": cmd_sweep_dp, "convergecast": cmd_convergecast, "p2p": cmd_p2p,
            "overhead": cmd_overhead}


# -- entry point ------------------------------------------------------------

def run(subcommand: str, cfg: dict, seed: int, out_dir) -> dict:
    """Execute one resolved config and write its artifacts."""
    w = Writer(out_dir)
    summary = COMMANDS[subcommand](cfg, seed, w)
    w.json("summary.json", {"subcommand": subcommand, "seed": seed, **summary})
    manifest = {"version": __version__, "subcommand": subcommand, "seed": seed, "config": cfg,
                "outputs": sorted(w.files + ["manifest.json"])}
    w.json("manifest.json", manifest)
    return summary


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ige-sim", description="Power-domain interference graph estimation simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", help="JSON scenario file")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", default=f"out/{name}")
        s.add_argument("--set", action="append", default=[], metavar="K=V", dest="overrides")
        s.add_argument("--trials", type=int)
    r = sub.add_parser("replay", help="rerun a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.subcommand == "replay":
            m = load_scenario(args.manifest)
            if m.get("subcommand") not in COMMANDS or "config" not in m or "seed" not in m:
                raise ConfigError(f"{args.manifest} is not a manifest")
            cfg = resolve_config(m["config"])
            sub, seed = m["subcommand"], int(m["seed"])
        else:
            scenario = load_scenario(args.scenario) if args.scenario else None
            cfg = resolve_config(scenario, args.overrides, args.trials, args.subcommand)
            sub, seed = args.subcommand, args.seed
            if seed < 0:
                raise ConfigError("--seed must be non-negative")
        summary = run(sub, cfg, seed, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as e:
        print(f"output error: {e}", file=sys.stderr)
        return EXIT_OUTPUT
    except (InvalidInputError, AllocationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchedulingError, RuntimeError, ValueError, ArithmeticError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    if sub != "overhead":
        print(json.dumps(_jsonable(summary), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
