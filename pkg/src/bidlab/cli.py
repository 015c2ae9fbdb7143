"""Command-line entry point: ingest, synth, calibrate, train, evaluate.

Configuration values resolve as flags > config file > defaults. The config
file is a flat ``key=value`` document using the same key names as the
long flags (underscores). Every command writes its outputs atomically and
never mutates its inputs.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from bidlab import env, evalkit, logstore, strategies
from bidlab.ioutil import atomic_write_text
from bidlab.reports import SweepCell, emit_report
from bidlab.sac.agent import (
    SacConfig,
    load_checkpoint,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Invalid configuration key, value, or combination."""


@dataclass(frozen=True, slots=True)
class KeySpec:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_fractions(raw: str) -> tuple[Fraction, ...]:
    out = []
    for piece in raw.split(","):
        piece = piece.strip()
        if not piece:
            continue
        out.append(Fraction(piece))
    if not out:
        raise ValueError("no budget fractions given")
    if any(f <= 0 for f in out):
        raise ValueError("budget fractions must be positive")
    return tuple(out)


def _parse_hidden(raw: str) -> tuple[int, ...]:
    sizes = tuple(int(p) for p in raw.split(",") if p.strip())
    if not sizes or any(s <= 0 for s in sizes):
        raise ValueError(f"bad hidden sizes: {raw!r}")
    return sizes


def _parse_optional_float(raw: str) -> float | None:
    raw = raw.strip()
    if raw.lower() in ("", "none", "auto"):
        return None
    return float(raw)


# Every tunable key, its parser, default, and help line. Flags are the key
# names with dashes; the config file uses the key names verbatim.
CONFIG_KEYS: dict[str, KeySpec] = {
    spec.name: spec
    for spec in [
        KeySpec("seed", int, None, "master random seed"),
        KeySpec(
            "fractions",
            _parse_fractions,
            _parse_fractions("1/2,1/4,1/8,1/16"),
            "budget fractions of actual episode cost, comma separated",
        ),
        KeySpec("price_min", int, 0, "bid floor in milli-FEN"),
        KeySpec("price_max", int, 300, "bid ceiling in milli-FEN"),
        KeySpec("epochs", int, 5, "training sweeps over the training periods"),
        KeySpec(
            "normalize_case2",
            _parse_bool,
            False,
            "scale the both-win reward's slot funds by the slot allocation",
        ),
        KeySpec("fixed_price", int, 300, "price for the fixed bidder"),
        KeySpec("gamma", float, 1.0, "TD discount factor"),
        KeySpec("tau", float, 0.0005, "target-critic soft-update weight"),
        KeySpec("buffer_capacity", int, 1_000_000, "replay buffer size M"),
        KeySpec("batch_size", int, 256, "mini-batch size N"),
        KeySpec(
            "train_every", int, 30_000, "train once per k stored transitions"
        ),
        KeySpec("rounds_per_training", int, 128, "update rounds L per training"),
        KeySpec(
            "target_update_every", int, 4, "soft-update period d in rounds"
        ),
        KeySpec("lr_q", float, 3e-4, "critic learning rate"),
        KeySpec("lr_actor", float, 3e-4, "actor learning rate"),
        KeySpec("lr_alpha", float, 3e-4, "temperature learning rate"),
        KeySpec("log_std_min", float, -20.0, "policy log-scale clamp floor"),
        KeySpec("log_std_max", float, 2.0, "policy log-scale clamp ceiling"),
        KeySpec("squash_eps", float, 1e-6, "tanh squash-correction epsilon"),
        KeySpec(
            "entropy_target",
            _parse_optional_float,
            None,
            "entropy floor H0 (default: -action_dim)",
        ),
        KeySpec("imps", int, 10_000, "synthetic impressions to draw"),
        KeySpec("periods", int, 1, "synthetic delivery periods"),
        KeySpec("pctr_alpha", float, 2.0, "synthetic pCTR Beta alpha"),
        KeySpec("pctr_beta", float, 1800.0, "synthetic pCTR Beta beta"),
        KeySpec("price_scale", float, 70.0, "synthetic mean market price"),
        KeySpec("price_noise", float, 0.25, "synthetic price noise sigma"),
        KeySpec("max_price", int, 300, "synthetic market price ceiling"),
    ]
}


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a flat key=value config document."""
    values: dict[str, Any] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        spec = CONFIG_KEYS.get(key)
        if spec is None:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = spec.parse(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def _add_config_args(parser: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    for name in keys:
        spec = CONFIG_KEYS[name]
        parser.add_argument(
            "--" + name.replace("_", "-"),
            dest=name,
            type=spec.parse,
            default=argparse.SUPPRESS,
            help=f"{spec.help} (default: {spec.default})",
            metavar="V",
        )


def resolve_config(
    args: argparse.Namespace, keys: Sequence[str]
) -> dict[str, Any]:
    """defaults <- config file <- explicit flags."""
    merged = {name: CONFIG_KEYS[name].default for name in keys}
    config_path = getattr(args, "config", None)
    if config_path:
        file_values = load_config_file(config_path)
        for name, value in file_values.items():
            if name in merged:
                merged[name] = value
    for name in keys:
        if hasattr(args, name):
            merged[name] = getattr(args, name)
    return merged


def _require_seed(cfg: dict[str, Any]) -> int:
    if cfg.get("seed") is None:
        raise ConfigError("--seed is mandatory for this command")
    return int(cfg["seed"])


def _sac_config(cfg: dict[str, Any]) -> SacConfig:
    return SacConfig(
        gamma=cfg["gamma"],
        tau=cfg["tau"],
        buffer_capacity=cfg["buffer_capacity"],
        batch_size=cfg["batch_size"],
        train_every=cfg["train_every"],
        rounds_per_training=cfg["rounds_per_training"],
        target_update_every=cfg["target_update_every"],
        lr_q=cfg["lr_q"],
        lr_actor=cfg["lr_actor"],
        lr_alpha=cfg["lr_alpha"],
        log_std_min=cfg["log_std_min"],
        log_std_max=cfg["log_std_max"],
        squash_eps=cfg["squash_eps"],
        entropy_target=cfg["entropy_target"],
    )


def _bounds(cfg: dict[str, Any]) -> env.BidBounds:
    try:
        return env.BidBounds(cfg["price_min"], cfg["price_max"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _budget_map(
    episodes: Sequence[logstore.Episode], fraction: Fraction
) -> dict[str, int]:
    return {
        ep.period_id: evalkit.fraction_budget(ep, fraction) for ep in episodes
    }


SAC_KEYS = (
    "gamma",
    "tau",
    "buffer_capacity",
    "batch_size",
    "train_every",
    "rounds_per_training",
    "target_update_every",
    "lr_q",
    "lr_actor",
    "lr_alpha",
    "log_std_min",
    "log_std_max",
    "squash_eps",
    "entropy_target",
)

SYNTH_KEYS = (
    "imps",
    "periods",
    "pctr_alpha",
    "pctr_beta",
    "price_scale",
    "price_noise",
    "max_price",
)


def cmd_ingest(args: argparse.Namespace) -> int:
    columns = logstore.IpinyouColumns(
        click=args.ipinyou_click_col,
        timestamp=args.ipinyou_timestamp_col,
        payprice=args.ipinyou_payprice_col,
        pctr=args.ipinyou_pctr_col,
    )
    episodes = logstore.ingest_log(args.input, args.format, columns)
    logstore.write_native_csv(episodes, args.out)
    total = sum(len(ep) for ep in episodes)
    print(f"ingested {total} impressions into {len(episodes)} episodes -> {args.out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, ("seed", *SYNTH_KEYS))
    seed = _require_seed(cfg)
    spec = logstore.SynthSpec(
        imps=cfg["imps"],
        periods=cfg["periods"],
        pctr_alpha=cfg["pctr_alpha"],
        pctr_beta=cfg["pctr_beta"],
        price_scale=cfg["price_scale"],
        price_noise=cfg["price_noise"],
        max_price=cfg["max_price"],
    )
    episodes = logstore.synth_log(spec, seed)
    logstore.write_native_csv(episodes, args.out)
    summary = logstore.stats(episodes)
    print(
        f"synthesized {summary.imps} impressions, {summary.clicks} clicks, "
        f"cost {summary.cost} -> {args.out}"
    )
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, ("price_min", "price_max"))
    bounds = _bounds(cfg)
    fraction = Fraction(args.fraction)
    episodes = logstore.ingest_log(args.train)
    budgets = _budget_map(episodes, fraction)
    metadata = {
        "fraction": str(fraction),
        "price_min": bounds.price_min,
        "price_max": bounds.price_max,
        "train": str(args.train),
    }
    if args.strategy == "lin":
        params: strategies.LinParams | strategies.OrtbParams = (
            strategies.calibrate_lin(episodes, budgets, bounds)
        )
        metadata["grid"] = "base_bid 1..300 step 1"
    elif args.strategy == "ortb":
        params = strategies.calibrate_ortb(episodes, budgets, bounds)
        metadata["grid"] = "c 5..100 step 5, lambda logspace(1e-7,1e-3,17)"
    else:
        raise ConfigError(f"unknown strategy {args.strategy!r}")
    strategies.save_params(params, args.out, metadata)
    print(f"calibrated {args.strategy} at {fraction} -> {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(
        args,
        ("seed", "epochs", "normalize_case2", "price_min", "price_max", *SAC_KEYS),
    )
    seed = _require_seed(cfg)
    bounds = _bounds(cfg)
    fraction = Fraction(args.fraction)
    episodes = logstore.ingest_log(args.train)
    params = strategies.load_params(args.lin_params)
    if not isinstance(params, strategies.LinParams):
        raise ConfigError("--lin-params must point to linear-bidder params")
    budgets = _budget_map(episodes, fraction)
    sac_config = _sac_config(cfg)
    result = evalkit.train_policy(
        episodes,
        params,
        budgets,
        sac_config,
        seed=seed,
        epochs=cfg["epochs"],
        bounds=bounds,
        normalize_case2=cfg["normalize_case2"],
    )
    metadata = {
        "fraction": str(fraction),
        "lin_base_bid": params.base_bid,
        "lin_avg_pctr": params.avg_pctr,
        "price_min": bounds.price_min,
        "price_max": bounds.price_max,
        "seed": seed,
        "epochs": cfg["epochs"],
        "normalize_case2": cfg["normalize_case2"],
        "transitions": result.buffer.total_pushed,
    }
    save_checkpoint(result.bundle, args.out, result.buffer, metadata)
    if args.log:
        log_doc = [
            {
                "training": i,
                "skipped": log.skipped,
                "rounds": [
                    {
                        "round": r.round,
                        "loss_q1": r.loss_q1,
                        "loss_q2": r.loss_q2,
                        "loss_actor": r.loss_actor,
                        "loss_alpha": r.loss_alpha,
                        "alpha": r.alpha,
                    }
                    for r in log.rounds
                ],
            }
            for i, log in enumerate(result.logs)
        ]
        atomic_write_text(args.log, json.dumps(log_doc, sort_keys=True) + "\n")
    trainings = sum(0 if log.skipped else 1 for log in result.logs)
    print(
        f"trained {cfg['epochs']} epochs over {len(episodes)} periods "
        f"({result.buffer.total_pushed} transitions, {trainings} trainings) "
        f"-> {args.out}"
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(
        args,
        ("seed", "fractions", "price_min", "price_max", "fixed_price"),
    )
    _require_seed(cfg)
    bounds = _bounds(cfg)
    episodes = logstore.ingest_log(args.test)
    fractions = cfg["fractions"]
    wanted = [s.strip() for s in args.strategies.split(",") if s.strip()]

    lin_params: strategies.LinParams | None = None
    if args.lin_params:
        loaded = strategies.load_params(args.lin_params)
        if not isinstance(loaded, strategies.LinParams):
            raise ConfigError("--lin-params must point to linear-bidder params")
        lin_params = loaded

    static: dict[str, env.StaticBidder] = {}
    for name in wanted:
        if name == "lin":
            if lin_params is None:
                raise ConfigError("strategy 'lin' needs --lin-params")
            static["lin"] = strategies.LinBidder(lin_params)
        elif name == "ortb":
            if not args.ortb_params:
                raise ConfigError("strategy 'ortb' needs --ortb-params")
            ortb = strategies.load_params(args.ortb_params)
            if not isinstance(ortb, strategies.OrtbParams):
                raise ConfigError("--ortb-params must point to ortb params")
            static["ortb"] = strategies.OrtbBidder(ortb)
        elif name == "fixed":
            static[f"fixed{cfg['fixed_price']}"] = strategies.FixedPriceBidder(
                cfg["fixed_price"]
            )
        elif name == "scheduled-lambda":
            if not args.lambda_schedule:
                raise ConfigError(
                    "strategy 'scheduled-lambda' needs --lambda-schedule"
                )
            schedule = strategies.load_schedule(args.lambda_schedule)
            static["scheduled-lambda"] = strategies.ScheduledLambdaBidder(schedule)
        elif name == "zero":
            pass  # handled below: dynamic replay with a forced zero action
        else:
            raise ConfigError(f"unknown strategy {name!r}")

    cells: list[SweepCell] = evalkit.budget_sweep(
        episodes, static, fractions, bounds
    )

    if "zero" in wanted:
        if lin_params is None:
            raise ConfigError("strategy 'zero' needs --lin-params")
        lin_bidder = strategies.LinBidder(lin_params)
        for fraction in fractions:
            for ep in episodes:
                report, _ = env.replay_learning(
                    ep,
                    None,
                    evalkit.fraction_budget(ep, fraction),
                    lin_bidder,
                    avg_pctr_train=lin_params.avg_pctr,
                    bounds=bounds,
                    action_mode="zero",
                )
                cells.append(
                    SweepCell(
                        "zero",
                        evalkit.fraction_label(fraction),
                        ep.period_id,
                        report,
                    )
                )

    used_names: set[str] = set()
    for ckpt_path in args.checkpoint or []:
        bundle, metadata = load_checkpoint(ckpt_path)
        try:
            fraction = Fraction(metadata["fraction"])
            ckpt_lin = strategies.LinParams(
                base_bid=metadata["lin_base_bid"],
                avg_pctr=metadata["lin_avg_pctr"],
            )
        except KeyError as exc:
            raise ConfigError(
                f"checkpoint {ckpt_path} lacks metadata field {exc}"
            ) from exc
        name = "sac"
        suffix = 2
        while (name, str(fraction)) in used_names:
            name = f"sac{suffix}"
            suffix += 1
        used_names.add((name, str(fraction)))
        cells.extend(
            evalkit.evaluate_policy(
                episodes, bundle, ckpt_lin, fraction, bounds, strategy_name=name
            )
        )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fmt, suffix in (("csv", "csv"), ("json", "json"), ("markdown", "md")):
        atomic_write_text(out_dir / f"report.{suffix}", emit_report(cells, fmt))
    print(
        f"evaluated {len(cells)} cells over {len(episodes)} periods "
        f"-> {out_dir}/report.{{csv,json,md}}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bidlab",
        description=(
            "Replay lab for budget-constrained second-price bidding: log "
            "ingestion and synthesis, static-strategy calibration, "
            "adjustment-policy training, and budget-sweep evaluation."
        ),
    )
    parser.add_argument(
        "--config",
        help="flat key=value config file (flags override file values)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", help="convert a raw log into an episode archive")
    p.add_argument("--input", required=True, help="source log file")
    p.add_argument(
        "--format",
        choices=("native-csv", "ipinyou-tsv"),
        default="native-csv",
        help="input format (default: native-csv)",
    )
    p.add_argument("--out", required=True, help="episode archive (native csv)")
    p.add_argument("--ipinyou-click-col", type=int, default=0, metavar="N")
    p.add_argument("--ipinyou-timestamp-col", type=int, default=4, metavar="N")
    p.add_argument("--ipinyou-payprice-col", type=int, default=23, metavar="N")
    p.add_argument("--ipinyou-pctr-col", type=int, default=None, metavar="N")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic episode archive")
    p.add_argument("--out", required=True, help="episode archive (native csv)")
    _add_config_args(p, ("seed", *SYNTH_KEYS))
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("calibrate", help="grid-search a static strategy")
    p.add_argument("--train", required=True, help="training episode archive")
    p.add_argument(
        "--strategy", choices=("lin", "ortb"), default="lin",
        help="strategy family to calibrate (default: lin)",
    )
    p.add_argument(
        "--fraction", default="1/2",
        help="budget fraction used during calibration replays (default: 1/2)",
    )
    p.add_argument("--out", required=True, help="params JSON output")
    _add_config_args(p, ("price_min", "price_max"))
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("train", help="train the bid-adjustment policy")
    p.add_argument("--train", required=True, help="training episode archive")
    p.add_argument("--lin-params", required=True, help="calibrated LIN params JSON")
    p.add_argument(
        "--fraction", default="1/2",
        help="budget fraction for the training replays (default: 1/2)",
    )
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="optional training-log JSON path")
    _add_config_args(
        p,
        ("seed", "epochs", "normalize_case2", "price_min", "price_max", *SAC_KEYS),
    )
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="budget-sweep comparison report")
    p.add_argument("--test", required=True, help="testing episode archive")
    p.add_argument("--out-dir", required=True, help="report output directory")
    p.add_argument(
        "--strategies", default="lin",
        help="comma list of lin,ortb,fixed,zero,scheduled-lambda (default: lin)",
    )
    p.add_argument("--lin-params", default=None, help="LIN params JSON")
    p.add_argument("--ortb-params", default=None, help="ORTB params JSON")
    p.add_argument(
        "--lambda-schedule", default=None, help="lambda schedule JSON"
    )
    p.add_argument(
        "--checkpoint", action="append", default=[],
        help="policy checkpoint to evaluate (repeatable)",
    )
    _add_config_args(
        p, ("seed", "fractions", "price_min", "price_max", "fixed_price")
    )
    p.set_defaults(handler=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 on --help; keep both.
        return int(exc.code or 0)
    if getattr(args, "handler", None) is None:
        parser.print_help()
        return EXIT_OK
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except logstore.InvalidSpecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (logstore.LogError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
