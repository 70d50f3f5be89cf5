"""Command-line pipeline: generate, impute, split, train, predict, score, combine."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from .core import LEVELS, ForecastPanel, Hierarchy, aggregate
from .ensemble import DEFAULT_FIXED_WEIGHTS, ExpertSet, fixed_weight_agg, mlpol_aggregate, uniform_agg
from .forecasters import (
    ArimaForecaster,
    ArTreeForecaster,
    ChainForecaster,
    Forecaster,
    LevelGBT,
    SeasonalStat,
    StationClassifier,
    chain_layout,
    complete_bottom_up,
    exp_weights,
)
from .forecasters.base import dump_json
from .hierarchy_eval import board_json, bootstrap_ci, format_board, hierarchical_loss, leaderboard
from .ingest import (
    GeneratorConfig,
    SplitSpec,
    load_json_config,
    make_splits,
    read_forecast,
    read_index,
    read_panel,
    write_forecast,
    write_index,
    write_panel,
    generate,
)
from .postprocess import integerize
from .preprocess import IMPUTATION_KINDS, ImputationStrategy, impute, load_holidays

logger = logging.getLogger("plugcast")

MODELS = ("seasonal_median", "seasonal_mean", "arima", "ar_tree", "classifier", "chain", "level_gbt", "chain_layout")


class CliError(Exception):
    pass


def _levels(arg: str | None, default):
    if arg is None:
        return tuple(default)
    if arg == "all":
        return LEVELS
    levels = tuple(a.strip() for a in arg.split(","))
    bad = [lv for lv in levels if lv not in LEVELS]
    if bad:
        raise CliError(f"unknown level {bad[0]!r}; choose from {', '.join(LEVELS)} or 'all'")
    return levels


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"cannot parse {text!r} as comma-separated numbers") from None


# subcommands -----------------------------------------------------------------


def cmd_generate(a) -> None:
    d = load_json_config(a.config) if a.config else {}
    if a.seed is not None:
        d["seed"] = a.seed
    cfg = GeneratorConfig.from_dict(d)
    panel = generate(cfg)
    write_panel(panel, a.out)
    logger.info("wrote %d timestamps x %d stations to %s", len(panel.times), len(panel.stations), a.out)


def cmd_impute(a) -> None:
    panel, _ = read_panel(a.inp, a.plugs)
    filled, report = impute(panel, ImputationStrategy(a.strategy, a.window, a.span))
    write_panel(filled, a.out)
    report_path = a.report or f"{a.out}.report.json"
    Path(report_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_split(a) -> None:
    panel, _ = read_panel(a.inp, a.plugs)
    if a.spec:
        spec = SplitSpec.from_dict(load_json_config(a.spec))
    elif a.test_days:
        spec = SplitSpec.tail(panel, a.test_days, a.seed if a.seed is not None else 0)
    else:
        raise CliError("give --spec or --test-days")
    if a.seed is not None and a.spec:
        spec = SplitSpec.from_dict({**spec.to_dict(), "seed": a.seed})
    sp = make_splits(panel, spec)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_panel(sp.train, out / "train.csv")
    write_panel(sp.test, out / "test.csv")
    write_index(sp.test.times, out / "test.idx")
    write_index(sp.public, out / "public.idx")
    write_index(sp.private, out / "private.idx")
    dump_json(spec.to_dict(), out / "split.json")


def _build(a) -> Forecaster:
    hol = None
    if a.holidays:
        hol = [d.isoformat() for d in sorted(load_holidays(a.holidays))]
    tree_kw = {k: v for k, v in {"max_depth": a.depth, "learning_rate": a.learning_rate}.items() if v is not None}
    if hol is not None:
        tree_kw["holidays"] = hol
    if a.patience:
        tree_kw["early_stopping"] = {"patience": a.patience, "validation_fraction": a.validation_fraction}

    def rounds(default):
        return a.rounds if a.rounds is not None else default

    m = a.model
    if m in ("seasonal_median", "seasonal_mean"):
        return SeasonalStat(m.split("_")[1], _levels(a.level, LEVELS))
    if m == "arima":
        return ArimaForecaster(levels=_levels(a.level, ("station",)))
    if m == "ar_tree":
        return ArTreeForecaster(n_lags=a.n_lags, rounds=rounds(100), levels=_levels(a.level, ("station",)), **tree_kw)
    if m == "classifier":
        if a.level not in (None, "station"):
            raise CliError("the classifier only models the station level")
        return StationClassifier(rounds=rounds(300), **tree_kw)
    if m == "chain":
        level = a.level or "area"
        if level not in ("area", "global"):
            raise CliError("chain models the area or global level")
        order = tuple(a.chain_order.split(",")) if a.chain_order else None
        return ChainForecaster(level, **({"order": order} if order else {}), rounds=rounds(100), **tree_kw)
    if m == "level_gbt":
        return LevelGBT(_levels(a.level, LEVELS), rounds=rounds(150), **({"max_depth": 4} | tree_kw))
    if m == "chain_layout":
        return chain_layout(rounds(300), rounds(100), **tree_kw)
    raise CliError(f"unknown model {m!r}")


def cmd_train(a) -> None:
    panel, _ = read_panel(a.inp, a.plugs)
    model = _build(a)
    weights = None
    if a.loss == "exp":
        if not model.supports_weights:
            raise CliError(f"--loss exp is not supported by {a.model}")
        weights = exp_weights(panel.times, a.tau_days, a.t_max)
    model.fit(panel, weights, jobs=a.jobs)
    model.save(a.out)
    logger.info("trained %s: %d models over %d nodes", a.model, model.n_models, len(model.nodes))


def cmd_predict(a) -> None:
    times = read_index(a.times)
    out = None
    hierarchy = None
    for path in a.model:
        f = Forecaster.load(path)
        hierarchy = hierarchy or f.hierarchy
        if f.hierarchy.station_ids != hierarchy.station_ids:
            raise CliError(f"{path}: trained on different stations than {a.model[0]}")
        fp = complete_bottom_up(f.forecast(times), hierarchy)
        out = fp if out is None else out.overlay(fp)
    absent = [n for n in hierarchy.nodes if n not in out.nodes]
    if absent:
        raise CliError(f"models do not cover node {absent[0]!r}; add a model for that level")
    write_forecast(out.reorder(hierarchy), a.out)


def _hierarchy_from(path, plugs) -> Hierarchy:
    panel, _ = read_panel(path, plugs)
    return panel.hierarchy


def cmd_postprocess(a) -> None:
    fp = read_forecast(a.inp)
    h = _hierarchy_from(a.stations, a.plugs)
    write_forecast(integerize(fp, h, a.plugs, recompute_aggregates=not a.keep_aggregates), a.out)


def _truth(path, plugs) -> ForecastPanel:
    panel, _ = read_panel(path, plugs)
    return aggregate(panel, strict=False)


def _select(fp: ForecastPanel, truth: ForecastPanel, subset) -> pd.DatetimeIndex:
    times = read_index(subset) if subset else truth.times
    lacking = times.difference(fp.times)
    if len(lacking):
        raise CliError(f"prediction lacks timestamp {lacking[0]}")
    lacking = times.difference(truth.times)
    if len(lacking):
        raise CliError(f"truth lacks timestamp {lacking[0]}")
    return times


def cmd_evaluate(a) -> None:
    truth = _truth(a.truth, a.plugs)
    pred = read_forecast(a.pred)
    times = _select(pred, truth, a.subset)
    report = hierarchical_loss(truth, pred, times)
    out = report.to_dict()
    if a.bootstrap:
        out["ci"] = bootstrap_ci(report.per_timestamp, a.bootstrap, a.ci_level, a.seed)
    Path(a.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    if a.per_timestamp:
        report.per_timestamp_frame().to_csv(a.per_timestamp, index=False, lineterminator="\n")
    print(f"total {report.total:.6f} (sum {report.total_sum:.6f} over {report.n_timestamps} timestamps)")


def _names(paths) -> list[str]:
    names, seen = [], {}
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        names.append(stem if seen[stem] == 1 else f"{stem}_{seen[stem]}")
    return names


def cmd_aggregate(a) -> None:
    panels = [read_forecast(p) for p in a.preds]
    ref = panels[0]
    panels = [p.select_nodes(ref.nodes).select_times(ref.times) if p.nodes != ref.nodes or not p.times.equals(ref.times) else p for p in panels]
    experts = ExpertSet(tuple(_names(a.preds)), tuple(panels))
    if a.method == "uniform":
        agg = uniform_agg(experts)
    elif a.method == "fixed":
        weights = _float_list(a.weights) if a.weights else list(DEFAULT_FIXED_WEIGHTS)
        agg = fixed_weight_agg(experts, weights)
    else:
        if not a.truth:
            raise CliError("mlpol needs --truth")
        truth = _truth(a.truth, a.plugs)
        window = read_index(a.fit_window) if a.fit_window else None
        if a.mode == "freeze" and window is None:
            logger.warning("no --fit-window given; fitting MLpol weights on the whole horizon")
        res = mlpol_aggregate(experts, truth, a.mode, window)
        agg = res.panel
        res.write_trace(a.trace or f"{a.out}.weights.csv")
    write_forecast(agg, a.out)


def cmd_leaderboard(a) -> None:
    truth = _truth(a.truth, a.plugs)
    entries = {}
    for name, p in zip(_names(a.preds), a.preds):
        entries[name] = read_forecast(p)
    ref = next(iter(entries.values()))
    times = _select(ref, truth, a.subset)
    for name, fp in entries.items():
        _select(fp, truth, a.subset)
    board = leaderboard(entries, truth, times)
    raw = leaderboard(entries, truth, times, raw=True)
    text = "mean loss per timestamp\n" + format_board(board, a.digits) + "\nsummed over timestamps\n" + format_board(raw, a.digits)
    Path(a.out).write_text(text)
    if a.json:
        Path(a.json).write_text(board_json(board))
    sys.stdout.write(format_board(board, a.digits))


# parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plugcast", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--plugs", type=int, default=3, help="plugs per station (default 3)")
        return sp

    g = add("generate", cmd_generate, "write a synthetic panel CSV")
    g.add_argument("--config", help="generator JSON config (schema 1); defaults used when omitted")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--out", required=True)

    i = add("impute", cmd_impute, "fill MISSING cells of a panel")
    i.add_argument("--in", dest="inp", required=True)
    i.add_argument("--strategy", choices=IMPUTATION_KINDS, default="emw")
    i.add_argument("--window", type=int, default=8)
    i.add_argument("--span", type=int, default=8)
    i.add_argument("--out", required=True)
    i.add_argument("--report", help="JSON report path (default: <out>.report.json)")

    s = add("split", cmd_split, "train / test split with public and private index files")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--spec", help="split JSON (train/test ranges, public fraction, seed)")
    s.add_argument("--test-days", type=int, help="hold out the last N days instead of --spec")
    s.add_argument("--seed", type=int, help="seed of the public draw (overrides the spec)")
    s.add_argument("--out-dir", required=True)

    t = add("train", cmd_train, "fit a forecaster and write a model bundle")
    t.add_argument("--model", choices=MODELS, required=True)
    t.add_argument("--level", help="station, area, global, a comma list or 'all' (model dependent default)")
    t.add_argument("--loss", choices=("equal", "exp"), default="equal")
    t.add_argument("--tau-days", type=float, default=30.0)
    t.add_argument("--t-max", help="reference time of the exp loss (default: one step after training end)")
    t.add_argument("--in", dest="inp", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--rounds", type=int, help="boosting rounds (model dependent default)")
    t.add_argument("--depth", type=int, help="tree depth")
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--n-lags", type=int, default=20)
    t.add_argument("--chain-order", help="comma list of states for the chain, e.g. Available,Charging,Passive,Other")
    t.add_argument("--holidays", help="file with one ISO date per line")
    t.add_argument("--patience", type=int, default=0, help="early-stopping patience in rounds (0 = off)")
    t.add_argument("--validation-fraction", type=float, default=0.1)
    t.add_argument("--jobs", type=int, default=1, help="fit independent models on N threads")

    pr = add("predict", cmd_predict, "forecast with one or more bundles (later bundles override shared nodes)")
    pr.add_argument("--model", action="append", required=True, help="model bundle directory; repeatable")
    pr.add_argument("--times", required=True, help="index file of timestamps to forecast")
    pr.add_argument("--out", required=True)

    pp = add("postprocess", cmd_postprocess, "round-and-rescale station forecasts and rebuild aggregates")
    pp.add_argument("--in", dest="inp", required=True)
    pp.add_argument("--stations", required=True, help="any panel CSV listing the stations and their areas")
    pp.add_argument("--keep-aggregates", action="store_true", help="keep area/global values instead of summing")
    pp.add_argument("--out", required=True)

    e = add("evaluate", cmd_evaluate, "score a forecast with the hierarchical L1 loss")
    e.add_argument("--truth", required=True, help="panel CSV")
    e.add_argument("--pred", required=True, help="forecast CSV")
    e.add_argument("--subset", help="index file restricting the scored timestamps")
    e.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples for a CI (0 = none)")
    e.add_argument("--ci-level", type=float, default=0.95)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--per-timestamp", help="also write per-timestamp losses as CSV")
    e.add_argument("--out", required=True)

    ag = add("aggregate", cmd_aggregate, "combine forecasts")
    ag.add_argument("--preds", nargs="+", required=True)
    ag.add_argument("--method", choices=("uniform", "fixed", "mlpol"), default="uniform")
    ag.add_argument("--weights", help="comma list for --method fixed (default 0.35,0.25,0.4)")
    ag.add_argument("--truth", help="panel CSV (mlpol)")
    ag.add_argument("--mode", choices=("online", "freeze"), default="freeze")
    ag.add_argument("--fit-window", help="index file of timestamps MLpol learns on (freeze mode)")
    ag.add_argument("--trace", help="weight trace CSV (default: <out>.weights.csv)")
    ag.add_argument("--out", required=True)

    lb = add("leaderboard", cmd_leaderboard, "score several forecasts side by side")
    lb.add_argument("--truth", required=True)
    lb.add_argument("--preds", nargs="+", required=True)
    lb.add_argument("--subset")
    lb.add_argument("--digits", type=int, default=3)
    lb.add_argument("--json", help="also write the table as JSON")
    lb.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(a.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    try:
        a.func(a)
    except (CliError, ValueError, KeyError, FileNotFoundError, OSError, RuntimeError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"plugcast {a.command}: error: " + str(msg).replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
