"""Command line entry point: ``actor-graph <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, TrainConfig, build_dataclass, parse_config_text, parse_overrides
from .data import Dataset, ParseError, SynthConfig, generate_synthetic_dataset, parse_clip_file, serialize_dataset
from .model import init_params, predict
from .numeric import ShapeError
from .relation import build_multi_graph
from .render import render_svg
from .training import CheckpointError, TrainingError, evaluate, load_checkpoint, metrics_report, save_checkpoint, train

log = logging.getLogger("actor_graph")

PREDICT_FIELDS = "clip_id, activity_id, activity_name, activity_prob, action_ids (comma separated, actor order)"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="actor-graph", description="Actor relation graph group activity recognition.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic clip dataset")
    p.add_argument("--out", type=Path, required=True)
    _add_config_args(p)

    p = sub.add_parser("train", help="stage 1 (and stage 2 when stage=2) training")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eval-data", type=Path, help="labeled clips for the report (default: training data)")
    p.add_argument("--checkpoint", type=Path, required=True, help="output checkpoint path")
    p.add_argument("--report", type=Path, help="metrics report path (default: stdout)")
    _add_config_args(p)

    p = sub.add_parser("eval", help="metrics on a labeled clip file")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--report", type=Path)

    p = sub.add_parser("predict", help="one line per clip: " + PREDICT_FIELDS,
                       description="Writes one tab-separated line per clip with fields: " + PREDICT_FIELDS + ".")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("graph", help="dump a clip's relation graph(s) as text")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--checkpoint", type=Path, help="model whose embedder/relation weights to use")
    _add_config_args(p)

    p = sub.add_parser("render", help="SVG overlays of predictions")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--clip", help="render only this clip")
    return parser


def _resolve(cls, args, base=None, seed_key: bool = True):
    values = {}
    if args.config is not None:
        try:
            values.update(parse_config_text(args.config.read_text()))
        except OSError as e:
            raise UsageError(f"cannot read config: {e}") from None
    values.update(parse_overrides(args.overrides))
    if seed_key and args.seed is not None:
        values["seed"] = str(args.seed)
    try:
        return build_dataclass(cls, values, base)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _read_dataset(path: Path) -> Dataset:
    try:
        return parse_clip_file(path.read_bytes())
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    except ParseError as e:
        raise DataError(f"{path}: {e}") from None


def _write(path: Optional[Path], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _check_dims(ds: Dataset, m) -> None:
    if ds.feature_dim != m.in_dim:
        raise DataError(f"feature dimension mismatch: model expects d={m.in_dim}, data has d={ds.feature_dim}")
    if ds.n_actions != m.n_actions or ds.n_activities != m.n_activities:
        raise DataError(f"class count mismatch: model has A={m.n_actions} C={m.n_activities}, "
                        f"data has A={ds.n_actions} C={ds.n_activities}")


def _log_config(items) -> None:
    for k, v in items:
        log.info("config %s=%s", k, v)


def cmd_synth(args) -> None:
    cfg = _resolve(SynthConfig, args, seed_key=False)
    seed = args.seed if args.seed is not None else 0
    try:
        cfg.check()
    except ValueError as e:
        raise UsageError(str(e)) from None
    _log_config(list(vars(cfg).items()) + [("seed", seed)])
    args.out.write_bytes(serialize_dataset(generate_synthetic_dataset(cfg, seed)))


def cmd_train(args) -> None:
    cfg = _resolve(TrainConfig, args)
    _log_config(cfg.items())
    ds = _read_dataset(args.data)
    eval_ds = _read_dataset(args.eval_data) if args.eval_data else ds
    m, curves = train(ds, cfg)
    save_checkpoint(m, cfg, args.checkpoint)
    _check_dims(eval_ds, m)
    metrics = evaluate(eval_ds, m, cfg)
    metrics.loss_curve = curves
    _write(args.report, metrics_report(metrics, cfg, eval_ds))


def _load(args):
    m, cfg = load_checkpoint(args.checkpoint)
    _log_config(cfg.items())
    ds = _read_dataset(args.data)
    _check_dims(ds, m)
    return ds, m, cfg


def cmd_eval(args) -> None:
    ds, m, cfg = _load(args)
    _write(args.report, metrics_report(evaluate(ds, m, cfg), cfg, ds))


def cmd_predict(args) -> None:
    ds, m, cfg = _load(args)
    lines = []
    for clip in ds.clips:
        p = predict(clip, m, cfg)
        k = p.activity_class
        lines.append("\t".join([clip.clip_id, str(k), ds.activity_names[k], repr(float(p.activity_probs[k])),
                                ",".join(str(int(a)) for a in p.action_classes)]))
    _write(args.out, "".join(line + "\n" for line in lines))


def cmd_graph(args) -> None:
    ds = _read_dataset(args.data)
    clip = next((c for c in ds.clips if c.clip_id == args.clip), None)
    if clip is None:
        raise DataError(f"no clip {args.clip!r} in {args.data}")
    if args.checkpoint is not None:
        m, base = load_checkpoint(args.checkpoint)
        cfg = _resolve(TrainConfig, args, base)
        _check_dims(ds, m)
    else:
        cfg = _resolve(TrainConfig, args)
        m = init_params(ds.feature_dim, ds.n_actions, ds.n_activities, cfg)
    _log_config(cfg.items())
    x = clip.features @ m["embed.w"].T + m["embed.b"]
    graphs = build_multi_graph(clip, [(m.mode, m.relation_params(g, cfg)) for g in range(m.n_graphs)], x)
    out = []
    for g, rg in enumerate(graphs):
        out.append(f"# clip {clip.clip_id} graph {g} mode {rg.mode.value} N {clip.n_actors}")
        out += [" ".join(repr(float(v)) for v in row) for row in rg.G]
    sys.stdout.write("\n".join(out) + "\n")


def cmd_render(args) -> None:
    ds, m, cfg = _load(args)
    clips = ds.clips if args.clip is None else [c for c in ds.clips if c.clip_id == args.clip]
    if not clips:
        raise DataError(f"no clip {args.clip!r} in {args.data}")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        svg = render_svg(clip, predict(clip, m, cfg), ds.action_names, ds.activity_names)
        (args.out_dir / f"{clip.clip_id}.svg").write_text(svg)


COMMANDS = dict(synth=cmd_synth, train=cmd_train, eval=cmd_eval, predict=cmd_predict, graph=cmd_graph,
                render=cmd_render)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, ParseError, ShapeError, CheckpointError, TrainingError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(name)s: %(message)s")
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
