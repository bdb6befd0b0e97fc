# ========================================
# File: app.py
"""Command-line entry point for the multi-cue anti-spoofing pipeline"""
import os
import sys
import json
import logging
import argparse
import dataclasses
from typing import Callable, Dict, Optional, Sequence

from config import SPOOF_CUES
from corpus import CorpusIndex, ManifestError, load_manifest, load_sample, write_manifest
from cue_sources import build_providers
from cue_synthesis import MissingProviderError, build_moire_pairs, write_synthetic_cues
from evaluator import evaluate_model, run_ablation_sweep, run_protocol, split_source
from megc_net import build_megc_net, model_summary
from moire_estimator import (
    build_moire_net, extract_moire_map, extract_residual_map, load_moire_net,
    pretrain_backbone, save_moire_net, train_moire_net,
)
from trainer import NonFiniteLossError, SupervisionSource, load_megc_checkpoint, resume, train_megc
from utils.checkpoint import CheckpointMismatchError
from utils.image_io import cue_filename, write_cue_map
from utils.run_config import ConfigError, RunConfig, load_run_config, prepare_run_dir
from views.report_view import format_report_table
from views.summary_view import format_model_summary

logger = logging.getLogger(__name__)

COMMANDS = ['synth-cues', 'train-moire', 'extract-moire', 'train', 'eval', 'ablate', 'summarize']
DROP_CHOICES = ['depth'] + SPOOF_CUES

# (exception types, category, exit code), first match wins
ERROR_CATEGORIES = [
    ((ConfigError,), 'config', 3),
    ((ManifestError, FileNotFoundError), 'data', 4),
    ((MissingProviderError,), 'supervision', 5),
    ((CheckpointMismatchError,), 'checkpoint', 6),
    ((NonFiniteLossError,), 'training', 7),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='megc', description='Multi-cue face anti-spoofing pipeline')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--config', required=True, help='JSON run config')
        p.add_argument('--seed', type=int, default=None, help='override the config seed')
        p.add_argument('--desk-scale', action='store_true', help='use the desk-scale backbone widths')
        p.add_argument('--debug', action='store_true', help='debug logging')
        return p

    add('synth-cues', 'write depth maps and boundary composites plus an updated manifest')
    add('train-moire', 'train the moire-map estimator on synthetic moire pairs')
    add('extract-moire', 'label replay spoofs with the trained moire estimator')
    p = add('train', 'train the multi-cue classifier')
    p.add_argument('--drop', action='append', choices=DROP_CHOICES, default=[], help='remove a cue branch')
    p.add_argument('--resume', default=None, help='checkpoint to continue from')
    p = add('eval', 'dev threshold and test HTER (trains first when no checkpoint is given)')
    p.add_argument('--drop', action='append', choices=DROP_CHOICES, default=[], help='remove a cue branch')
    p.add_argument('--checkpoint', default=None, help='trained classifier checkpoint')
    p.add_argument('--dump-maps', action='store_true', help='write predicted map panels')
    p = add('ablate', 'cue ablation runs (every single-cue drop when --drop is absent)')
    p.add_argument('--drop', action='append', choices=DROP_CHOICES, default=[], help='cue to remove')
    p.add_argument('--dump-maps', action='store_true', help='write predicted map panels')
    p = add('summarize', 'print per-stage shapes and parameter counts')
    p.add_argument('--drop', action='append', choices=DROP_CHOICES, default=[], help='remove a cue branch')
    p.add_argument('--checkpoint', default=None, help='summarize the model stored in a checkpoint')
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Load the config file and apply command-line overrides"""
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    train = cfg.train
    if args.desk_scale:
        train = dataclasses.replace(train, desk_scale=True)
    drops = sorted(set(getattr(args, 'drop', None) or []))
    if 'depth' in drops:
        raise ConfigError("the depth cue cannot be disabled")
    if drops and args.command != 'ablate':
        train = dataclasses.replace(train, disabled_cues=drops)
    ev = cfg.eval
    if getattr(args, 'dump_maps', False):
        ev = dataclasses.replace(ev, dump_maps=True)
    if getattr(args, 'checkpoint', None):
        ev = dataclasses.replace(ev, checkpoint=os.path.abspath(args.checkpoint))
    cfg = dataclasses.replace(cfg, train=train, eval=ev)
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _require(value: Optional[str], key: str) -> str:
    if not value:
        raise ConfigError(f"{key} is required for this command")
    return value


def _train_index(cfg: RunConfig) -> CorpusIndex:
    return load_manifest(_require(cfg.data.train_manifest, 'data.train_manifest'), split='train')


def _needs_moire_net(cfg: RunConfig, index: CorpusIndex) -> bool:
    if cfg.cues.moire not in ('moire_net', 'residual') or 'moire' in cfg.train.disabled_cues:
        return False
    return any(r.spoof_type == 'replay' or r.source_spoof_type == 'replay' for r in index.samples)


def _providers(cfg: RunConfig, index: CorpusIndex) -> Dict:
    net = None
    if _needs_moire_net(cfg, index) and cfg.cues.moire_checkpoint:
        net = load_moire_net(cfg.cues.moire_checkpoint)
    return build_providers(cfg.cues, net)


def cmd_synth_cues(args, cfg: RunConfig) -> int:
    index = _train_index(cfg)
    records = [r for r in index.samples if r.spoof_type != 'composite']
    samples = [load_sample(r) for r in records]
    providers = build_providers(cfg.cues)
    run_dir = prepare_run_dir('synth-cues', cfg)
    updated = write_synthetic_cues(records, samples, run_dir, providers['depth'],
                                   cfg.cues.composites_per_spoof, cfg.seed)
    manifest_path = os.path.join(run_dir, 'manifest.cues.jsonl')
    write_manifest(manifest_path, updated)
    print(manifest_path)
    return 0


def cmd_train_moire(args, cfg: RunConfig) -> int:
    index = _train_index(cfg)
    live = [load_sample(r) for r in index.live]
    pairs = build_moire_pairs(live, cfg.cues.pairs_per_live, cfg.cues.moire_alpha, cfg.moire_train.seed)
    net = build_moire_net(cfg.moire_net)
    if cfg.moire_net.freeze_backbone:
        pretrain_backbone(net, pairs, cfg.moire_train, freeze=True)
    net, history = train_moire_net(net, pairs, cfg.moire_train)
    run_dir = prepare_run_dir('train-moire', cfg)
    with open(os.path.join(run_dir, 'moire_history.jsonl'), 'w', encoding='utf-8') as fh:
        for step, loss in enumerate(history, start=1):
            fh.write(json.dumps({'step': step, 'mse': loss}) + '\n')
    path = save_moire_net(os.path.join(run_dir, 'moire.pt'), net, history)
    print(path)
    return 0


def cmd_extract_moire(args, cfg: RunConfig) -> int:
    index = _train_index(cfg)
    net = load_moire_net(_require(cfg.cues.moire_checkpoint, 'cues.moire_checkpoint'))
    extract = extract_residual_map if cfg.cues.moire == 'residual' else extract_moire_map
    run_dir = prepare_run_dir('extract-moire', cfg)
    updated = []
    written = 0
    for record in index.samples:
        if record.spoof_type == 'replay' or record.source_spoof_type == 'replay':
            path = os.path.join(run_dir, 'cues', cue_filename(record.sample_id, 'moire'))
            write_cue_map(path, extract(net, load_sample(record).image), 'moire')
            cues = dict(record.cues)
            cues['moire'] = path
            record = dataclasses.replace(record, cues=tuple(sorted(cues.items())))
            written += 1
        updated.append(record)
    manifest_path = os.path.join(run_dir, 'manifest.moire.jsonl')
    write_manifest(manifest_path, updated)
    logger.info("Extracted %d moire maps", written)
    print(manifest_path)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    index = _train_index(cfg)
    supervision = SupervisionSource.from_config(_providers(cfg, index), cfg.cues, cfg.train)
    run_dir = prepare_run_dir('train', cfg)
    kwargs = dict(online_composites=cfg.cues.online_composites)
    if args.resume:
        result = resume(args.resume, index, supervision, cfg.train, run_dir, **kwargs)
    else:
        result = train_megc(index, supervision, cfg.train, run_dir, **kwargs)
    last = result.history[-1] if result.history else {}
    logger.info("Finished at step %d: loss %.4f, accuracy %.3f",
                result.steps, last.get('l_overall', float('nan')), last.get('accuracy', float('nan')))
    print(result.checkpoint_path)
    return 0


def _eval_indices(cfg: RunConfig):
    train_index = _train_index(cfg)
    test_index = load_manifest(_require(cfg.data.test_manifest, 'data.test_manifest'), split='test')
    dev_index = load_manifest(cfg.data.dev_manifest, split='dev') if cfg.data.dev_manifest else None
    return train_index, dev_index, test_index


def cmd_eval(args, cfg: RunConfig) -> int:
    train_index, dev_index, test_index = _eval_indices(cfg)
    run_dir = prepare_run_dir('eval', cfg)
    if cfg.eval.checkpoint:
        model, _ = load_megc_checkpoint(cfg.eval.checkpoint)
        if dev_index is None:
            _, dev_index = split_source(train_index, cfg.data.dev_fraction)
        evaluate_model(model, dev_index, test_index, cfg, run_dir,
                       manifest={'checkpoint': cfg.eval.checkpoint})
    else:
        run_protocol(train_index, test_index, cfg, _providers(cfg, train_index), run_dir,
                     ablation=cfg.train.disabled_cues, dev_index=dev_index)
    with open(os.path.join(run_dir, 'report.txt'), 'r', encoding='utf-8') as fh:
        print(fh.read().rstrip())
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    train_index, dev_index, test_index = _eval_indices(cfg)
    providers = _providers(cfg, train_index)
    run_dir = prepare_run_dir('ablate', cfg, suffix='-'.join(sorted(set(args.drop))))
    if args.drop:
        run_protocol(train_index, test_index, cfg, providers, run_dir,
                     ablation=args.drop, dev_index=dev_index)
        with open(os.path.join(run_dir, 'report.txt'), 'r', encoding='utf-8') as fh:
            print(fh.read().rstrip())
    else:
        table = run_ablation_sweep(train_index, test_index, cfg, providers, run_dir, dev_index=dev_index)
        print(format_report_table(table))
    return 0


def cmd_summarize(args, cfg: RunConfig) -> int:
    if cfg.eval.checkpoint:
        model, _ = load_megc_checkpoint(cfg.eval.checkpoint)
        title = f"Model summary ({os.path.basename(cfg.eval.checkpoint)})"
    else:
        model = build_megc_net(cfg.train.desk_scale, cfg.train.disabled_cues)
        scale = 'desk scale' if cfg.train.desk_scale else 'full scale'
        dropped = ', '.join(cfg.train.disabled_cues) or 'none'
        title = f"Model summary ({scale}, removed cues: {dropped})"
    print(format_model_summary(model_summary(model), title))
    return 0


HANDLERS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    'synth-cues': cmd_synth_cues,
    'train-moire': cmd_train_moire,
    'extract-moire': cmd_extract_moire,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'summarize': cmd_summarize,
}


def error_category(exc: BaseException):
    for types, category, code in ERROR_CATEGORIES:
        if isinstance(exc, types):
            return category, code
    return 'internal', 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one command and map failures to exit codes

    Returns:
        0 on success, 2 usage, 3 config, 4 data, 5 supervision,
        6 checkpoint, 7 training, 1 anything else
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0

    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
    )
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](args, cfg)
    except Exception as e:
        category, code = error_category(e)
        if code == 1:
            logger.exception("Unexpected failure in %s", args.command)
        print(f"error: {category}: {e}", file=sys.stderr)
        return code


if __name__ == '__main__':
    sys.exit(main())
