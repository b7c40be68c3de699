'''
Command-line front end.

    python -m rock_classifier ingest SPECTRA_DIR --out data.rds
    python -m rock_classifier synth --out corpus.rds
    python -m rock_classifier train corpus.rds --out model.rnn
    python -m rock_classifier classify --checkpoint model.rnn --samples DIR
    python -m rock_classifier evaluate --golden
    python -m rock_classifier report results.jsonl

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
'''

#### IMPORTS ####
import argparse
import dataclasses
import json
import logging
import os
import re
import sys

import pandas as pd

from rock_classifier import __version__, evaluation, knowledge, neural
from rock_classifier import pipeline, spectra, storage, synthgen
from rock_classifier.config import config_hash, get_filepath, load_config
from rock_classifier.exceptions import (DataError, InvariantViolation,
                                        RockClassifierError)


logger = logging.getLogger(__name__)

DEFAULT_SPECS_FILE = 'data/synthetic_minerals.csv'
LOG_FORMAT = '%(levelname)s %(name)s - %(message)s'

EXIT_OK = 0
EXIT_USAGE = 1


class ArgumentParser(argparse.ArgumentParser):
    '''argparse parser whose usage errors exit with code 1.'''

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


#### HELPERS ####
def resolve_config(args):
    '''Config file plus any command-line overrides.'''
    overrides = {'seed': args.seed, 'n_jobs': args.n_jobs}
    overrides.update(getattr(args, 'overrides', {}) or {})

    return load_config(args.config, overrides)


def read_kb(config):
    if config.kb_path:
        return knowledge.load_knowledge_base(config.kb_path)
    return knowledge.default_knowledge_base()


def read_specs(config):
    path = config.corpus.specs_path or get_filepath(DEFAULT_SPECS_FILE)
    return synthgen.read_mineral_specs(path)


def write_table(table, filepath, config):
    '''Writes a CSV report stamped with the config hash and seed.'''
    table = table.copy()
    table['config_hash'] = config_hash(config)
    table['seed'] = config.seed
    table.to_csv(filepath, index=False, lineterminator='\n')
    logger.info('Wrote %s', filepath)


def write_json(data, filepath, config):
    data = dict(data, config_hash=config_hash(config), seed=config.seed,
                format_version=1)
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info('Wrote %s', filepath)


def read_label_samples(filepath):
    '''
    One sample per non-empty line of a labels file.

    Species are separated by commas, semicolons or whitespace; lines
    starting with # are ignored.
    '''
    base = os.path.splitext(os.path.basename(filepath))[0]
    samples = []
    with open(filepath, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            labels = [t for t in re.split(r'[,;\s]+', line) if t]
            samples.append(pipeline.SampleLabels(labels,
                                                 f'{base}:{line_no}'))

    return samples


def read_spectral_samples(directory):
    '''Each subdirectory is a sample; without any, the directory is one.'''
    subdirs = sorted(d for d in os.listdir(directory)
                     if not d.startswith('.')
                     and os.path.isdir(os.path.join(directory, d)))
    if not subdirs:
        return [pipeline.load_sample(directory)]

    return [pipeline.load_sample(os.path.join(directory, d), d)
            for d in subdirs]


#### COMMANDS ####
def cmd_ingest(args):
    '''Loads a spectrum directory into a dataset file.'''
    config = resolve_config(args)
    dataset, report = spectra.load_dataset(args.directory,
                                           list(config.class_names),
                                           config.grid, config.n_jobs)
    extra = {'skipped': dict(sorted(report.skipped.items())),
             'failures': [list(f) for f in report.failures]}
    storage.save_dataset(dataset, args.out, config_hash(config), config.seed,
                         extra)

    print(f'loaded: {report.loaded}')
    print(f'skipped: {sum(report.skipped.values())}')
    print(f'failed: {len(report.failures)}')
    if args.report:
        write_table(report.to_frame(), args.report, config)

    return EXIT_OK


def cmd_synth(args):
    '''Writes a synthetic corpus, or expands an existing dataset.'''
    config = resolve_config(args)

    if args.augment:
        dataset, _ = storage.load_dataset_file(args.augment)
        expanded, manifest = synthgen.expand_dataset(dataset, config.augment)
        storage.save_dataset(expanded, args.out, config_hash(config),
                             config.seed)
        print(f'expanded {len(dataset)} -> {len(expanded)} spectra')
        if args.manifest:
            write_table(manifest, args.manifest, config)
        return EXIT_OK

    specs = read_specs(config)
    dataset = synthgen.make_synthetic_corpus(specs, config.corpus.per_class,
                                             config.grid,
                                             config.corpus.noise_sigma,
                                             config.seed)
    storage.save_dataset(dataset, args.out, config_hash(config), config.seed)
    print(f'synthesized {len(dataset)} spectra of '
          f'{len(dataset.class_names)} minerals')

    return EXIT_OK


def cmd_train(args):
    '''Trains a CNN (optionally uncertainty-aware) or the MLP baseline.'''
    config = resolve_config(args)
    dataset, _ = storage.load_dataset_file(args.dataset)

    if args.model == 'mlp':
        model = neural.train_mlp(dataset, config.mlp.hidden_layers,
                                 config.train, config.mlp.dropout_rate)
    else:
        cnn_config = dataclasses.replace(
            config.cnn, num_classes=len(dataset.class_names),
            input_length=dataset.grid.num_points,
            uncertainty=args.uncertainty)
        model = neural.train(dataset, cnn_config, config.train)

    storage.save_checkpoint(model, args.out, dataset.grid,
                            config_hash(config), config.seed)
    if args.history:
        write_table(pd.DataFrame(model.history), args.history, config)

    best = model.history[model.best_epoch - 1]
    print(f'best epoch {model.best_epoch} of {len(model.history)}, '
          f'validation accuracy {best["val_accuracy"]:.4f}')

    return EXIT_OK


def cmd_classify(args):
    '''Classifies rock samples from spectra or from species label lists.'''
    config = resolve_config(args)
    kb = read_kb(config)

    if args.labels:
        samples = read_label_samples(args.labels)
        results, errors = pipeline.classify_batch(
            samples, kb, mode='oracle-labels', n_jobs=config.n_jobs)
    else:
        model, header = storage.load_checkpoint(args.checkpoint)
        grid = spectra.GridSpec(**header['grid'])
        samples = read_spectral_samples(args.samples)
        results, errors = pipeline.classify_batch(
            samples, kb, model, args.mode, grid, config.train,
            config.min_points, config.n_jobs)

    for result in results:
        c = result.classification
        print(f'{result.sample_id}: {result.label} (w_max {c.w_max:.2f}, '
              f'margin {c.margin:.2f})')
    for error in errors:
        print(f'{error["sample_id"]}: error {error["error"]}')

    if args.out:
        pipeline.write_records(results, errors, args.out, config_hash(config),
                               config.seed)

    if errors and not results:
        return DataError.exit_code
    return EXIT_OK


def _print_metrics(report):
    print(f'accuracy {evaluation.format_percent(report.accuracy)}')
    for name in report.precision:
        f1 = report.f1[name]
        f1 = 'undefined' if f1 is None else f'{f1:.2f}'
        print(f'  {name}: precision '
              f'{evaluation.format_percent(report.precision[name])}, recall '
              f'{evaluation.format_percent(report.recall[name])}, f1 {f1}')


def cmd_evaluate(args):
    '''Golden suite, cross-validation and integrated evaluation reports.'''
    config = resolve_config(args)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)

    def out(name):
        return os.path.join(args.out_dir, name) if args.out_dir else None

    kb = read_kb(config)

    if args.golden:
        suite = evaluation.run_golden_suite(kb)
        print(suite.cases[['case_id', 'appendix_result', 'oracle_expected',
                           'label', 'oracle_match',
                           'appendix_agreement']].to_string(index=False))
        print(suite.summary())
        if suite.divergent:
            print(f'divergent from expert result: {suite.divergent}')
        _print_metrics(suite.metrics)
        if args.out_dir:
            write_table(suite.cases, out('golden_cases.csv'), config)
            write_table(evaluation.confusion_table(suite.confusion),
                        out('golden_confusion.csv'), config)
            write_json({'summary': suite.summary(),
                        'oracle_matches': suite.oracle_matches,
                        'appendix_agreements': suite.appendix_agreements,
                        'metrics': suite.metrics.to_dict()},
                       out('golden_report.json'), config)
        if suite.oracle_matches != suite.total:
            raise InvariantViolation(f'golden suite: {suite.summary()}')

    if args.cv:
        dataset, _ = storage.load_dataset_file(args.cv)
        augment = config.augment if args.augment else None
        cv_results = []
        for kind in args.models.split(','):
            result = evaluation.cross_validate(dataset, kind.strip(), config,
                                               args.k, augment=augment,
                                               n_jobs=config.n_jobs)
            cv_results.append(result)
            stderr = 'n/a' if result.stderr is None else \
                f'{result.stderr:.4f}'
            mean = 'n/a' if result.mean_accuracy is None else \
                f'{result.mean_accuracy:.4f}'
            print(f'{result.model_kind}: {args.k}-fold accuracy {mean} '
                  f'± {stderr}')
            if args.out_dir:
                write_table(evaluation.confusion_table(result.confusion),
                            out(f'cv_confusion_{result.model_kind}.csv'),
                            config)
        if args.out_dir:
            write_table(evaluation.accuracy_bar_table(cv_results),
                        out('cv_accuracy.csv'), config)
            write_json({'results': [r.to_dict() for r in cv_results]},
                       out('cv_report.json'), config)

    if args.integrated:
        model, header = storage.load_checkpoint(args.integrated)
        grid = spectra.GridSpec(**header['grid'])
        table, cm, report = evaluation.evaluate_integrated(
            model, kb, read_specs(config), grid, config.train, args.mode,
            config.corpus.noise_sigma, config.seed,
            min_points=config.min_points)
        print(table.to_string(index=False))
        _print_metrics(report)
        if args.out_dir:
            write_table(table, out(f'integrated_{args.mode}.csv'), config)
            write_table(evaluation.confusion_table(cm),
                        out(f'integrated_confusion_{args.mode}.csv'), config)

    return EXIT_OK


def cmd_report(args):
    '''Summarises a classification record stream.'''
    records = pipeline.read_records(args.records)
    results = [r for r in records if 'label' in r]
    errors = [r for r in records if 'error' in r]

    table = pd.DataFrame([{'sample_id': r['sample_id'], 'mode': r['mode'],
                           'label': r['label'], 'w_max': r['w_max'],
                           'margin': r['margin'],
                           'fired_exclusions': ';'.join(
                               e['species'] for e in r['fired_exclusions'])}
                          for r in results],
                         columns=['sample_id', 'mode', 'label', 'w_max',
                                  'margin', 'fired_exclusions'])
    if not table.empty:
        print(table.to_string(index=False))
        print(table['label'].value_counts().sort_index().to_string())
    print(f'{len(results)} classified, {len(errors)} failed')

    if args.out:
        config = resolve_config(args)
        write_table(table, args.out, config)

    return EXIT_OK


#### PARSER ####
def _add_common(parser):
    parser.add_argument('--config', help='JSON run config file')
    parser.add_argument('--seed', type=int, help='overrides the config seed')
    parser.add_argument('--n-jobs', type=int, dest='n_jobs',
                        help='parallel workers')
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])


def build_parser():
    parser = ArgumentParser(prog='rock_classifier',
                            description='Raman mineral identification and '
                                        'rule-based rock classification.')
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True,
                                parser_class=ArgumentParser)

    p = sub.add_parser('ingest', help='load a spectrum directory')
    p.add_argument('directory')
    p.add_argument('--out', required=True, help='dataset file to write')
    p.add_argument('--report', help='CSV of skipped and failed files')
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser('synth', help='synthetic corpus or augmentation')
    p.add_argument('--out', required=True, help='dataset file to write')
    p.add_argument('--augment', metavar='DATASET',
                   help='expand this dataset instead of synthesizing one')
    p.add_argument('--manifest', help='CSV of per-class augmentation counts')
    p.add_argument('--per-class', type=int, dest='per_class')
    p.add_argument('--noise', type=float, dest='noise_sigma')
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('train', help='train a mineral classifier')
    p.add_argument('dataset')
    p.add_argument('--out', required=True, help='checkpoint file to write')
    p.add_argument('--model', choices=['cnn', 'mlp'], default='cnn')
    p.add_argument('--uncertainty', action='store_true',
                   help='train with dropout kept for Monte Carlo inference')
    p.add_argument('--epochs', type=int, dest='max_epochs')
    p.add_argument('--history', help='CSV of per-epoch losses')
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('classify', help='classify rock samples')
    p.add_argument('--checkpoint')
    p.add_argument('--samples', help='sample directory (or directory of '
                                     'sample directories)')
    p.add_argument('--labels', help='file of species lists: each non-empty '
                   'line is one whole sample, species separated by commas, '
                   'semicolons or spaces; # starts a comment line')
    p.add_argument('--mode', choices=['base', 'uncertainty-aware'],
                   default='base')
    p.add_argument('--min-points', type=int, dest='min_points')
    p.add_argument('--out', help='JSON-lines record file')
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser('evaluate', help='evaluation reports')
    p.add_argument('--golden', action='store_true',
                   help='run the expert composition suite')
    p.add_argument('--cv', metavar='DATASET',
                   help='cross-validate on this dataset')
    p.add_argument('--k', type=int, default=5)
    p.add_argument('--models', default='cnn,cnn-uncertainty,mlp')
    p.add_argument('--augment', action='store_true',
                   help='expand training folds')
    p.add_argument('--integrated', metavar='CHECKPOINT',
                   help='run the expert compositions through this model')
    p.add_argument('--mode', choices=['base', 'uncertainty-aware'],
                   default='base')
    p.add_argument('--epochs', type=int, dest='max_epochs')
    p.add_argument('--out-dir', dest='out_dir')
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('report', help='summarise classification records')
    p.add_argument('records')
    p.add_argument('--out', help='CSV summary')
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


OVERRIDE_FLAGS = {'per_class': 'corpus.per_class',
                  'noise_sigma': 'corpus.noise_sigma',
                  'max_epochs': 'train.max_epochs',
                  'min_points': 'min_points'}


def _check_usage(args):
    '''Flag combinations argparse cannot express; returns the complaint.'''
    if args.command == 'classify' and not args.labels and \
            not (args.checkpoint and args.samples):
        return 'classify: --checkpoint and --samples are needed without ' \
            '--labels'
    if args.command == 'evaluate' and \
            not (args.golden or args.cv or args.integrated):
        return 'evaluate: choose --golden, --cv DATASET or --integrated ' \
            'CHECKPOINT'
    return None


#### MAIN ####
def main(argv=None):
    '''Runs the command line; returns the exit code.'''
    parser = build_parser()
    args = parser.parse_args(argv)
    complaint = _check_usage(args)
    if complaint:
        parser.error(complaint)

    logging.basicConfig(level=args.log_level, format=LOG_FORMAT,
                        stream=sys.stderr)
    args.overrides = {dotted: getattr(args, name)
                      for name, dotted in OVERRIDE_FLAGS.items()
                      if getattr(args, name, None) is not None}

    try:
        return args.func(args)
    except RockClassifierError as e:
        logger.error('%s: %s', args.command, e)
        return e.exit_code

