"""
Multi-subject CSP experiments - command-line entry point
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pandas as pd

from models.experiment import ExperimentConfig, MethodSpec, ResultTable, default_methods
from models.toy_spec import PERTURB_TARGETS, PopulationSpec, ToySpec
from models.trial_set import find_subject
from services.experiment_runner import export_patterns, run_real_experiment, run_toy_experiment
from services.metrics import divergence_report, noise_overlap_analysis, paired_permutation_test, \
    subject_similarity_report
from services.report import emit_report, summarize
from services.toy_generator import gen_population
from utils.config import load_method_grids, load_toy_defaults
from utils.database import load_dataset, save_dataset

logger = logging.getLogger(__name__)


def _methods(names: Optional[str]) -> List[MethodSpec]:
    if not names:
        return default_methods()
    grids = load_method_grids()
    return [MethodSpec.from_definition(n.strip(), None, grids) for n in names.split(",") if n.strip()]


def cmd_gen_toy(args) -> int:
    spec_dict = dict(load_toy_defaults()["toy_spec"])
    if args.trials:
        spec_dict["trials_per_class"] = args.trials
    toy_spec = ToySpec.from_dict(spec_dict)
    pop = PopulationSpec(args.subjects, args.eta, args.perturb, args.seed)
    records, _ = gen_population(toy_spec, pop)
    save_dataset(records, args.out)
    print(f"✅ Saved {len(records)} toy subjects to {args.out}")
    return 0


def cmd_run_toy(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    if config.population is None:
        print("❌ Error: config has no 'population' section")
        return 1
    if args.reps is not None:
        config.repetitions = args.reps
    out = args.out or config.output
    table = run_toy_experiment(config, progress=lambda msg: print(f"  {msg}"))
    paths = emit_report(table, out, config.n_permutations, config.seed)
    print(summarize(table).to_string())
    print(f"✅ Results written to {paths['results']}")
    return 0


def cmd_run(args) -> int:
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig(dataset=args.data)
    if args.data:
        config.dataset = args.data
    if args.methods:
        config.methods = _methods(args.methods)
    out = args.out or config.output
    table = run_real_experiment(config, progress=lambda msg: print(f"  {msg}"))
    paths = emit_report(table, out, config.n_permutations, config.seed)
    print(summarize(table).to_string())
    print(f"✅ Results written to {paths['results']}")
    return 0


def cmd_similarity(args) -> int:
    records = load_dataset(args.data)
    report = subject_similarity_report(records, args.kind, args.dim)
    print(report.to_frame().round(3).to_string())
    print(f"Mean {args.kind} similarity (d={report.dimension}): {report.mean:.3f}")
    return 0


def cmd_permtest(args) -> int:
    frame = ResultTable.from_csv(args.results).to_frame()
    keys = [c for c in ("subject", "repetition", "perturb", "eta") if c in frame.columns]
    paired = frame.pivot_table(index=keys, columns="method", values="test_acc", aggfunc="first")
    for name in (args.method_a, args.method_b):
        if name not in paired.columns:
            print(f"❌ Error: method '{name}' not found in {args.results}")
            return 1
    both = paired[[args.method_a, args.method_b]].dropna()
    result = paired_permutation_test(both[args.method_a], both[args.method_b], args.permutations, args.seed)
    print(f"{args.method_a} - {args.method_b}: mean difference {result.observed_mean_difference:+.4f}, "
          f"p = {result.p_value:.4f} ({result.n_permutations} permutations, "
          f"{'exhaustive' if result.exhaustive else 'sampled'})")
    return 0


def cmd_export_patterns(args) -> int:
    records = load_dataset(args.data)
    method = MethodSpec.from_definition(args.method, None, load_method_grids())
    patterns = export_patterns(records, method, args.m)
    patterns.to_csv(args.out, index=False)
    print(f"✅ Patterns of {len(records)} subjects written to {args.out}")
    return 0


def cmd_divergence(args) -> int:
    records = load_dataset(args.data)
    print(divergence_report(records).round(4).to_string(index=False))
    return 0


def cmd_noise_analysis(args) -> int:
    records = load_dataset(args.data)
    record = find_subject(records, args.subject) if args.subject else records[0]
    if record is None:
        print(f"❌ Error: subject '{args.subject}' not found")
        return 1
    table = noise_overlap_analysis(record, range(1, args.max_dim + 1), args.m, args.draws, args.seed)
    with pd.option_context('display.width', 120):
        print(table.round(4).to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mscsp", description="Multi-subject CSP transfer experiments")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate a toy population and save it as a dataset")
    p.add_argument("--subjects", type=int, default=5)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--perturb", choices=PERTURB_TARGETS, default="A")
    p.add_argument("--trials", type=int, help="trials per class (default from toy_defaults.json)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("run-toy", help="run a toy sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--reps", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run_toy)

    p = sub.add_parser("run", help="run all methods on a saved dataset")
    p.add_argument("--data")
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("similarity", help="pairwise subspace similarity between subjects")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["discriminative", "nonstationary"], default="discriminative")
    p.add_argument("--dim", type=int)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("permtest", help="paired permutation test between two methods")
    p.add_argument("--results", required=True)
    p.add_argument("--method-a", required=True)
    p.add_argument("--method-b", required=True)
    p.add_argument("--permutations", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("export-patterns", help="write every subject's spatial patterns to CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--method", default="csp")
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_patterns)

    p = sub.add_parser("divergence", help="between-subject and between-session KL divergences")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_divergence)

    p = sub.add_parser("noise-analysis", help="overlap of CSP and non-stationary subspaces vs random subspaces")
    p.add_argument("--data", required=True)
    p.add_argument("--subject")
    p.add_argument("--max-dim", type=int, default=10)
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_noise_analysis)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level))
    try:
        return args.func(args)
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"❌ Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
