#!/usr/bin/env python
"""
L-BF-IS Main Application
Command-line entry point: estimate, convergence, tune-ell, diagnose, sample, oracle
"""

import argparse
import logging
import os
import sys

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from data.run_config import config_from_dict, load_run_config
from lbfis_engine import LBFISEngine
from utils.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# flag dest -> dotted config path
OVERRIDES = {
    'seed': 'seed',
    'problem': 'problem.name',
    'tau': 'mala.tau',
    'burn_in': 'mala.burn_in',
    'iters': 'mala.iters',
    'chains': 'mala.chains',
    'workers': 'workers',
    'output_dir': 'output_dir',
    'method': 'ell.method',
    'grid_min': 'tuning.grid_min',
    'grid_max': 'tuning.grid_max',
    'grid_points': 'tuning.grid_points',
    'pilot_L': 'estimator.L',
    'M': 'estimator.M',
    'N': 'estimator.N',
    'trials': 'estimator.trials',
    'n_joint': 'diagnostics.n_joint',
}


def _z0(value: str):
    if value in ('center', 'prior', 'resample'):
        return value
    try:
        return [float(v) for v in value.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'center', 'prior', 'resample' or comma-separated numbers, got '{value}'")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='run config JSON file')
    common.add_argument('--problem', help='benchmark name (toy, borehole, borehole-low, synthetic1000, beam, heat)')
    common.add_argument('--seed', type=int)
    common.add_argument('--tau', type=float, help='MALA step size')
    common.add_argument('--burn-in', dest='burn_in', type=int)
    common.add_argument('--iters', type=int, help='kept samples per chain')
    common.add_argument('--chains', type=int)
    common.add_argument('--z0', type=_z0, help="'center', 'prior', 'resample' or a comma-separated point")
    common.add_argument('--ell', type=float, help='fixed lengthscale (skips tuning)')
    common.add_argument('--M', type=int, help='normalizer draws')
    common.add_argument('--N', type=int, help='HF evaluations of the estimator')
    common.add_argument('--workers', type=int)
    common.add_argument('--output-dir', dest='output_dir')
    common.add_argument('--reference-dir', dest='reference_dir', default='./reference')

    parser = argparse.ArgumentParser(description='Langevin bi-fidelity importance sampling for failure probabilities')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('estimate', parents=[common], help='one L-BF-IS estimate')
    conv = sub.add_parser('convergence', parents=[common], help='rRMSE study over the N grid')
    conv.add_argument('--trials', type=int)

    tune = sub.add_parser('tune-ell', parents=[common], help='lengthscale sweep')
    tune.add_argument('--method', choices=['one', 'two'])
    tune.add_argument('--grid-min', dest='grid_min', type=float)
    tune.add_argument('--grid-max', dest='grid_max', type=float)
    tune.add_argument('--grid-points', dest='grid_points', type=int)
    tune.add_argument('--pilot-L', dest='pilot_L', type=int)

    diag = sub.add_parser('diagnose', parents=[common], help='overlap probabilities and bounds')
    diag.add_argument('--n-joint', dest='n_joint', type=int)

    sub.add_parser('sample', parents=[common], help='MALA samples of the biasing density')
    oracle = sub.add_parser('oracle', parents=[common], help='freeze a brute-force reference P_f')
    oracle.add_argument('--n', type=int, help='HF Monte Carlo sample size')
    return parser


def resolve_config(args):
    """Run config from --config (or --problem alone) with the CLI flags applied"""
    if args.config:
        cfg = load_run_config(args.config)
    elif args.problem:
        cfg = config_from_dict({'seed': args.seed if args.seed is not None else 0,
                                'problem': {'name': args.problem}})
    else:
        raise ConfigError("give --config or --problem", field='problem')

    for dest, path in OVERRIDES.items():
        cfg.override(path, getattr(args, dest, None))
    if args.z0 is not None:
        cfg.override('mala.z0', args.z0)
    if args.ell is not None:
        cfg.override('ell.value', args.ell)
    return cfg


def _print_files(files):
    print("Generated Files:")
    for name, path in files.items():
        if os.path.exists(path):
            size = os.path.getsize(path) / 1024
            print(f"  ✓ {name:.<30} {path} ({size:.1f} KB)")
        else:
            print(f"  ✗ {name:.<30} {path} (NOT FOUND)")


def _print_result(command: str, result):
    if command == 'estimate':
        est, chains = result['estimate'], result['chains']
        print(f"  • P_f estimate:      {est['value']:.6g}")
        if est['std_error'] is not None:
            print(f"  • Standard error:    {est['std_error']:.3g}")
        print(f"  • N (HF evals):      {est['n_hf']}")
        print(f"  • LF evals:          {est['n_lf']}")
        print(f"  • Lengthscale:       {est['ell']:.4g}")
        print(f"  • Normalizer Z_M:    {est['zhat']:.6g}")
        print(f"  • Acceptance rate:   {chains['mean_acceptance']:.3f}")
        if est['relative_error'] is not None:
            print(f"  • Relative error:    {est['relative_error']:.3%} (reference {est['pf_ref']:.6g})")
    elif command == 'convergence':
        print(f"  • Reference P_f:     {result['pf_ref']:.6g}")
        for row in result['summary']:
            print(f"    {row['method']:<8} N={row['n']:<6} mean={row['mean']:.4g}  rRMSE={row['rrmse']:.3g}")
    elif command == 'tune-ell':
        sweep = result['sweep']
        flag = '  ⚠️ high uncertainty' if sweep['high_uncertainty'] else ''
        print(f"  • l* (approach {sweep['method']}): {sweep['ell_star']:.4g}{flag}")
    elif command == 'diagnose':
        ov = result['overlap']
        print(f"  • P[A_L]={ov['p_AL']:.4g}  P[A_H]={ov['p_AH']:.4g}  P[A_H ∩ A_L^c]={ov['p_AH_and_ALc']:.4g}")
        print(f"  • Overlap case:      {result['overlap_case']}")
        print(f"  • Normalizer bound:  {'satisfied' if result['normalizer']['satisfied'] else 'VIOLATED'}")
    elif command == 'sample':
        print(f"  • Samples:           {result['chains']['n_samples']}")
        print(f"  • Acceptance rate:   {result['chains']['mean_acceptance']:.3f}")
    elif command == 'oracle':
        print(f"  • Reference P_f:     {result['pf']:.6g} ± {result['std_error']:.2g} (n={result['n']})")
        if 'pf_exact' in result:
            print(f"  • Exact P_f:         {result['pf_exact']:.6g}")
        if result['pf'] == 0:
            logger.warning(f"Oracle saw no HF failures in {result['n']} samples; rRMSE against it is undefined")
            print(f"  ⚠️  No HF failures in {result['n']} samples: this reference cannot score rRMSE")


def main(argv=None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)

    print("\n" + "=" * 90)
    print("  L-BF-IS - Langevin Bi-Fidelity Importance Sampling")
    print(f"  Command: {args.command}")
    print("=" * 90 + "\n")

    try:
        cfg = resolve_config(args)
        engine = LBFISEngine(cfg, reference_dir=args.reference_dir)
        runners = {
            'estimate': engine.run_estimate,
            'convergence': engine.run_convergence,
            'tune-ell': engine.run_tune,
            'diagnose': engine.run_diagnose,
            'sample': engine.run_sample,
            'oracle': lambda: engine.run_oracle(args.n),
        }
        print(f"🚀 Running {args.command} on '{cfg.problem_name}'...")
        result = runners[args.command]()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"\n❌ Configuration error: {e}\n")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        print(f"\n❌ Numerical failure: {e}\n")
        return EXIT_NUMERICAL

    print("   ✓ Done\n")
    _print_result(args.command, result)
    print("\n" + "=" * 90)
    _print_files(result['files'])
    print("=" * 90 + "\n")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
