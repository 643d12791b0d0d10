"""
Result summaries, significance matrices and report files
"""
import json
import logging
import os
from datetime import datetime
from typing import Dict

import numpy as np
import pandas as pd

from models.experiment import TOY_COLUMNS, ResultTable
from services.metrics import DEFAULT_PERMUTATIONS, paired_permutation_test

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.json"
QUANTILES_FILE = "error_quantiles.csv"


def summarize(table: ResultTable) -> pd.DataFrame:
    """Mean, median and sample standard deviation of test accuracy per method"""
    frame = table.to_frame()
    grouped = frame.groupby('method', sort=False)['test_acc']
    summary = pd.DataFrame({
        'mean': grouped.mean(),
        'median': grouped.median(),
        'std': grouped.std(ddof=1),
        'n': grouped.size(),
    })
    summary.index.name = 'method'
    return summary


def _paired_accuracies(table: ResultTable) -> pd.DataFrame:
    frame = table.to_frame()
    keys = ['subject', 'repetition'] + (TOY_COLUMNS if table.toy else [])
    return frame.pivot_table(index=keys, columns='method', values='test_acc', aggfunc='first', sort=False)


def permutation_matrix(table: ResultTable, n_permutations: int = DEFAULT_PERMUTATIONS, seed=0) -> pd.DataFrame:
    """
    One-sided paired p-values that the row method beats the column method,
    paired over subjects (and repetitions/scenarios); the diagonal is NaN.
    """
    paired = _paired_accuracies(table)
    methods = list(paired.columns)
    matrix = pd.DataFrame(np.nan, index=methods, columns=methods)
    for a in methods:
        for b in methods:
            if a == b:
                continue
            both = paired[[a, b]].dropna()
            if both.empty:
                continue
            matrix.loc[a, b] = paired_permutation_test(both[a], both[b], n_permutations, seed).p_value
    return matrix


def error_quantiles(table: ResultTable) -> pd.DataFrame:
    """Per (scenario, eta, method): min, q25, median, q75 and max of the test error"""
    if not table.toy:
        raise ValueError("error quantiles need a toy result table with perturb and eta columns")
    frame = table.to_frame()
    frame['error'] = 1.0 - frame['test_acc']
    grouped = frame.groupby(['perturb', 'eta', 'method'], sort=False)['error']
    out = pd.DataFrame({
        'min': grouped.min(),
        'q25': grouped.quantile(0.25),
        'median': grouped.median(),
        'q75': grouped.quantile(0.75),
        'max': grouped.max(),
    }).reset_index().rename(columns={'perturb': 'scenario'})
    return out


def emit_report(table: ResultTable, out_dir: str, n_permutations: int = DEFAULT_PERMUTATIONS,
                seed=0) -> Dict[str, str]:
    """Write results.csv, summary.json and, for toy tables, error_quantiles.csv"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {'results': os.path.join(out_dir, RESULTS_FILE), 'summary': os.path.join(out_dir, SUMMARY_FILE)}
    table.to_csv(paths['results'])

    summary = summarize(table)
    p_values = permutation_matrix(table, n_permutations, seed)
    document = {
        'created_at': datetime.now().isoformat(),
        'rows': len(table),
        'methods': {
            method: {k: (None if pd.isna(v) else float(v)) for k, v in row.items()}
            for method, row in summary.to_dict('index').items()
        },
        'p_values': {
            a: {b: float(p) for b, p in row.items() if not pd.isna(p)}
            for a, row in p_values.to_dict('index').items()
        },
    }
    with open(paths['summary'], 'w') as f:
        json.dump(document, f, indent=2)

    if table.toy:
        paths['quantiles'] = os.path.join(out_dir, QUANTILES_FILE)
        error_quantiles(table).to_csv(paths['quantiles'], index=False)
    logger.info(f"Report written to {out_dir}")
    return paths
