'''
Plots fitted R_t and the forecast fan of one target from the output directory of
`respicast forecast`. Needs the optional docs dependencies (`poetry install --with docs`).

    python docs/plot_forecast.py out/ SARSCoV2/admissions
'''
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd


def plot(directory: Path, target: str) -> None:
    fitted = pd.read_csv(directory / 'rt.csv', parse_dates=['date'])
    quantiles = pd.read_csv(directory / 'forecast_quantiles.csv', parse_dates=['date'])
    quantiles = quantiles[quantiles['target'] == target]

    fig, (ax_r, ax_f) = plt.subplots(2, 1, figsize=(9, 7), sharex=True)

    r = fitted[fitted['quantity'] == 'R'].pivot(index='date', columns='quantile', values='value')
    ax_r.fill_between(r.index, r[0.025], r[0.975], alpha=0.3, label='95%')
    ax_r.fill_between(r.index, r[0.25], r[0.75], alpha=0.5, label='50%')
    ax_r.plot(r.index, r[0.5], label='median')
    ax_r.axhline(1.0, color='black', lw=0.8)
    ax_r.set_ylabel('R_t')
    ax_r.legend()

    stream = target.split('/')[1]
    observed = fitted[fitted['quantity'] == f'{stream}_predicted'].pivot(index='date', columns='quantile', values='value')
    q = quantiles.pivot(index='date', columns='quantile', values='value')
    ax_f.plot(observed.index, observed[0.5], color='grey', label='fitted median')
    ax_f.fill_between(q.index, q[0.025], q[0.975], alpha=0.3, label='95%')
    ax_f.fill_between(q.index, q[0.25], q[0.75], alpha=0.5, label='50%')
    ax_f.plot(q.index, q[0.5], label='forecast median')
    ax_f.set_ylabel(stream)
    ax_f.legend()

    fig.tight_layout()
    fig.savefig(directory / f'{target.replace("/", "_")}.png', dpi=120)


if __name__ == '__main__':
    plot(Path(sys.argv[1]), sys.argv[2])
