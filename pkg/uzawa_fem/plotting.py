"""SVG line charts for cases and studies (render-only; CSVs hold the data)."""
import logging

import matplotlib

matplotlib.use('svg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

# Stable element ids and no timestamp, so identical data gives identical files
matplotlib.rcParams['svg.hashsalt'] = 'minres'
SVG_METADATA = {'Date': None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f"Wrote {path}")


def case_plot(solution, residual, path, title=''):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(12, 4.5))
    ax1.plot(solution['x'], solution['u_exact'], color='black', lw=1, label='exact')
    ax1.plot(solution['x'], solution['u_h'], color='tab:blue', lw=2, label='u_h')
    ax1.set_xlabel('x')
    ax1.set_title('Solution')
    ax1.grid(True)
    ax1.legend()

    ax2.plot(residual['x'], residual['r_n'], color='tab:red', lw=2, label='r_n')
    ax2.plot(residual['x'], residual['residual_expr'], color='tab:green', lw=1, label='-beta r_n\' + gamma r_n')
    ax2.set_xlabel('x')
    ax2.set_title('Residual')
    ax2.grid(True)
    ax2.legend()
    if title:
        fig.suptitle(title)
    _save(fig, path)


def loglog_slope(x, y):
    """Least-squares slope of log(y) against log(x), NaN with < 2 usable points"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    usable = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    if np.count_nonzero(usable) < 2:
        return np.nan
    slope, _ = np.polyfit(np.log(x[usable]), np.log(y[usable]), 1)
    return float(slope)


def convergence_plot(table, path, title=''):
    fig, ax = plt.subplots(figsize=(7, 5))
    for column, color in (
        ('l2_error_u', 'tab:blue'),
        ('residual_expr_error', 'tab:green'),
        ('dual_norm', 'tab:red'),
    ):
        usable = table[(table[column] > 0) & np.isfinite(table[column])]
        if usable.empty:
            continue
        slope = loglog_slope(usable['dofs_u'], usable[column])
        ax.loglog(usable['dofs_u'], usable[column], 'o-', color=color, label=f"{column} (slope {slope:.2f})")
    ax.set_xlabel('dofs of u_h')
    ax.set_ylabel('error')
    ax.grid(True, which='both')
    ax.legend()
    if title:
        ax.set_title(title)
    _save(fig, path)


def demo2d_plot(grid, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))
    nx = grid['x'].nunique()
    ny = grid['y'].nunique()
    shape = (ny, nx)
    extent = (0.0, 1.0, 0.0, 1.0)
    for ax, column, title in ((ax1, 'f', 'Target'), (ax2, 'r', 'Network residual')):
        image = ax.imshow(
            grid[column].to_numpy().reshape(shape), origin='lower', extent=extent, cmap='coolwarm'
        )
        fig.colorbar(image, ax=ax)
        ax.set_title(title)
        ax.set_xlabel('x')
        ax.set_ylabel('y')
    _save(fig, path)
