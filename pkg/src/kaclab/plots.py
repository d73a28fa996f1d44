"""Figure rendering for the CLI report path.

Each experiment gets one PNG per main table, written alongside the CSVs.
The CSV files remain the machine-readable contract; figures are for eyes.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _cols(table, *names):
    idx = [table.header.index(n) for n in names]
    data = np.array([[row[i] for i in idx] for row in table.rows], dtype=float)
    return [data[:, j] for j in range(len(idx))]


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, f"{name}.png")
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def render(command: str, result, out_dir: str):
    """Render the figures for one experiment; returns the written paths."""
    fn = _RENDERERS.get(command)
    if fn is None:
        return []
    tables = {t.name: t for t in result.tables}
    return fn(tables, out_dir)


def _render_simulate(tables, out_dir):
    t, mean, se, pred = _cols(tables["energy"], "t", "mean_energy", "stderr",
                              "predicted")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(t, mean, yerr=3 * se, fmt="o", capsize=3, label="replica mean")
    order = np.argsort(t)
    ax.plot(t[order], pred[order], "k--", label="closed form")
    ax.set_xlabel("t")
    ax.set_ylabel("mean energy")
    ax.legend()
    return [_save(fig, out_dir, "energy")]

def _render_solve(tables, out_dir):
    paths = []
    t, v, dens = _cols(tables["solution"], "t", "v", "density")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    times = np.unique(t)
    show = times[np.linspace(0, len(times) - 1, min(6, len(times))).astype(int)]
    for ts in show:
        sel = t == ts
        ax.plot(v[sel], dens[sel], label=f"t={ts:g}")
    ax.set_xlabel("v")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    paths.append(_save(fig, out_dir, "solution"))

    t, m2, m4 = _cols(tables["moments"], "t", "moment2", "moment4")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(t, m2, label="moment2")
    ax.plot(t, m4, label="moment4")
    ax.set_xlabel("t")
    ax.legend()
    paths.append(_save(fig, out_dir, "moments"))

    t, w2g, bound = _cols(tables["diagnostics"], "t", "w2sq_to_gamma",
                          "contraction_bound")
    if np.any(w2g > 1e-14):
        fig, ax = plt.subplots(figsize=(5.5, 4))
        ax.semilogy(t, np.maximum(w2g, 1e-16), label="w2sq to equilibrium")
        ax.semilogy(t, np.maximum(bound, 1e-16), "k--", label="contraction bound")
        ax.set_xlabel("t")
        ax.legend()
        paths.append(_save(fig, out_dir, "diagnostics"))
    return paths


def _render_contraction(tables, out_dir):
    t, h, se, pred = _cols(tables["contraction"], "t", "h", "stderr",
                           "h0_exp_decay")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(t, h, yerr=3 * se, fmt="o", capsize=3, label="mean h(t)")
    order = np.argsort(t)
    ax.plot(t[order], pred[order], "k--", label="h(0) exp(-mu t/2)")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("squared gap")
    ax.legend()
    return [_save(fig, out_dir, "contraction")]


def _render_chaos(tables, out_dir):
    n, t, w2, se = _cols(tables["chaos"], "N", "t", "chaos_w2sq", "stderr")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for ts in np.unique(t):
        sel = t == ts
        order = np.argsort(n[sel])
        ax.errorbar(n[sel][order], w2[sel][order], yerr=3 * se[sel][order],
                    fmt="o-", capsize=3, label=f"t={ts:g}")
    ref = np.unique(n)
    ax.plot(ref, w2.max() * (ref / ref.min()) ** (-1 / 3), "k:",
            label="slope -1/3")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("E[w2sq(empirical, f_t)]")
    ax.legend(fontsize=8)
    return [_save(fig, out_dir, "chaos")]


def _render_decoupling(tables, out_dir):
    k, n, t, h, se = _cols(tables["decoupling"], "k", "N", "t", "h_dec",
                           "stderr")
    sel = t == t.max()
    x = k[sel] / n[sel]
    y = h[sel]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(x, y, yerr=3 * se[sel], fmt="o", capsize=3)
    pos = x > 0
    if np.any(y[pos] > 0):
        c = float(x[pos] @ y[pos] / (x[pos] @ x[pos]))
        xs = np.linspace(0, x.max() * 1.05, 50)
        ax.plot(xs, c * xs, "k--", label=f"fit C*k/N, C={c:.3g}")
        ax.legend()
    ax.set_xlabel("k/N")
    ax.set_ylabel("h_dec")
    return [_save(fig, out_dir, "decoupling")]


def _render_moments(tables, out_dir):
    table = next(iter(tables.values()))
    data = np.array([[row[0], row[1], row[2]] for row in table.rows],
                    dtype=float)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(data[:, 0], data[:, 1], label=table.header[1])
    ax.plot(data[:, 0], data[:, 2], "k--", label="envelope")
    ax.set_xlabel("t")
    ax.legend()
    return [_save(fig, out_dir, "moment_envelope")]


_RENDERERS = {
    "simulate": _render_simulate,
    "solve": _render_solve,
    "contraction": _render_contraction,
    "chaos-scan": _render_chaos,
    "decoupling": _render_decoupling,
    "moments": _render_moments,
}
